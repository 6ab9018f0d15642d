"""Network, commodity and unit definitions, plus the layered-graph expansion.

Compute-augmented (cloud) scenarios are reduced to pure routing on a layered
graph: stage ``s`` of a node holds traffic that has gone through ``s`` service
functions, and processing is an edge ``(i, s) -> (i, s+1)``.  Every hop,
transmission or processing, takes one slot and one unit of lifetime.
"""
from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Mapping, Sequence

import numpy as np

log = logging.getLogger(__name__)


class ModelError(ValueError):
    """Raised when a network or scenario violates its invariants."""


@dataclass(frozen=True)
class NetworkGraph:
    """Directed graph with per-edge average capacity and unit cost.

    Edges are identified by their position in ``edges``; that index order is
    also the tie-break order used by the controllers.
    """

    num_nodes: int
    edges: tuple[tuple[int, int], ...]
    capacity: np.ndarray  # flow-units / slot
    cost: np.ndarray  # cost / flow-unit
    labels: tuple[str, ...] | None = None

    def __post_init__(self):
        cap = np.asarray(self.capacity, dtype=float)
        cost = np.asarray(self.cost, dtype=float)
        object.__setattr__(self, "capacity", cap)
        object.__setattr__(self, "cost", cost)
        object.__setattr__(self, "edges", tuple((int(i), int(j)) for i, j in self.edges))
        if self.num_nodes < 1:
            raise ModelError("graph needs at least one node")
        if cap.shape != (len(self.edges),) or cost.shape != (len(self.edges),):
            raise ModelError("capacity/cost must have one entry per edge")
        for i, j in self.edges:
            if i == j:
                raise ModelError(f"self-loop at node {i}")
            if not (0 <= i < self.num_nodes and 0 <= j < self.num_nodes):
                raise ModelError(f"edge ({i}, {j}) references a missing node")
        if len(set(self.edges)) != len(self.edges):
            raise ModelError("duplicate edges")
        if np.any(cap <= 0):
            raise ModelError("edge capacities must be positive")
        if np.any(cost < 0):
            raise ModelError("edge costs must be non-negative")
        if self.labels is not None and len(self.labels) != self.num_nodes:
            raise ModelError("labels must name every node")

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    @property
    def src(self) -> np.ndarray:
        return np.array([e[0] for e in self.edges], dtype=np.int64)

    @property
    def dst(self) -> np.ndarray:
        return np.array([e[1] for e in self.edges], dtype=np.int64)

    def outgoing(self, i: int) -> list[int]:
        """Edge ids leaving node ``i`` (delta_i^+)."""
        return [e for e, (s, _) in enumerate(self.edges) if s == i]

    def incoming(self, i: int) -> list[int]:
        """Edge ids entering node ``i`` (delta_i^-)."""
        return [e for e, (_, d) in enumerate(self.edges) if d == i]

    def edge_index(self, i: int, j: int) -> int:
        return self.edges.index((i, j))

    def label(self, i: int) -> str:
        return self.labels[i] if self.labels else str(i)

    def hop_distances_to(self, target: int) -> np.ndarray:
        """Hop counts from every node to ``target`` (inf when unreachable)."""
        rev: dict[int, list[int]] = {}
        for i, j in self.edges:
            rev.setdefault(j, []).append(i)
        dist = np.full(self.num_nodes, np.inf)
        dist[target] = 0
        queue = deque([target])
        while queue:
            v = queue.popleft()
            for u in rev.get(v, ()):
                if dist[u] == np.inf:
                    dist[u] = dist[v] + 1
                    queue.append(u)
        return dist


@dataclass(frozen=True)
class CommoditySpec:
    """A destination-identified traffic class.

    ``rates`` maps ``(node, lifetime)`` to a mean arrival rate in flow-units per
    slot; lifetimes run ``1..L``.
    """

    destination: int
    gamma: float
    L: int
    rates: Mapping[tuple[int, int], float]
    a_max: float | None = None
    name: str = ""

    def __post_init__(self):
        if not isinstance(self.L, (int, np.integer)) or self.L < 1:
            raise ModelError(f"max lifetime L must be a positive integer, got {self.L!r}")
        if not 0.0 <= self.gamma <= 1.0:
            raise ModelError(f"gamma must lie in [0, 1], got {self.gamma}")
        clean = {}
        for (i, l), r in self.rates.items():
            if i == self.destination:
                raise ModelError("commodity has arrivals at its own destination")
            if not 1 <= l <= self.L:
                raise ModelError(f"arrival lifetime {l} outside 1..{self.L}")
            if r < 0:
                raise ModelError("arrival rates must be non-negative")
            clean[(int(i), int(l))] = float(r)
        object.__setattr__(self, "rates", clean)
        if self.a_max is not None and self.a_max < 0:
            raise ModelError("a_max must be non-negative")

    @property
    def total_rate(self) -> float:
        """||lambda||_1."""
        return float(sum(self.rates.values()))

    def rate_array(self, num_nodes: int, lmax: int | None = None) -> np.ndarray:
        """Dense ``(num_nodes, lmax+1)`` view; column 0 is unused."""
        lmax = self.L if lmax is None else lmax
        out = np.zeros((num_nodes, lmax + 1))
        for (i, l), r in self.rates.items():
            out[i, l] += r
        return out

    def scaled(self, theta: float) -> "CommoditySpec":
        return CommoditySpec(
            self.destination,
            self.gamma,
            self.L,
            {k: theta * v for k, v in self.rates.items()},
            None if self.a_max is None else theta * self.a_max,
            self.name,
        )


@dataclass(frozen=True)
class UnitSystem:
    """Mbps <-> flow-units/slot conversion.

    One flow unit is ``flow_unit_mbps`` Mbps sustained for one slot; a slot
    lasts ``slot_seconds`` seconds when costs quoted per Gb need converting.
    """

    flow_unit_mbps: Fraction | float = Fraction(10)
    slot_seconds: float = 1.0

    def __post_init__(self):
        fu = self.flow_unit_mbps
        if not isinstance(fu, Fraction):
            fu = Fraction(str(fu)) if isinstance(fu, float) else Fraction(fu)
        if fu <= 0:
            raise ModelError("flow unit must be positive")
        if self.slot_seconds <= 0:
            raise ModelError("slot duration must be positive")
        object.__setattr__(self, "flow_unit_mbps", fu)

    def to_units(self, mbps):
        return convert_rate(self, mbps)

    def to_mbps(self, units):
        if isinstance(units, (int, Fraction)):
            return Fraction(units) * self.flow_unit_mbps
        return units * float(self.flow_unit_mbps)

    def link_cost(self, cost_per_gb: float) -> float:
        """Cost per flow unit for a link priced per Gb."""
        return cost_per_gb * float(self.flow_unit_mbps) * self.slot_seconds / 1000.0

    def scale_v(self, v_reference: float) -> float:
        """Map a V quoted against 1-Mb data units onto this unit system.

        Queues shrink by the flow-unit size while per-unit costs grow by it, so
        keeping every max-weight decision unchanged needs V / unit**2.
        """
        return float(v_reference) / float(self.flow_unit_mbps) ** 2


def convert_rate(us: UnitSystem, mbps):
    """Convert a rate in Mbps into flow-units per slot.

    Integers and Fractions stay exact; floats are converted in floating point.
    """
    if mbps < 0:
        raise ModelError(f"rate must be non-negative, got {mbps}")
    if isinstance(mbps, (int, Fraction)):
        return Fraction(mbps) / us.flow_unit_mbps
    return float(mbps) / float(us.flow_unit_mbps)


@dataclass(frozen=True)
class Client:
    """One (source, destination) service request of a cloud scenario.

    ``rate`` is the total mean arrival rate (flow-units/slot).  By default all
    packets are born with lifetime ``L``; ``lifetime_split`` can spread the
    rate over lifetimes (fractions summing to one).
    """

    source: int
    destination: int
    gamma: float
    rate: float
    L: int
    lifetime_split: Mapping[int, float] | None = None
    name: str = ""

    def rates_by_lifetime(self) -> dict[int, float]:
        if not self.lifetime_split:
            return {self.L: float(self.rate)}
        total = sum(self.lifetime_split.values())
        if total <= 0 or abs(total - 1.0) > 1e-9:
            raise ModelError("lifetime split must sum to one")
        return {int(l): self.rate * float(f) for l, f in self.lifetime_split.items() if f > 0}


@dataclass(frozen=True)
class CloudScenario:
    """Physical network plus compute resources and clients.

    Compute is given per node as a CPU budget and a cost per CPU; each CPU
    processes ``cpu_rate`` flow-units per slot.  ``chain_length`` is the number
    of service functions (0 means pure routing).
    """

    graph: NetworkGraph
    cpu_budget: np.ndarray
    cpu_cost: np.ndarray
    cpu_rate: float
    chain_length: int
    clients: tuple[Client, ...]
    a_max_factor: float = 20.0
    name: str = ""

    def __post_init__(self):
        budget = np.asarray(self.cpu_budget, dtype=float)
        cpu_cost = np.asarray(self.cpu_cost, dtype=float)
        object.__setattr__(self, "cpu_budget", budget)
        object.__setattr__(self, "cpu_cost", cpu_cost)
        object.__setattr__(self, "clients", tuple(self.clients))
        n = self.graph.num_nodes
        if budget.shape != (n,) or cpu_cost.shape != (n,):
            raise ModelError("compute budget/cost need one entry per node")
        if self.chain_length < 0:
            raise ModelError("chain length must be >= 0")
        if self.chain_length > 0 and self.cpu_rate <= 0:
            raise ModelError("per-CPU processing rate must be positive")
        if np.any(budget < 0):
            raise ModelError("compute budgets must be non-negative")
        if np.any(cpu_cost < 0):
            raise ModelError("compute costs must be non-negative")
        for c in self.clients:
            if not (0 <= c.source < n and 0 <= c.destination < n):
                raise ModelError(f"client {c} references a missing node")
            if c.source == c.destination and self.chain_length == 0:
                raise ModelError("pure-routing client with source == destination")
            if c.rate < 0:
                raise ModelError("client rates must be non-negative")

    def with_clients(self, clients: Sequence[Client]) -> "CloudScenario":
        return CloudScenario(
            self.graph, self.cpu_budget, self.cpu_cost, self.cpu_rate,
            self.chain_length, tuple(clients), self.a_max_factor, self.name,
        )


@dataclass(frozen=True)
class CapacityGroup:
    resource: tuple  # ("link", i, j) or ("node", i)
    edges: tuple[int, ...]
    capacity: float


@dataclass(frozen=True)
class LayeredGraph:
    """Routing view of a (possibly compute-augmented) network.

    ``graph`` nodes are ``node = stage * n_phys + phys``.  ``edge_resource``
    tags each layered edge with the physical resource it consumes: a link
    ``("link", i, j)`` or compute ``("node", i)``.
    """

    graph: NetworkGraph
    n_phys: int
    stages: int  # S
    edge_resource: tuple[tuple, ...]
    commodities: tuple[CommoditySpec, ...]
    resource_capacity: Mapping[tuple, float] = field(default_factory=dict)
    phys_labels: tuple[str, ...] | None = None

    def node(self, phys: int, stage: int) -> int:
        return stage * self.n_phys + phys

    def phys(self, node: int) -> int:
        return node % self.n_phys

    def stage(self, node: int) -> int:
        return node // self.n_phys

    @property
    def num_commodities(self) -> int:
        return len(self.commodities)

    @property
    def lmax(self) -> int:
        return max(c.L for c in self.commodities) if self.commodities else 1

    def is_processing(self, e: int) -> bool:
        return self.edge_resource[e][0] == "node"

    def with_commodities(self, commodities: Sequence[CommoditySpec]) -> "LayeredGraph":
        return LayeredGraph(
            self.graph, self.n_phys, self.stages, self.edge_resource,
            tuple(commodities), dict(self.resource_capacity), self.phys_labels,
        )

    def describe_node(self, node: int, one_based: bool = True) -> str:
        p = self.phys(node)
        if self.phys_labels:
            name = self.phys_labels[p]
        else:
            name = str(p + 1 if one_based else p)
        return name if self.stages == 0 else f"({name},{self.stage(node)})"

    def shortest_layered_hops(self, k: int, source: int) -> float:
        return float(self.graph.hop_distances_to(self.commodities[k].destination)[source])


def routing_network(graph: NetworkGraph, commodities: Sequence[CommoditySpec]) -> LayeredGraph:
    """Wrap a pure-routing problem (no compute stages) as a LayeredGraph."""
    res = tuple(("link", i, j) for i, j in graph.edges)
    caps = {r: float(c) for r, c in zip(res, graph.capacity)}
    for c in commodities:
        if not 0 <= c.destination < graph.num_nodes:
            raise ModelError("commodity destination not in graph")
        for (i, _l) in c.rates:
            if not 0 <= i < graph.num_nodes:
                raise ModelError("arrival node not in graph")
    return LayeredGraph(graph, graph.num_nodes, 0, res, tuple(commodities), caps, graph.labels)


def build_layered_graph(scenario: CloudScenario) -> LayeredGraph:
    """Expand a cloud scenario into a layered routing graph.

    Transmission edges are copied into every stage and keep the link's capacity
    and cost; processing edges ``(i, s) -> (i, s+1)`` get capacity
    ``budget_i * cpu_rate`` and cost ``cpu_cost_i / cpu_rate`` per flow unit.
    Nodes with zero compute budget get no processing edge.
    """
    g = scenario.graph
    n, S = g.num_nodes, scenario.chain_length
    edges: list[tuple[int, int]] = []
    caps: list[float] = []
    costs: list[float] = []
    resource: list[tuple] = []
    res_cap: dict[tuple, float] = {}
    for s in range(S + 1):
        for e, (i, j) in enumerate(g.edges):
            edges.append((s * n + i, s * n + j))
            caps.append(float(g.capacity[e]))
            costs.append(float(g.cost[e]))
            resource.append(("link", i, j))
            res_cap[("link", i, j)] = float(g.capacity[e])
    for s in range(S):
        for i in range(n):
            cap = float(scenario.cpu_budget[i]) * scenario.cpu_rate
            if cap <= 0:
                continue
            edges.append((s * n + i, (s + 1) * n + i))
            caps.append(cap)
            costs.append(float(scenario.cpu_cost[i]) / scenario.cpu_rate)
            resource.append(("node", i))
            res_cap[("node", i)] = cap
    labels = None
    if g.labels:
        labels = tuple(f"{g.labels[i]}@{s}" if S else g.labels[i] for s in range(S + 1) for i in range(n))
    lgraph = NetworkGraph((S + 1) * n, tuple(edges), np.array(caps), np.array(costs), labels)

    commodities = []
    for idx, c in enumerate(scenario.clients):
        a_max = scenario.a_max_factor * c.rate if c.rate > 0 else 0.0
        rates = {(c.source, l): r for l, r in c.rates_by_lifetime().items()}
        dest = S * n + c.destination
        spec = CommoditySpec(dest, c.gamma, c.L, rates, a_max, c.name or f"client{idx + 1}")
        hops = lgraph.hop_distances_to(dest)[c.source]
        if hops > c.L:
            log.warning(
                "client %s: L=%d is shorter than the %s-hop layered path; it can never deliver in time",
                spec.name, c.L, hops,
            )
        commodities.append(spec)
    return LayeredGraph(lgraph, n, S, tuple(resource), tuple(commodities), res_cap, g.labels)


def shared_capacity_groups(lg: LayeredGraph) -> list[CapacityGroup]:
    """Partition layered edges by the physical resource they consume.

    All layers (and all commodities) of one physical link share its capacity;
    likewise for a node's compute.  Group order follows first appearance.
    """
    members: dict[tuple, list[int]] = {}
    for e, res in enumerate(lg.edge_resource):
        members.setdefault(res, []).append(e)
    return [
        CapacityGroup(res, tuple(es), float(lg.resource_capacity.get(res, lg.graph.capacity[es[0]])))
        for res, es in members.items()
    ]


def undirected_graph(
    num_nodes: int,
    links: Sequence[tuple[int, int]],
    capacity: float,
    cost: float,
    labels: Sequence[str] | None = None,
) -> NetworkGraph:
    """Graph with both directions of every link, same capacity and cost."""
    edges = []
    for i, j in links:
        edges.append((i, j))
        edges.append((j, i))
    m = len(edges)
    return NetworkGraph(num_nodes, tuple(edges), np.full(m, float(capacity)), np.full(m, float(cost)),
                        tuple(labels) if labels else None)


# Abilene as numbered in the evaluation figure (1-based there, 0-based here).
ABILENE_LINKS_1BASED = (
    (1, 2), (1, 3), (2, 3), (2, 4), (3, 6), (4, 5), (5, 6),
    (5, 7), (6, 8), (7, 8), (7, 10), (8, 9), (9, 11), (10, 11),
)


def abilene_scenario(
    rate_mbps: float = 100.0,
    L: int = 7,
    gamma: float = 0.9,
    units: UnitSystem | None = None,
) -> CloudScenario:
    """Built-in Abilene cloud scenario with two clients, (1, 9) and (3, 11).

    1 Gbps links at 1 per Gb, 2 CPUs per node at 50 Mbps each, CPU cost 1 at
    nodes 5 and 6 and 2 elsewhere, a single service function.
    """
    units = units or UnitSystem()
    n = 11
    links = [(i - 1, j - 1) for i, j in ABILENE_LINKS_1BASED]
    graph = undirected_graph(n, links, units.to_units(1000.0), units.link_cost(1.0),
                             [str(i + 1) for i in range(n)])
    cpu_cost = np.full(n, 2.0)
    cpu_cost[[4, 5]] = 1.0
    rate = units.to_units(float(rate_mbps))
    clients = (
        Client(0, 8, gamma, rate, L, name="client1"),
        Client(2, 10, gamma, rate, L, name="client2"),
    )
    return CloudScenario(graph, np.full(n, 2.0), cpu_cost, units.to_units(50.0), 1, clients, name="abilene")


