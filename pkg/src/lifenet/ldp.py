"""Virtual-network controller: virtual queues, weights, max-weight allocation.

The virtual network lets every node lend packets of any lifetime it does
not yet hold.  The resulting deficits are tracked by virtual queues ``U``;
keeping them stable enforces reliability and the lifetime-aware flow
conservation on average.
"""
from __future__ import annotations

import csv
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .model import LayeredGraph
from .queueing import ArrivalSample, FlowDecision
from .topology import topology

TIE_BREAK_RULES = ("lifetime-commodity-edge",)


@dataclass
class ControllerConfig:
    """V trades cost against convergence time; 0 disables the cost term.

    ``arrival_delay`` feeds A(t - tau) instead of A(t) into the destination
    queue.
    """

    V: float = 0.0
    tie_break: str = "lifetime-commodity-edge"
    arrival_delay: int = 0

    def __post_init__(self):
        if self.V < 0:
            raise ValueError("V must be non-negative")
        if self.tie_break not in TIE_BREAK_RULES:
            raise ValueError(f"unknown tie-break rule {self.tie_break!r}")
        if self.arrival_delay < 0:
            raise ValueError("arrival delay must be >= 0")


@dataclass
class VirtualQueueBank:
    """``U[k, i, l]`` for non-destination nodes and ``Ud[k]`` at destinations."""

    U: np.ndarray
    Ud: np.ndarray
    pending: deque = field(default_factory=deque)

    @classmethod
    def zeros(cls, lg: LayeredGraph) -> "VirtualQueueBank":
        topo = topology(lg)
        return cls(np.zeros(topo.queue_shape()), np.zeros(topo.K))

    def total(self) -> float:
        return float(self.U.sum() + self.Ud.sum())

    def per_commodity(self) -> np.ndarray:
        return self.U.sum(axis=(1, 2)) + self.Ud

    def copy(self) -> "VirtualQueueBank":
        return VirtualQueueBank(self.U.copy(), self.Ud.copy(), deque(self.pending))


def compute_weights(U: VirtualQueueBank, lg: LayeredGraph, cfg: ControllerConfig) -> np.ndarray:
    """Weights ``w[k, e, l]``; ``-inf`` where sending is impossible.

    Edges leaving a commodity's destination carry ``-inf`` for it, as do
    lifetime 0 and lifetimes above the commodity's L.
    """
    topo = topology(lg)
    W = np.empty(topo.flow_shape())
    kernels.weights_kernel(U.U, U.Ud, topo.src, topo.dst, topo.cost, topo.dest, topo.Lk, float(cfg.V), W)
    return W


def max_weight_allocate(weights: np.ndarray, lg: LayeredGraph) -> FlowDecision:
    """Give each capacity group's full capacity to its best positive weight."""
    topo = topology(lg)
    nu = np.zeros(topo.flow_shape())
    kernels.allocate_kernel(weights, topo.group_ptr, topo.group_edges, topo.group_cap, nu)
    return FlowDecision(nu)


def update_virtual_queues(U: VirtualQueueBank, nu: FlowDecision, a: ArrivalSample, lg: LayeredGraph,
                          A_used: np.ndarray | None = None) -> VirtualQueueBank:
    """Advance the virtual queues in place (and return them).

    ``A_used`` overrides the per-commodity total arrival fed to the
    destination queue (defaults to this slot's realized total).
    """
    if np.any(nu.x < 0):
        raise ValueError("negative virtual flow")
    topo = topology(lg)
    out, inn = topo.scratch()
    A = a.totals() if A_used is None else np.asarray(A_used, dtype=float)
    kernels.virtual_update_kernel(U.U, U.Ud, nu.x, a.a, A, topo.gamma, topo.src, topo.dst, topo.dest,
                                  topo.Lk, out, inn)
    return U


def delayed_arrival_total(U: VirtualQueueBank, a: ArrivalSample, delay: int) -> np.ndarray:
    """A(t - delay), with zeros before the first delayed value is available."""
    A_now = a.totals()
    if delay == 0:
        return A_now
    U.pending.append(A_now)
    if len(U.pending) > delay:
        return U.pending.popleft()
    return np.zeros_like(A_now)


def controller_step(U: VirtualQueueBank, a: ArrivalSample, lg: LayeredGraph,
                    cfg: ControllerConfig) -> tuple[FlowDecision, VirtualQueueBank]:
    """One slot of the virtual controller: weights, allocation, queue update."""
    W = compute_weights(U, lg, cfg)
    nu = max_weight_allocate(W, lg)
    A = delayed_arrival_total(U, a, cfg.arrival_delay)
    update_virtual_queues(U, nu, a, lg, A)
    return nu, U


SNAPSHOT_FIELDS = ("slot", "commodity", "node", "lifetime", "U")


def snapshot_rows(slot: int, U: VirtualQueueBank, lg: LayeredGraph):
    """Rows of a virtual-queue snapshot; lifetime 0 stands for the destination queue."""
    for k, c in enumerate(lg.commodities):
        yield (slot, k, c.destination, 0, float(U.Ud[k]))
        for i in range(lg.graph.num_nodes):
            if i == c.destination:
                continue
            for l in range(1, c.L + 1):
                yield (slot, k, i, l, float(U.U[k, i, l]))


def write_snapshots_csv(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SNAPSHOT_FIELDS)
        for r in rows:
            w.writerow(r)
