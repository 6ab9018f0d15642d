"""Flat integer/float arrays describing a layered network, for the kernels."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import LayeredGraph, shared_capacity_groups


@dataclass(frozen=True, eq=False)
class Topology:
    lg: LayeredGraph
    src: np.ndarray
    dst: np.ndarray
    cost: np.ndarray
    dest: np.ndarray
    Lk: np.ndarray
    gamma: np.ndarray
    group_ptr: np.ndarray
    group_edges: np.ndarray
    group_cap: np.ndarray
    edge_group: np.ndarray
    out_ptr: np.ndarray
    out_edges: np.ndarray

    @property
    def N(self) -> int:
        return self.lg.graph.num_nodes

    @property
    def E(self) -> int:
        return self.lg.graph.num_edges

    @property
    def K(self) -> int:
        return self.lg.num_commodities

    @property
    def Lmax(self) -> int:
        return self.lg.lmax

    def queue_shape(self) -> tuple[int, int, int]:
        return (self.K, self.N, self.Lmax + 1)

    def flow_shape(self) -> tuple[int, int, int]:
        return (self.K, self.E, self.Lmax + 1)

    def scratch(self) -> tuple[np.ndarray, np.ndarray]:
        return np.zeros((self.N, self.Lmax + 1)), np.zeros((self.N, self.Lmax + 1))

    def rate_array(self) -> np.ndarray:
        """Mean arrival rates lambda[k, i, l]."""
        lam = np.zeros(self.queue_shape())
        for k, c in enumerate(self.lg.commodities):
            lam[k] = c.rate_array(self.N, self.Lmax)
        return lam


def _build(lg: LayeredGraph) -> Topology:
    g = lg.graph
    groups = shared_capacity_groups(lg)
    ptr = np.zeros(len(groups) + 1, dtype=np.int64)
    members: list[int] = []
    edge_group = np.full(g.num_edges, -1, dtype=np.int64)
    for gi, grp in enumerate(groups):
        members.extend(sorted(grp.edges))
        ptr[gi + 1] = len(members)
        edge_group[list(grp.edges)] = gi
    src = g.src
    order = np.argsort(src, kind="stable")
    out_ptr = np.zeros(g.num_nodes + 1, dtype=np.int64)
    np.add.at(out_ptr, src + 1, 1)
    out_ptr = np.cumsum(out_ptr)
    return Topology(
        lg=lg,
        src=src,
        dst=g.dst,
        cost=np.asarray(g.cost, dtype=float),
        dest=np.array([c.destination for c in lg.commodities], dtype=np.int64),
        Lk=np.array([c.L for c in lg.commodities], dtype=np.int64),
        gamma=np.array([c.gamma for c in lg.commodities], dtype=float),
        group_ptr=ptr,
        group_edges=np.array(members, dtype=np.int64),
        group_cap=np.array([grp.capacity for grp in groups], dtype=float),
        edge_group=edge_group,
        out_ptr=out_ptr.astype(np.int64),
        out_edges=order.astype(np.int64),
    )


_cache: dict[int, Topology] = {}


def topology(lg: LayeredGraph) -> Topology:
    """Cached flat view of ``lg`` (layered graphs are immutable)."""
    key = id(lg)
    topo = _cache.get(key)
    if topo is None or topo.lg is not lg:
        topo = _build(lg)
        if len(_cache) > 64:
            _cache.clear()
        _cache[key] = topo
    return topo
