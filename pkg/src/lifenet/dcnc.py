"""Lifetime-agnostic backpressure baseline (differential backlog minus cost).

Routing decisions see only scalar per-node backlogs.  Lifetimes are tracked
on the side purely to tell timely deliveries from late ones; expired packets
keep travelling and are delivered anyway.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .model import LayeredGraph
from .queueing import ArrivalSample, FlowDecision
from .topology import topology


@dataclass
class BacklogBank:
    """``comp[k, i, l]``: backlog of node i by remaining lifetime; bucket 0 is expired."""

    comp: np.ndarray
    timely: np.ndarray
    raw: np.ndarray
    injected: np.ndarray

    @classmethod
    def empty(cls, lg: LayeredGraph) -> "BacklogBank":
        topo = topology(lg)
        K = topo.K
        return cls(np.zeros(topo.queue_shape()), np.zeros(K), np.zeros(K), np.zeros(K))

    def backlog(self) -> np.ndarray:
        """Scalar Q_i per (commodity, node)."""
        return self.comp.sum(axis=2)

    def conservation_error(self) -> float:
        return float(np.max(np.abs(self.injected - self.raw - self.comp.sum(axis=(1, 2))), initial=0.0))


def oldest_first_drain(composition, amount: float) -> np.ndarray:
    """Take ``amount`` from a per-lifetime composition, smallest lifetime first."""
    comp = np.asarray(composition, dtype=float)
    if amount < 0:
        raise ValueError("amount must be non-negative")
    if amount > comp.sum() + 1e-12:
        raise ValueError("cannot drain more than the backlog")
    take = np.zeros_like(comp)
    left = amount
    for l in range(comp.shape[0]):
        if left <= 0:
            break
        take[l] = min(comp[l], left)
        left -= take[l]
    return take


def dcnc_decide(bank: BacklogBank, lg: LayeredGraph, V: float) -> FlowDecision:
    """Flows of one slot; ``x[k, e, l]`` is indexed by remaining lifetime (0 = expired)."""
    if V < 0:
        raise ValueError("V must be non-negative")
    topo = topology(lg)
    x = np.zeros(topo.flow_shape())
    remaining = np.empty_like(bank.comp)
    kernels.dcnc_decide_kernel(bank.comp, topo.src, topo.dst, topo.cost, topo.dest, float(V),
                               topo.group_ptr, topo.group_edges, topo.group_cap, x, remaining)
    return FlowDecision(x)


def dcnc_step(bank: BacklogBank, lg: LayeredGraph, V: float, a: ArrivalSample):
    """Decide, then move packets; returns (decision, timely, raw, cost) for the slot."""
    topo = topology(lg)
    x = np.zeros(topo.flow_shape())
    remaining = np.empty_like(bank.comp)
    kernels.dcnc_decide_kernel(bank.comp, topo.src, topo.dst, topo.cost, topo.dest, float(V),
                               topo.group_ptr, topo.group_edges, topo.group_cap, x, remaining)
    K = topo.K
    timely, raw, cost = np.zeros(K), np.zeros(K), np.zeros(K)
    kernels.dcnc_advance_kernel(bank.comp, remaining, x, a.a, topo.dst, topo.cost, topo.dest, topo.Lk,
                                timely, raw, cost)
    bank.timely += timely
    bank.raw += raw
    bank.injected += a.totals()
    return FlowDecision(x), timely, raw, cost
