"""Lifetime-indexed physical queues of the actual network.

Per slot a node may send at most what it holds of each lifetime; sent
packets arrive one lifetime younger, held packets age in place, lifetime-0
leftovers are dropped and anything reaching the destination is consumed.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import kernels
from .model import LayeredGraph
from .topology import topology

ABS_TOL = 1e-9


class AvailabilityError(RuntimeError):
    """A flow decision tried to send packets a node does not hold."""

    def __init__(self, violations):
        self.violations = violations
        worst = max(v.excess for v in violations)
        super().__init__(f"{len(violations)} availability violation(s), worst excess {worst:.6g}")


class InvariantError(RuntimeError):
    """A queue invariant (non-negativity, conservation, absorption) broke."""


@dataclass
class FlowDecision:
    """Per-slot flows ``x[k, e, l]``; entries not set are zero."""

    x: np.ndarray

    @classmethod
    def zeros(cls, lg: LayeredGraph) -> "FlowDecision":
        return cls(np.zeros(topology(lg).flow_shape()))

    @classmethod
    def from_entries(cls, lg: LayeredGraph, entries: Mapping[tuple[int, int, int], float]) -> "FlowDecision":
        """Build from ``{(commodity, edge, lifetime): amount}``."""
        fd = cls.zeros(lg)
        for (k, e, l), v in entries.items():
            if l < 1:
                raise ValueError("flows at lifetime 0 are not allowed")
            if v < 0:
                raise ValueError("flow amounts must be non-negative")
            fd.x[k, e, l] += v
        return fd

    def total(self) -> float:
        return float(self.x.sum())

    def nonzero(self) -> dict[tuple[int, int, int], float]:
        return {tuple(int(v) for v in idx): float(self.x[idx]) for idx in zip(*np.nonzero(self.x))}


@dataclass
class ArrivalSample:
    """Exogenous arrivals ``a[k, i, l]`` of one slot."""

    a: np.ndarray

    @classmethod
    def zeros(cls, lg: LayeredGraph) -> "ArrivalSample":
        return cls(np.zeros(topology(lg).queue_shape()))

    @classmethod
    def from_entries(cls, lg: LayeredGraph, entries: Mapping[tuple[int, int, int], float]) -> "ArrivalSample":
        s = cls.zeros(lg)
        for (k, i, l), v in entries.items():
            if i == lg.commodities[k].destination:
                raise ValueError("arrivals at a destination are not allowed")
            s.a[k, i, l] += v
        return s

    def totals(self) -> np.ndarray:
        """A(t) per commodity."""
        return self.a.sum(axis=(1, 2))


@dataclass
class LifetimeQueueBank:
    Q: np.ndarray
    delivered: np.ndarray
    dropped: np.ndarray
    injected: np.ndarray

    @classmethod
    def empty(cls, lg: LayeredGraph) -> "LifetimeQueueBank":
        topo = topology(lg)
        K = topo.K
        return cls(np.zeros(topo.queue_shape()), np.zeros(K), np.zeros(K), np.zeros(K))

    def backlog(self) -> np.ndarray:
        return self.Q.sum(axis=(1, 2))

    def copy(self) -> "LifetimeQueueBank":
        return LifetimeQueueBank(self.Q.copy(), self.delivered.copy(), self.dropped.copy(), self.injected.copy())

    def conservation_error(self) -> float:
        """max_k |injected - delivered - dropped - backlog|."""
        return float(np.max(np.abs(self.injected - self.delivered - self.dropped - self.backlog()), initial=0.0))


@dataclass(frozen=True)
class Violation:
    commodity: int
    node: int
    lifetime: int
    excess: float


@dataclass
class SlotLedger:
    delivered: np.ndarray
    dropped: np.ndarray
    cost: np.ndarray
    backlog: np.ndarray
    slot: int = 0
    extras: dict = field(default_factory=dict)


def check_availability(lg: LayeredGraph, bank: LifetimeQueueBank, x: FlowDecision,
                       tol: float = ABS_TOL) -> list[Violation]:
    """Empty list when every node sends at most its backlog of each lifetime."""
    topo = topology(lg)
    out, inn = topo.scratch()
    excess = np.zeros(topo.queue_shape())
    worst = kernels.availability_excess(bank.Q, x.x, topo.src, topo.dst, topo.dest, topo.Lk, out, inn, excess)
    if worst <= tol:
        return []
    return [Violation(int(k), int(i), int(l), float(excess[k, i, l]))
            for k, i, l in zip(*np.nonzero(excess > tol))]


def advance_slot(lg: LayeredGraph, bank: LifetimeQueueBank, x: FlowDecision, a: ArrivalSample,
                 slot: int = 0, check: bool = True) -> SlotLedger:
    """Apply one slot in place and return what happened in it."""
    topo = topology(lg)
    if np.any(x.x < 0):
        raise ValueError("negative flow")
    if np.any(x.x[:, :, 0] != 0):
        raise ValueError("flow at lifetime 0")
    dests = topo.dest
    for k, d in enumerate(dests):
        if np.any(a.a[k, d] != 0):
            raise ValueError("arrivals at destination")
    if check:
        bad = check_availability(lg, bank, x)
        if bad:
            raise AvailabilityError(bad)
    out, inn = topo.scratch()
    K = topo.K
    delivered, dropped, cost = np.zeros(K), np.zeros(K), np.zeros(K)
    worst = kernels.advance_kernel(bank.Q, x.x, a.a, topo.src, topo.dst, topo.cost, topo.dest, topo.Lk,
                                   out, inn, delivered, dropped, cost, 1e-7)
    if worst < 0:
        raise InvariantError(f"negative residual backlog {worst:.3g}")
    bank.delivered += delivered
    bank.dropped += dropped
    bank.injected += a.totals()
    return SlotLedger(delivered, dropped, cost, bank.backlog(), slot)


def timely_throughput(delivered: Sequence[float] | np.ndarray, window: int | None = None) -> float:
    """Average delivered flow per slot over the last ``window`` slots.

    A 2-D history ``(slots, commodities)`` is summed over commodities first.
    """
    hist = np.asarray(delivered, dtype=float)
    if hist.ndim > 1:
        hist = hist.sum(axis=1)
    if window is None:
        window = hist.shape[0]
    if window <= 0:
        raise ValueError("empty window")
    if window > hist.shape[0]:
        raise ValueError("window longer than the history")
    return float(hist[hist.shape[0] - window:].mean())


LEDGER_FIELDS = ("slot", "commodity", "delivered", "dropped", "backlog", "cost")


def write_ledger_csv(path, ledgers: Iterable[SlotLedger]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(LEDGER_FIELDS)
        for led in ledgers:
            for k in range(len(led.delivered)):
                w.writerow([led.slot, k, repr(float(led.delivered[k])), repr(float(led.dropped[k])),
                            repr(float(led.backlog[k])), repr(float(led.cost[k]))])
