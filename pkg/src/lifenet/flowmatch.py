"""Drive the actual network so its average flow follows the virtual one.

A packet of lifetime ``l`` at node ``i`` goes to neighbour ``j`` with
probability

    alpha = x_ij^(l) / (x_in^(>=l+1) + lambda^(>=l) - x_out^(>=l+1))

and stays otherwise, where ``x`` is the running average of the virtual flows
and ``lambda`` the running average of arrivals.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from . import kernels
from .model import LayeredGraph
from .queueing import ArrivalSample, FlowDecision, LifetimeQueueBank
from .topology import topology

GAP_DEN_FLOOR = 1e-12
SKIP_TOL = 1e-9


@dataclass
class EmpiricalFlowStats:
    nu_sum: np.ndarray
    a_sum: np.ndarray
    t: int = 0

    @classmethod
    def empty(cls, lg: LayeredGraph) -> "EmpiricalFlowStats":
        topo = topology(lg)
        return cls(np.zeros(topo.flow_shape()), np.zeros(topo.queue_shape()), 0)

    def nu_bar(self) -> np.ndarray:
        if self.t == 0:
            return np.zeros_like(self.nu_sum)
        return self.nu_sum / self.t

    def lambda_hat_ge(self) -> np.ndarray:
        """Suffix sums lambda_hat^(>=l) per (k, i, l)."""
        if self.t == 0:
            return np.zeros_like(self.a_sum)
        avg = self.a_sum / self.t
        return np.flip(np.cumsum(np.flip(avg, axis=2), axis=2), axis=2)


@dataclass
class RoutingDistribution:
    """``alpha[k, e, l]``: probability that a lifetime-l packet at src(e) takes e."""

    alpha: np.ndarray

    @classmethod
    def hold_all(cls, lg: LayeredGraph) -> "RoutingDistribution":
        return cls(np.zeros(topology(lg).flow_shape()))

    def hold_probability(self, lg: LayeredGraph) -> np.ndarray:
        """1 - sum_j alpha_i^(l)(j), shape (K, N, Lmax+1)."""
        topo = topology(lg)
        sent = np.zeros(topo.queue_shape())
        np.add.at(sent, (slice(None), topo.src), self.alpha)
        return 1.0 - sent

    def is_valid(self, lg: LayeredGraph, tol: float = 1e-9) -> bool:
        if np.any(self.alpha < -tol) or np.any(self.alpha > 1 + tol):
            return False
        return bool(np.all(self.hold_probability(lg) >= -tol))


def update_stats(stats: EmpiricalFlowStats, nu: FlowDecision, a: ArrivalSample) -> EmpiricalFlowStats:
    stats.nu_sum += nu.x
    stats.a_sum += a.a
    stats.t += 1
    return stats


MATCH_MODES = {"skip": 0, "local": 1, "clip": 2}


def build_distribution(stats: EmpiricalFlowStats, lg: LayeredGraph,
                       previous: RoutingDistribution | None = None,
                       mode: str = "skip") -> RoutingDistribution | None:
    """Routing probabilities from the current empirical averages.

    A (node, lifetime) cell is ill-defined when it has positive outflow over
    a non-positive denominator, outflows exceeding the denominator, or a
    negative denominator.  A zero denominator with no outflow just holds.

    ``skip`` returns None if any cell is ill-defined (the caller keeps its
    previous distribution); ``local`` keeps the ``previous`` values of the
    bad cells and updates the rest; ``clip`` rescales each bad cell so that
    it forwards its whole backlog in proportion to the outflows.
    """
    if stats.t < 1:
        raise ValueError("need at least one slot of statistics")
    if mode not in MATCH_MODES:
        raise ValueError(f"unknown matching mode {mode!r}")
    topo = topology(lg)
    alpha = previous.alpha.copy() if previous is not None else np.zeros(topo.flow_shape())
    out, inn = topo.scratch()
    denom = np.zeros(topo.queue_shape())
    bad = np.zeros(topo.queue_shape(), dtype=np.bool_)
    n_bad = kernels.build_alpha_kernel(stats.nu_sum, stats.a_sum, float(stats.t), topo.src, topo.dst, topo.dest,
                                       topo.Lk, alpha, MATCH_MODES[mode], SKIP_TOL, out, inn, denom, bad)
    if n_bad and mode == "skip":
        return None
    return RoutingDistribution(alpha)


def realize_flows(dist: RoutingDistribution, bank: LifetimeQueueBank, lg: LayeredGraph,
                  quantum: float | None = None, rng_seed: int | None = None) -> FlowDecision:
    """Actual flows from the backlog and the routing distribution.

    Fluid by default (the backlog is split in proportion to alpha).  With a
    ``quantum`` whole quanta are routed at random and the remainder is held.
    """
    topo = topology(lg)
    mu = np.zeros(topo.flow_shape())
    if quantum is None:
        kernels.realize_kernel(dist.alpha, bank.Q, topo.src, mu)
    else:
        if quantum <= 0:
            raise ValueError("quantum must be positive")
        if rng_seed is not None:
            kernels.seed_rng(int(rng_seed) % (2**32))
        kernels.realize_sampled_kernel(dist.alpha, bank.Q, topo.out_ptr, topo.out_edges, float(quantum), mu)
    return FlowDecision(mu)


def flow_matching_gap(nu_bar: np.ndarray, mu_bar: np.ndarray) -> float:
    """Relative L1 distance between average actual and virtual flows."""
    num = float(np.abs(np.asarray(mu_bar) - np.asarray(nu_bar)).sum())
    den = max(float(np.abs(nu_bar).sum()), GAP_DEN_FLOOR)
    return num / den


DIST_FIELDS = ("slot", "commodity", "edge", "src", "dst", "lifetime", "alpha")


def write_distribution_csv(path, snapshots, lg: LayeredGraph) -> None:
    """``snapshots`` is an iterable of (slot, RoutingDistribution)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(DIST_FIELDS)
        for slot, dist in snapshots:
            for k, e, l in zip(*np.nonzero(dist.alpha)):
                i, j = lg.graph.edges[e]
                w.writerow([slot, int(k), int(e), i, j, int(l), repr(float(dist.alpha[k, e, l]))])
