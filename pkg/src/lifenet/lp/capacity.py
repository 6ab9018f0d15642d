"""Static oracle for the deadline-constrained capacity region and its min cost.

Variables are per-slot average flows ``x[k, e, l]``.  Rows:

* reliability, per commodity: flow into the destination >= gamma * ||lambda||
* capacity, per shared resource: all layers/commodities/lifetimes <= capacity
* lifetime conservation, per (commodity, node, l): what leaves with lifetime
  >= l is covered by what arrives with lifetime >= l+1 plus new arrivals
  with lifetime >= l

Flows out of a destination and at lifetime 0 are never created as variables.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .. import kernels
from ..flowmatch import RoutingDistribution
from ..model import LayeredGraph, shared_capacity_groups
from ..topology import topology
from .simplex import EQ, GE, LE, LpResult, simplex

FEAS_TOL = 1e-8


class InfeasibleQuery(RuntimeError):
    """An oracle query asked for a point outside the capacity region."""


@dataclass
class LpInstance:
    A: sp.csr_matrix
    b: np.ndarray
    senses: list
    c: np.ndarray
    var_k: np.ndarray
    var_e: np.ndarray
    var_l: np.ndarray
    row_kind: list  # ("rel", k) | ("cap", resource) | ("cons", k, node, l)
    rate_rows: np.ndarray  # rows whose right-hand side scales with the arrival rates
    shape: tuple  # (K, E, Lmax+1)
    meta: dict = field(default_factory=dict)

    @property
    def num_vars(self) -> int:
        return self.A.shape[1]

    @property
    def num_rows(self) -> int:
        return self.A.shape[0]

    def scaled(self, theta: float) -> "LpInstance":
        """Same program with every arrival rate multiplied by ``theta``."""
        b = self.b.copy()
        b[self.rate_rows] *= theta
        return replace(self, b=b)

    def flows(self, x) -> np.ndarray:
        """Scatter a solution vector into the ``(K, E, Lmax+1)`` flow layout."""
        out = np.zeros(self.shape)
        out[self.var_k, self.var_e, self.var_l] = np.asarray(x, dtype=float)
        return out


@dataclass
class LpSolution:
    status: str  # "optimal" | "feasible" | "infeasible"
    x: np.ndarray | None
    objective: float | None
    flows: np.ndarray | None = None
    iterations: int = 0
    duals: np.ndarray | None = None

    @property
    def feasible(self) -> bool:
        return self.status in ("optimal", "feasible")


def build_lp(lg: LayeredGraph) -> LpInstance:
    """Encode the capacity-region conditions of ``lg`` (with its commodities' rates)."""
    topo = topology(lg)
    for c in lg.commodities:
        if c.L < 1:
            raise ValueError("max lifetime must be >= 1")
    K, E, Lp1 = topo.flow_shape()
    N = topo.N
    src, dst = topo.src, topo.dst
    var_index = -np.ones((K, E, Lp1), dtype=np.int64)
    vk, ve, vl = [], [], []
    for k, com in enumerate(lg.commodities):
        for e in range(E):
            if src[e] == com.destination:
                continue
            for l in range(1, com.L + 1):
                var_index[k, e, l] = len(vk)
                vk.append(k)
                ve.append(e)
                vl.append(l)
    nv = len(vk)
    rows, cols, vals = [], [], []
    b, senses, kinds, rate_rows = [], [], [], []

    def add_row(entries, rhs, sense, kind, scales):
        r = len(b)
        for j, v in entries:
            rows.append(r)
            cols.append(j)
            vals.append(v)
        b.append(rhs)
        senses.append(sense)
        kinds.append(kind)
        rate_rows.append(scales)

    for k, com in enumerate(lg.commodities):
        d = com.destination
        ent = [(var_index[k, e, l], 1.0) for e in range(E) if dst[e] == d for l in range(1, com.L + 1)
               if var_index[k, e, l] >= 0]
        add_row(ent, com.gamma * com.total_rate, GE, ("rel", k), True)
    for grp in shared_capacity_groups(lg):
        ent = [(var_index[k, e, l], 1.0) for e in grp.edges for k in range(K) for l in range(1, Lp1)
               if var_index[k, e, l] >= 0]
        if ent:
            add_row(ent, grp.capacity, LE, ("cap", grp.resource), False)
    out_edges = [[] for _ in range(N)]
    in_edges = [[] for _ in range(N)]
    for e in range(E):
        out_edges[src[e]].append(e)
        in_edges[dst[e]].append(e)
    for k, com in enumerate(lg.commodities):
        lam = com.rate_array(N, topo.Lmax)
        lam_ge = np.flip(np.cumsum(np.flip(lam[:, 1:com.L + 1], axis=1), axis=1), axis=1)
        for i in range(N):
            if i == com.destination or not out_edges[i]:
                continue
            for l in range(1, com.L + 1):
                ent = [(var_index[k, e, lo], 1.0) for e in out_edges[i] for lo in range(l, com.L + 1)]
                ent += [(var_index[k, e, li], -1.0) for e in in_edges[i] for li in range(l + 1, com.L + 1)
                        if var_index[k, e, li] >= 0]
                add_row(ent, float(lam_ge[i, l - 1]), LE, ("cons", k, i, l), True)
    A = sp.csr_matrix((vals, (rows, cols)), shape=(len(b), nv))
    A.sum_duplicates()
    c = topo.cost[np.asarray(ve, dtype=np.int64)] if nv else np.zeros(0)
    return LpInstance(A, np.array(b, dtype=float), senses, np.asarray(c, dtype=float),
                      np.array(vk, dtype=np.int64), np.array(ve, dtype=np.int64), np.array(vl, dtype=np.int64),
                      kinds, np.array(rate_rows, dtype=bool), (K, E, Lp1))


def solve(inst: LpInstance, exact: bool = False) -> LpSolution:
    """Minimum-cost flows, or status "infeasible"."""
    if inst.num_vars == 0:
        ok = all((s == LE and bi >= 0) or (s == GE and bi <= 0) or (s == EQ and bi == 0)
                 for s, bi in zip(inst.senses, inst.b))
        if not ok:
            return LpSolution("infeasible", None, None)
        return LpSolution("optimal", np.zeros(0), 0.0, inst.flows(np.zeros(0)))
    b = inst.b
    if exact:
        from fractions import Fraction
        b = [Fraction(v).limit_denominator(10**12) for v in inst.b]
        res = simplex(inst.A.toarray(), b, list(inst.senses), [Fraction(v).limit_denominator(10**12) for v in inst.c],
                      exact=True)
    else:
        res = simplex(inst.A, b, inst.senses, inst.c)
    return _wrap(inst, res, "optimal")


def is_feasible(inst: LpInstance) -> bool:
    res = simplex(inst.A, inst.b, inst.senses, inst.c, phase1_only=True) if inst.num_vars else None
    if res is None:
        return solve(inst).feasible
    if res.status not in ("optimal", "infeasible"):
        raise RuntimeError(f"feasibility probe ended with status {res.status}")
    return res.status == "optimal"


def feasibility_point(inst: LpInstance) -> LpSolution:
    """Some feasible point (no cost optimization)."""
    res = simplex(inst.A, inst.b, inst.senses, inst.c, phase1_only=True)
    return _wrap(inst, res, "feasible")


def _wrap(inst, res: LpResult, ok_status) -> LpSolution:
    if res.status == "infeasible":
        return LpSolution("infeasible", None, None, iterations=res.iterations)
    if res.status != "optimal":
        raise RuntimeError(f"LP solver ended with status {res.status}")
    x = np.asarray(res.x, dtype=float)
    obj = None if res.objective is None else float(res.objective)
    return LpSolution(ok_status, x, obj, inst.flows(x), res.iterations, res.duals)


def max_violation(inst: LpInstance, x) -> float:
    """Largest relative row violation of ``x`` (0 when every row holds)."""
    x = np.asarray(x, dtype=float)
    ax = inst.A @ x
    scale = np.maximum(1.0, np.abs(inst.b))
    worst = float(max(0.0, -x.min(initial=0.0)))
    for s, lhs, rhs, sc in zip(inst.senses, ax, inst.b, scale):
        if s == LE:
            v = (lhs - rhs) / sc
        elif s == GE:
            v = (rhs - lhs) / sc
        else:
            v = abs(lhs - rhs) / sc
        worst = max(worst, v)
    return worst


def min_cost(lg: LayeredGraph, theta: float = 1.0) -> LpSolution:
    """h* and the optimal flows at ``theta`` times the commodities' rates."""
    return solve(build_lp(lg).scaled(theta))


def region_boundary(lg: LayeredGraph, theta_tol: float = 1e-3, method: str = "bisect",
                    theta_max: float = 2.0**40) -> float:
    """Largest feasible scaling of the commodities' arrival rates.

    ``bisect`` brackets by doubling and then halves the bracket with
    feasibility probes until it is narrower than ``theta_tol``; the largest
    known-feasible end is returned.  ``direct`` treats the scale as an extra
    LP variable and maximizes it.  ``inf`` means every scaling is feasible.
    """
    base = build_lp(lg)
    if method == "direct":
        return _boundary_direct(base)
    if method != "bisect":
        raise ValueError(f"unknown method {method!r}")
    if theta_tol <= 0:
        raise ValueError("tolerance must be positive")
    if not is_feasible(base.scaled(0.0)):
        return 0.0
    lo, hi = 0.0, 1.0
    while is_feasible(base.scaled(hi)):
        lo = hi
        hi *= 2.0
        if hi > theta_max:
            return math.inf
    while hi - lo > theta_tol:
        mid = 0.5 * (lo + hi)
        if is_feasible(base.scaled(mid)):
            lo = mid
        else:
            hi = mid
    return lo


def _boundary_direct(inst: LpInstance) -> float:
    # theta becomes the last column; rate-driven right-hand sides move into it
    col = np.where(inst.rate_rows, -inst.b, 0.0)
    A = sp.hstack([inst.A, sp.csr_matrix(col.reshape(-1, 1))], format="csr")
    b = np.where(inst.rate_rows, 0.0, inst.b)
    c = np.zeros(A.shape[1])
    c[-1] = -1.0
    res = simplex(A, b, inst.senses, c)
    if res.status == "unbounded":
        return math.inf
    if res.status != "optimal":
        raise RuntimeError(f"boundary LP ended with status {res.status}")
    return float(res.x[-1])


def boundary_table(lg_for_L, Ls, theta_tol: float = 1e-3):
    """Rows (L, theta*, h* at theta=1 or None when infeasible) for each L.

    ``lg_for_L`` maps a max lifetime to the layered graph to evaluate.
    """
    rows = []
    for L in Ls:
        lg = lg_for_L(L)
        th = region_boundary(lg, theta_tol)
        sol = min_cost(lg) if th >= 1.0 else None
        rows.append((L, th, sol.objective if sol is not None and sol.feasible else None))
    return rows


def extract_randomized_policy(sol: LpSolution, lg: LayeredGraph) -> RoutingDistribution:
    """Routing probabilities implied by static flows.

    Cells whose denominator vanishes (nothing passes through them) hold.
    """
    if not sol.feasible or sol.flows is None:
        raise ValueError("need a feasible solution")
    topo = topology(lg)
    alpha = np.zeros(topo.flow_shape())
    out, inn = topo.scratch()
    denom = np.zeros(topo.queue_shape())
    bad = np.zeros(topo.queue_shape(), dtype=np.bool_)
    kernels.build_alpha_kernel(sol.flows, topo.rate_array(), 1.0, topo.src, topo.dst, topo.dest, topo.Lk,
                               alpha, 1, FEAS_TOL, out, inn, denom, bad)
    return RoutingDistribution(alpha)


def path_decomposition(lg: LayeredGraph, flows: np.ndarray, k: int, tol: float = 1e-9):
    """Split commodity ``k``'s flow (summed over lifetimes) into source-to-destination paths.

    Returns ``[(node list, amount), ...]`` largest first.  Sources are the
    commodity's arrival nodes.
    """
    topo = topology(lg)
    com = lg.commodities[k]
    f = flows[k].sum(axis=1).copy()
    sources = sorted({i for (i, _l) in com.rates})
    paths = []
    for s in sources:
        while True:
            path, edges, node, seen = [s], [], s, {s}
            while node != com.destination:
                cand = [e for e in range(topo.E) if topo.src[e] == node and f[e] > tol]
                if not cand:
                    break
                e = max(cand, key=lambda e: f[e])
                edges.append(e)
                node = int(topo.dst[e])
                if node in seen:
                    break
                seen.add(node)
                path.append(node)
            if not edges or node != com.destination:
                break
            amt = min(f[e] for e in edges)
            f[edges] -= amt
            paths.append((path, float(amt)))
    paths.sort(key=lambda p: -p[1])
    return paths


def export_lp(inst: LpInstance, path, name: str = "capacity") -> None:
    """Write the instance in CPLEX LP text format."""
    def vname(j):
        return f"x_{inst.var_k[j]}_{inst.var_e[j]}_{inst.var_l[j]}"

    def terms(pairs):
        parts = []
        for j, v in pairs:
            sign = "-" if v < 0 else "+"
            parts.append(f"{sign} {abs(v):.17g} {vname(j)}")
        s = " ".join(parts) or "0 " + vname(0)
        return s[2:] if s.startswith("+ ") else s

    lines = [f"\\ {name}", "Minimize", " obj: " + terms((j, v) for j, v in enumerate(inst.c) if v != 0),
             "Subject To"]
    A = inst.A.tocsr()
    op = {LE: "<=", GE: ">=", EQ: "="}
    for r in range(inst.num_rows):
        lo, hi = A.indptr[r], A.indptr[r + 1]
        pairs = zip(A.indices[lo:hi], A.data[lo:hi])
        lines.append(f" r{r}: {terms(pairs)} {op[inst.senses[r]]} {inst.b[r]:.17g}")
    lines.append("End")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(lines) + "\n")
