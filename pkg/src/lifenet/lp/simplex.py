"""Two-phase simplex for  min c.x  s.t.  A x (<=, >=, =) b,  x >= 0.

The floating-point path is a revised simplex with a dense basis inverse
(updated by elementary row operations and refactorized periodically) and
sparse pricing; Dantzig pricing falls back to Bland's rule after a run of
degenerate pivots.  ``exact=True`` switches to a rational tableau with
Bland's rule, meant for tiny certification instances.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np
import scipy.sparse as sp

log = logging.getLogger(__name__)

LE, GE, EQ = "L", "G", "E"


class LpError(ValueError):
    """Malformed linear program."""


@dataclass
class LpResult:
    status: str  # "optimal" | "infeasible" | "unbounded" | "iteration_limit"
    x: np.ndarray | None
    objective: float | None
    iterations: int = 0
    duals: np.ndarray | None = None
    info: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.status == "optimal"


def _normalize(A, b, senses):
    A = sp.csr_matrix(A, dtype=float)
    b = np.asarray(b, dtype=float).copy()
    m, n = A.shape
    if b.shape != (m,) or len(senses) != m:
        raise LpError("row count mismatch between A, b and senses")
    if not np.all(np.isfinite(b)) or not np.all(np.isfinite(A.data)):
        raise LpError("non-finite coefficients")
    senses = list(senses)
    for s in senses:
        if s not in (LE, GE, EQ):
            raise LpError(f"unknown row sense {s!r}")
    flip = b < 0
    if flip.any():
        D = sp.diags(np.where(flip, -1.0, 1.0))
        A = (D @ A).tocsr()
        b[flip] = -b[flip]
        senses = [({LE: GE, GE: LE}.get(s, s) if f else s) for s, f in zip(senses, flip)]
    return A, b, senses, flip


class _Revised:
    """Dense-inverse revised simplex on an augmented standard form."""

    def __init__(self, A, b, tol, refactor_every, max_iter):
        self.A = A.tocsc()
        self.AT = A.T.tocsr()
        self.b = b
        self.m, self.ntot = A.shape
        self.tol = tol
        self.refactor_every = refactor_every
        self.max_iter = max_iter
        self.iterations = 0

    def refactor(self):
        B = self.A[:, self.basis].toarray()
        self.Binv = np.linalg.inv(B)
        self.xB = self.Binv @ self.b
        self.xB[np.abs(self.xB) < 1e-13] = 0.0
        self.since_refactor = 0

    def column(self, j):
        col = self.A[:, j]
        return self.Binv[:, col.indices] @ col.data

    def run(self, c, allowed):
        """Optimize from the current basis; returns "optimal" | "unbounded" | "iteration_limit"."""
        in_basis = np.zeros(self.ntot, dtype=bool)
        in_basis[self.basis] = True
        degenerate_run = 0
        bland = False
        cscale = max(1.0, float(np.abs(c).max(initial=0.0)))
        while True:
            if self.iterations >= self.max_iter:
                return "iteration_limit"
            y = c[self.basis] @ self.Binv
            d = c - self.AT @ y
            d[in_basis] = 0.0
            d[~allowed] = 0.0
            thr = -self.tol * cscale
            if bland:
                cand = np.nonzero(d < thr)[0]
                if cand.size == 0:
                    return "optimal"
                q = int(cand[0])
            else:
                q = int(np.argmin(d))
                if d[q] >= thr:
                    return "optimal"
            u = self.column(q)
            pos = u > self.tol
            if not pos.any():
                return "unbounded"
            idx = np.nonzero(pos)[0]
            ratios = self.xB[idx] / u[idx]
            rmin = ratios.min()
            ties = idx[ratios <= rmin + self.tol * max(1.0, abs(rmin))]
            if bland:
                r = int(ties[np.argmin(np.asarray(self.basis)[ties])])
            else:
                r = int(ties[np.argmax(u[ties])])
            step = max(self.xB[r] / u[r], 0.0)
            if step <= self.tol:
                degenerate_run += 1
                if degenerate_run > 50 and not bland:
                    bland = True
            else:
                degenerate_run = 0
                bland = False
            self.xB -= step * u
            self.xB[r] = step
            self.xB[np.abs(self.xB) < 1e-13] = 0.0
            piv = self.Binv[r] / u[r]
            u_other = u.copy()
            u_other[r] = 0.0
            self.Binv -= np.outer(u_other, piv)
            self.Binv[r] = piv
            in_basis[self.basis[r]] = False
            self.basis[r] = q
            in_basis[q] = True
            self.iterations += 1
            self.since_refactor += 1
            if self.since_refactor >= self.refactor_every:
                self.refactor()
                if np.any(self.xB < -1e-7 * max(1.0, float(np.abs(self.b).max(initial=0.0)))):
                    log.debug("basis lost feasibility after refactorization")
                self.xB = np.maximum(self.xB, 0.0)


def _solve_float(A, b, senses, c, tol, max_iter, refactor_every, phase1_only):
    m, n = A.shape
    # slack/surplus columns, then artificials for G/E rows
    slack_rows = [i for i, s in enumerate(senses) if s != EQ]
    art_rows = [i for i, s in enumerate(senses) if s != LE]
    sgn = np.array([1.0 if senses[i] == LE else -1.0 for i in slack_rows])
    S = sp.csc_matrix((sgn, (slack_rows, np.arange(len(slack_rows)))), shape=(m, len(slack_rows)))
    R = sp.csc_matrix((np.ones(len(art_rows)), (art_rows, np.arange(len(art_rows)))), shape=(m, len(art_rows)))
    Afull = sp.hstack([A, S, R], format="csc")
    n_s, n_a = len(slack_rows), len(art_rows)
    ntot = n + n_s + n_a
    art_cols = np.arange(n + n_s, ntot)

    basis = np.empty(m, dtype=np.int64)
    slack_of_row = {r: n + p for p, r in enumerate(slack_rows)}
    art_of_row = {r: n + n_s + p for p, r in enumerate(art_rows)}
    for i in range(m):
        basis[i] = slack_of_row[i] if senses[i] == LE else art_of_row[i]

    eng = _Revised(Afull, b, tol, refactor_every, max_iter)
    eng.basis = basis
    eng.refactor()

    bscale = max(1.0, float(np.abs(b).max(initial=0.0)))
    if n_a:
        c1 = np.zeros(ntot)
        c1[art_cols] = 1.0
        allowed = np.ones(ntot, dtype=bool)
        st = eng.run(c1, allowed)
        if st == "iteration_limit":
            return LpResult(st, None, None, eng.iterations)
        infeas = float(eng.xB[np.isin(eng.basis, art_cols)].sum())
        if infeas > 1e-7 * bscale:
            return LpResult("infeasible", None, None, eng.iterations, info={"phase1": infeas})
        _drive_out_artificials(eng, art_cols, n + n_s, tol)
    if phase1_only:
        x = _primal(eng, n)
        return LpResult("optimal", x, None, eng.iterations)
    cfull = np.zeros(ntot)
    cfull[:n] = c
    allowed = np.ones(ntot, dtype=bool)
    allowed[art_cols] = False
    st = eng.run(cfull, allowed)
    if st != "optimal":
        return LpResult(st, None, None, eng.iterations)
    eng.refactor()
    x = _primal(eng, n)
    y = cfull[eng.basis] @ eng.Binv
    return LpResult("optimal", x, float(c @ x), eng.iterations, duals=y)


def _drive_out_artificials(eng: _Revised, art_cols, n_real, tol):
    art = set(int(a) for a in art_cols)
    for r in range(eng.m):
        if int(eng.basis[r]) not in art:
            continue
        row = np.asarray(eng.AT[:n_real] @ eng.Binv[r]).ravel()
        in_basis = np.zeros(n_real, dtype=bool)
        nb = eng.basis[eng.basis < n_real]
        in_basis[nb] = True
        row[in_basis] = 0.0
        j = int(np.argmax(np.abs(row)))
        if abs(row[j]) <= 1e-9:
            continue  # redundant row; the artificial stays basic at zero
        u = eng.column(j)
        piv = eng.Binv[r] / u[r]
        step = eng.xB[r] / u[r]
        eng.xB -= step * u
        eng.xB[r] = step
        u_other = u.copy()
        u_other[r] = 0.0
        eng.Binv -= np.outer(u_other, piv)
        eng.Binv[r] = piv
        eng.basis[r] = j
        eng.iterations += 1
    eng.refactor()
    eng.xB = np.maximum(eng.xB, 0.0)


def _primal(eng: _Revised, n):
    x = np.zeros(n)
    mask = eng.basis < n
    x[eng.basis[mask]] = np.maximum(eng.xB[mask], 0.0)
    return x


# ---------------------------------------------------------------- exact tableau


def _solve_exact(A, b, senses, c, phase1_only, max_iter):
    A = [[Fraction(v) for v in row] for row in np.asarray(A.toarray() if sp.issparse(A) else A, dtype=object)]
    b = [Fraction(v) for v in b]
    c = [Fraction(v) for v in c]
    m = len(b)
    n = len(c)
    for i in range(m):
        if b[i] < 0:
            A[i] = [-v for v in A[i]]
            b[i] = -b[i]
            senses[i] = {LE: GE, GE: LE}.get(senses[i], senses[i])
    cols = n
    T = [row[:] for row in A]
    basis = [-1] * m
    art = []
    for i, s in enumerate(senses):
        if s != EQ:
            for r in range(m):
                T[r].append(Fraction(1 if s == LE else -1) if r == i else Fraction(0))
            if s == LE:
                basis[i] = cols
            cols += 1
    n_struct = cols
    for i, s in enumerate(senses):
        if s != LE:
            for r in range(m):
                T[r].append(Fraction(1) if r == i else Fraction(0))
            basis[i] = cols
            art.append(cols)
            cols += 1
    rhs = b[:]
    iters = 0

    def pivot(r, q):
        pv = T[r][q]
        T[r] = [v / pv for v in T[r]]
        rhs[r] = rhs[r] / pv
        for i in range(m):
            if i != r and T[i][q] != 0:
                f = T[i][q]
                T[i] = [vi - f * vr for vi, vr in zip(T[i], T[r])]
                rhs[i] = rhs[i] - f * rhs[r]
        basis[r] = q

    def optimize(cost, allowed):
        nonlocal iters
        while True:
            if iters >= max_iter:
                return "iteration_limit"
            red = []
            for j in range(cols):
                if not allowed[j] or j in basis:
                    red.append(Fraction(0))
                    continue
                red.append(cost[j] - sum(cost[basis[i]] * T[i][j] for i in range(m)))
            q = next((j for j in range(cols) if red[j] < 0), None)
            if q is None:
                return "optimal"
            best = None
            for i in range(m):
                if T[i][q] > 0:
                    ratio = rhs[i] / T[i][q]
                    if best is None or ratio < best[0] or (ratio == best[0] and basis[i] < basis[best[1]]):
                        best = (ratio, i)
            if best is None:
                return "unbounded"
            pivot(best[1], q)
            iters += 1

    if art:
        c1 = [Fraction(1) if j in art else Fraction(0) for j in range(cols)]
        st = optimize(c1, [True] * cols)
        if st != "optimal":
            return LpResult(st, None, None, iters)
        if sum(rhs[i] for i in range(m) if basis[i] in art) > 0:
            return LpResult("infeasible", None, None, iters)
        for r in range(m):
            if basis[r] in art:
                q = next((j for j in range(n_struct) if j not in basis and T[r][j] != 0), None)
                if q is not None:
                    pivot(r, q)
    x = [Fraction(0)] * n
    if not phase1_only:
        cost = c + [Fraction(0)] * (cols - n)
        allowed = [j not in art for j in range(cols)]
        st = optimize(cost, allowed)
        if st != "optimal":
            return LpResult(st, None, None, iters)
    for i in range(m):
        if basis[i] < n:
            x[basis[i]] = rhs[i]
    obj = None if phase1_only else sum(ci * xi for ci, xi in zip(c, x))
    return LpResult("optimal", np.array(x, dtype=object), obj, iters, info={"exact": True})


def simplex(A, b, senses: Sequence[str], c, *, exact: bool = False, phase1_only: bool = False,
            tol: float = 1e-9, max_iter: int = 200_000, refactor_every: int = 60) -> LpResult:
    """Solve ``min c.x`` subject to the rows of ``A`` with senses "L"/"G"/"E" and ``x >= 0``.

    ``phase1_only`` stops once a feasible basis is found (``objective`` is
    then None).
    """
    c = np.asarray(c, dtype=object if exact else float)
    if sp.issparse(A):
        m, n = A.shape
    else:
        A = np.asarray(A, dtype=object if exact else float)
        if A.ndim != 2:
            raise LpError("A must be two-dimensional")
        m, n = A.shape
    if c.shape != (n,):
        raise LpError("objective length does not match the column count")
    if exact:
        return _solve_exact(A, list(b), list(senses), list(c), phase1_only, max_iter)
    if m == 0:
        if np.any(np.asarray(c, dtype=float) < 0):
            return LpResult("unbounded", None, None)
        return LpResult("optimal", np.zeros(n), 0.0)
    An, bn, sn, flip = _normalize(A, b, senses)
    res = _solve_float(An, bn, sn, np.asarray(c, dtype=float), tol, max_iter, refactor_every, phase1_only)
    if res.duals is not None:
        res.duals[flip] = -res.duals[flip]
    return res
