import itertools
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.optimize import linprog

from lifenet.lp.simplex import EQ, GE, LE, LpError, simplex


def vertex_enumeration(A, b, senses, c):
    """Brute force: every basic solution of the rows plus x >= 0; returns (status, best value)."""
    A = np.asarray(A, float)
    m, n = A.shape
    # constraint normals: rows as written, then x_j >= 0
    G = np.vstack([A, np.eye(n)])
    h = np.concatenate([b, np.zeros(n)])
    best = None
    for active in itertools.combinations(range(m + n), n):
        M = G[list(active)]
        if abs(np.linalg.det(M)) < 1e-9:
            continue
        x = np.linalg.solve(M, h[list(active)])
        if np.any(x < -1e-7):
            continue
        ax = A @ x
        ok = all((s == LE and ax[i] <= b[i] + 1e-7) or (s == GE and ax[i] >= b[i] - 1e-7)
                 or (s == EQ and abs(ax[i] - b[i]) <= 1e-7) for i, s in enumerate(senses))
        if ok:
            v = float(c @ x)
            best = v if best is None else min(best, v)
    return ("infeasible", None) if best is None else ("optimal", best)


@st.composite
def bounded_lps(draw):
    n = draw(st.integers(1, 6))
    m = draw(st.integers(1, 4))
    ints = st.integers(-4, 4)
    A = np.array(draw(st.lists(st.lists(ints, min_size=n, max_size=n), min_size=m, max_size=m)), float)
    b = np.array(draw(st.lists(st.integers(-6, 10), min_size=m, max_size=m)), float)
    senses = draw(st.lists(st.sampled_from([LE, GE, EQ]), min_size=m, max_size=m))
    c = np.array(draw(st.lists(ints, min_size=n, max_size=n)), float)
    # a box row keeps every instance bounded
    A = np.vstack([A, np.ones(n)])
    b = np.append(b, 12.0)
    senses = senses + [LE]
    return A, b, senses, c


def _check_feasible(A, b, senses, x, tol=1e-7):
    ax = A @ x
    assert np.all(x >= -tol)
    for i, s in enumerate(senses):
        if s == LE:
            assert ax[i] <= b[i] + tol
        elif s == GE:
            assert ax[i] >= b[i] - tol
        else:
            assert abs(ax[i] - b[i]) <= tol


@given(bounded_lps())
def test_matches_vertex_enumeration(lp):
    A, b, senses, c = lp
    status, best = vertex_enumeration(A, b, senses, c)
    res = simplex(A, b, senses, c)
    assert res.status == status
    if status == "optimal":
        assert res.objective == pytest.approx(best, abs=1e-7)
        _check_feasible(A, b, senses, res.x)


@given(bounded_lps())
def test_exact_mode_agrees(lp):
    A, b, senses, c = lp
    fl = simplex(A, b, senses, c)
    ex = simplex(A.astype(int).tolist(), [int(v) for v in b], senses, [int(v) for v in c], exact=True)
    assert ex.status == fl.status
    if ex.status == "optimal":
        assert isinstance(ex.objective, Fraction)
        assert float(ex.objective) == pytest.approx(fl.objective, abs=1e-7)


@given(bounded_lps())
def test_phase_one_finds_feasible_point(lp):
    A, b, senses, c = lp
    res = simplex(A, b, senses, c, phase1_only=True)
    status, _ = vertex_enumeration(A, b, senses, c)
    assert res.status == status
    if status == "optimal":
        _check_feasible(A, b, senses, res.x)


@given(bounded_lps())
def test_duals_close_the_gap(lp):
    A, b, senses, c = lp
    res = simplex(A, b, senses, c)
    if res.status != "optimal" or res.duals is None:
        return
    y = res.duals
    assert float(b @ y) == pytest.approx(res.objective, abs=1e-6)
    # dual feasibility: reduced costs non-negative
    assert np.all(c - A.T @ y >= -1e-7)


def test_unbounded_detected():
    res = simplex([[1.0, -1.0]], [1.0], [LE], [-1.0, 0.0])
    assert res.status == "unbounded"


def test_beale_cycling_example_terminates():
    # classic example that cycles under the textbook Dantzig rule without anti-cycling
    c = np.array([-0.75, 150, -0.02, 6])
    A = np.array([[0.25, -60, -0.04, 9], [0.5, -90, -0.02, 3], [0, 0, 1, 0]])
    b = np.array([0.0, 0.0, 1.0])
    res = simplex(A, b, [LE, LE, LE], c)
    assert res.status == "optimal"
    assert res.objective == pytest.approx(-0.05)
    Af = [[Fraction(1, 4), -60, Fraction(-1, 25), 9], [Fraction(1, 2), -90, Fraction(-1, 50), 3], [0, 0, 1, 0]]
    ex = simplex(Af, [0, 0, 1], [LE, LE, LE], [Fraction(-3, 4), 150, Fraction(-1, 50), 6], exact=True)
    assert ex.objective == Fraction(-1, 20)


def test_malformed_input():
    with pytest.raises(LpError):
        simplex([[1.0]], [1.0, 2.0], [LE], [1.0])
    with pytest.raises(LpError):
        simplex([[1.0]], [1.0], ["X"], [1.0])
    with pytest.raises(LpError):
        simplex([[1.0]], [1.0], [LE], [1.0, 2.0])
    with pytest.raises(LpError):
        simplex([[np.inf]], [1.0], [LE], [1.0])


@given(st.integers(0, 2**31))
def test_random_transport_against_linprog(seed):
    rng = np.random.default_rng(seed)
    ns, nd = rng.integers(2, 5), rng.integers(2, 5)
    supply = rng.integers(5, 20, size=ns).astype(float)
    demand = rng.integers(1, 8, size=nd).astype(float)
    if demand.sum() > supply.sum():
        demand *= supply.sum() / demand.sum() * 0.9
    cost = rng.integers(1, 10, size=ns * nd).astype(float)
    A, b, senses = [], [], []
    for i in range(ns):
        row = np.zeros(ns * nd)
        row[i * nd:(i + 1) * nd] = 1
        A.append(row), b.append(supply[i]), senses.append(LE)
    for j in range(nd):
        row = np.zeros(ns * nd)
        row[j::nd] = 1
        A.append(row), b.append(demand[j]), senses.append(GE)
    A = np.array(A)
    ours = simplex(A, np.array(b), senses, cost)
    ref = linprog(cost, A_ub=np.vstack([A[:ns], -A[ns:]]), b_ub=np.concatenate([supply, -demand]),
                  bounds=(0, None), method="highs")
    assert ours.status == "optimal" and ref.status == 0
    assert ours.objective == pytest.approx(ref.fun, rel=1e-9, abs=1e-9)
