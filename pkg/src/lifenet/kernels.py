"""Per-slot numeric kernels.

Array conventions (K commodities, N nodes, E edges, Lmax max lifetime):

* queues ``Q[k, i, l]`` and virtual queues ``U[k, i, l]`` have shape
  ``(K, N, Lmax + 1)``; column 0 is never used by the lifetime-aware code.
* flow decisions ``x[k, e, l]`` have shape ``(K, E, Lmax + 1)``.
* arrivals ``a[k, i, l]`` share the queue shape.

The public modules wrap these so single-slot calls and the long-run loop in
:mod:`lifenet.sim` execute literally the same code.
"""
from __future__ import annotations

import numpy as np
from numba import njit

NEG_INF = -np.inf


@njit(cache=True)
def node_flows(x, src, dst, n_nodes, out, inn):
    """Per-node outgoing/incoming totals of one commodity's flow ``x[e, l]``."""
    out[:, :] = 0.0
    inn[:, :] = 0.0
    E, Lp1 = x.shape
    for e in range(E):
        i = src[e]
        j = dst[e]
        for l in range(Lp1):
            v = x[e, l]
            if v != 0.0:
                out[i, l] += v
                inn[j, l] += v


# ---------------------------------------------------------------- controller


@njit(cache=True)
def weights_kernel(U, Ud, src, dst, cost, dest, Lk, V, W):
    """Drift-plus-penalty weights; -inf marks transmissions that may not happen."""
    K, E, Lp1 = W.shape
    for k in range(K):
        d = dest[k]
        L = Lk[k]
        for e in range(E):
            i = src[e]
            j = dst[e]
            W[k, e, 0] = NEG_INF
            if i == d:
                for l in range(1, Lp1):
                    W[k, e, l] = NEG_INF
                continue
            cum_i = 0.0
            cum_j = 0.0
            pen = V * cost[e]
            for l in range(1, Lp1):
                if l > L:
                    W[k, e, l] = NEG_INF
                    continue
                cum_i += U[k, i, l]
                if j == d:
                    W[k, e, l] = -pen - cum_i + Ud[k]
                else:
                    W[k, e, l] = -pen - cum_i + cum_j
                    cum_j += U[k, j, l]


@njit(cache=True)
def allocate_kernel(W, group_ptr, group_edges, group_cap, nu):
    """Group-wise max-weight: one winner (edge, lifetime, commodity) per group.

    Ties go to the smallest lifetime, then the lowest commodity, then the
    lowest edge id.  Returns nothing; ``nu`` is overwritten.
    """
    K, E, Lp1 = W.shape
    nu[:, :, :] = 0.0
    G = group_cap.shape[0]
    for g in range(G):
        best = NEG_INF
        bk = -1
        be = -1
        bl = -1
        for l in range(1, Lp1):
            for k in range(K):
                for p in range(group_ptr[g], group_ptr[g + 1]):
                    e = group_edges[p]
                    w = W[k, e, l]
                    if w > best:
                        best = w
                        bk = k
                        be = e
                        bl = l
        if best > 0.0:
            nu[bk, be, bl] = group_cap[g]


@njit(cache=True)
def virtual_update_kernel(U, Ud, nu, a, A_used, gamma, src, dst, dest, Lk, out, inn):
    """Virtual queue update; returns nothing, fills U/Ud in place."""
    K = U.shape[0]
    N = U.shape[1]
    for k in range(K):
        d = dest[k]
        L = Lk[k]
        node_flows(nu[k], src, dst, N, out, inn)
        to_d = 0.0
        for l in range(1, L + 1):
            to_d += inn[d, l]
        v = Ud[k] + gamma[k] * A_used[k] - to_d
        Ud[k] = v if v > 0.0 else 0.0
        for i in range(N):
            if i == d:
                continue
            out_ge = 0.0
            in_ge_next = 0.0
            a_ge = 0.0
            for l in range(L, 0, -1):
                out_ge += out[i, l]
                a_ge += a[k, i, l]
                v = U[k, i, l] + out_ge - in_ge_next - a_ge
                U[k, i, l] = v if v > 0.0 else 0.0
                in_ge_next += inn[i, l]


# ---------------------------------------------------------------- physical queues


@njit(cache=True)
def availability_excess(Q, x, src, dst, dest, Lk, out, inn, excess):
    """excess[k, i, l] = max(0, outgoing - backlog); returns the largest excess."""
    K = Q.shape[0]
    N = Q.shape[1]
    worst = 0.0
    excess[:, :, :] = 0.0
    for k in range(K):
        node_flows(x[k], src, dst, N, out, inn)
        for i in range(N):
            for l in range(1, Q.shape[2]):
                ex = out[i, l] - Q[k, i, l]
                if ex > 0.0:
                    excess[k, i, l] = ex
                    if ex > worst:
                        worst = ex
    return worst


@njit(cache=True)
def advance_kernel(Q, x, a, src, dst, cost, dest, Lk, out, inn, delivered, dropped, slot_cost, tol):
    """Apply one slot of the lifetime queue dynamics in place.

    Returns the most negative residual seen before clamping (0 when clean);
    residuals below ``-tol`` indicate an availability breach.
    """
    K = Q.shape[0]
    N = Q.shape[1]
    E = x.shape[1]
    worst = 0.0
    for k in range(K):
        d = dest[k]
        L = Lk[k]
        node_flows(x[k], src, dst, N, out, inn)
        c = 0.0
        for e in range(E):
            s = 0.0
            for l in range(1, L + 1):
                s += x[k, e, l]
            c += cost[e] * s
        slot_cost[k] = c
        got = 0.0
        for l in range(1, L + 1):
            got += inn[d, l]
        delivered[k] = got
        lost = 0.0
        for i in range(N):
            if i == d:
                for l in range(Q.shape[2]):
                    Q[k, i, l] = 0.0
                continue
            for l in range(1, L + 1):
                r = Q[k, i, l] - out[i, l]
                if r < worst:
                    worst = r
            r1 = Q[k, i, 1] - out[i, 1] + inn[i, 1]
            lost += r1 if r1 > 0.0 else 0.0
            for l in range(1, L):
                v = Q[k, i, l + 1] - out[i, l + 1] + inn[i, l + 1] + a[k, i, l]
                Q[k, i, l] = v if v > 0.0 else 0.0
            Q[k, i, L] = a[k, i, L]
        dropped[k] = lost
    if worst < -tol:
        return worst
    return 0.0


# ---------------------------------------------------------------- flow matching


@njit(cache=True)
def build_alpha_kernel(nu_sum, a_sum, t, src, dst, dest, Lk, alpha, mode, tol, out, inn, denom, bad):
    """Randomized routing probabilities from empirical flow averages.

    Returns the number of (commodity, node, lifetime) cells whose
    distribution is ill-defined.  What happens to those cells depends on
    ``mode``: 0 leaves ``alpha`` untouched entirely when any cell is bad,
    1 keeps the old values of bad cells only, 2 rescales a bad cell's
    outflows so they forward its whole backlog in proportion.
    """
    K, E, Lp1 = nu_sum.shape
    N = a_sum.shape[1]
    inv_t = 1.0 / t
    n_bad = 0
    bad[:, :, :] = False
    for k in range(K):
        d = dest[k]
        L = Lk[k]
        node_flows(nu_sum[k], src, dst, N, out, inn)
        for i in range(N):
            denom[k, i, 0] = 0.0
            if i == d:
                for l in range(1, Lp1):
                    denom[k, i, l] = 0.0
                continue
            in_ge_next = 0.0
            out_ge_next = 0.0
            lam_ge = 0.0
            for l in range(L, 0, -1):
                lam_ge += a_sum[k, i, l]
                D = (in_ge_next + lam_ge - out_ge_next) * inv_t
                xo = out[i, l] * inv_t
                scale = (in_ge_next + lam_ge + out_ge_next) * inv_t
                thr = tol * (scale if scale > 1.0 else 1.0)
                denom[k, i, l] = D
                if xo > thr:
                    if D <= thr or xo > D + thr:
                        bad[k, i, l] = True
                        n_bad += 1
                elif D < -thr:
                    bad[k, i, l] = True
                    n_bad += 1
                in_ge_next += inn[i, l]
                out_ge_next += out[i, l]
    if n_bad > 0 and mode == 0:
        return n_bad
    for k in range(K):
        d = dest[k]
        L = Lk[k]
        if mode == 2 and n_bad > 0:
            node_flows(nu_sum[k], src, dst, N, out, inn)
        for e in range(E):
            i = src[e]
            for l in range(1, Lp1):
                if i == d or l > L:
                    alpha[k, e, l] = 0.0
                    continue
                D = denom[k, i, l]
                xv = nu_sum[k, e, l] * inv_t
                if bad[k, i, l]:
                    if mode == 1:
                        continue
                    xo = out[i, l] * inv_t
                    if xv <= 0.0 or xo <= 0.0:
                        alpha[k, e, l] = 0.0
                    else:
                        alpha[k, e, l] = xv / (D if D > xo else xo)
                    continue
                if xv <= 0.0 or D <= 0.0:
                    alpha[k, e, l] = 0.0
                else:
                    r = xv / D
                    alpha[k, e, l] = r if r < 1.0 else 1.0
    return n_bad


@njit(cache=True)
def realize_kernel(alpha, Q, src, mu):
    """Fluid split: mu[k, e, l] = alpha[k, e, l] * Q[k, src(e), l]."""
    K, E, Lp1 = alpha.shape
    for k in range(K):
        for e in range(E):
            i = src[e]
            for l in range(Lp1):
                mu[k, e, l] = alpha[k, e, l] * Q[k, i, l]


@njit(cache=True)
def realize_sampled_kernel(alpha, Q, out_ptr, out_edges, quantum, mu):
    """Sampled split: whole quanta are routed by sequential binomials.

    The fractional remainder below one quantum stays at the node.
    """
    K, E, Lp1 = alpha.shape
    N = Q.shape[1]
    mu[:, :, :] = 0.0
    for k in range(K):
        for i in range(N):
            for l in range(1, Lp1):
                q = Q[k, i, l]
                if q < quantum:
                    continue
                n_left = int(np.floor(q / quantum + 1e-12))
                p_left = 1.0
                for p in range(out_ptr[i], out_ptr[i + 1]):
                    e = out_edges[p]
                    pe = alpha[k, e, l]
                    if pe <= 0.0 or n_left == 0:
                        p_left -= pe
                        continue
                    if p_left <= 0.0:
                        break
                    prob = pe / p_left
                    if prob >= 1.0:
                        b = n_left
                    else:
                        b = np.random.binomial(n_left, prob)
                    mu[k, e, l] = b * quantum
                    n_left -= b
                    p_left -= pe


@njit(cache=True)
def cap_groups_kernel(mu, group_ptr, group_edges, group_cap, factor):
    """Scale each group's flow down to at most ``factor * capacity`` in this slot."""
    K, E, Lp1 = mu.shape
    for g in range(group_cap.shape[0]):
        tot = 0.0
        for p in range(group_ptr[g], group_ptr[g + 1]):
            e = group_edges[p]
            for k in range(K):
                for l in range(Lp1):
                    tot += mu[k, e, l]
        lim = factor * group_cap[g]
        if tot > lim and tot > 0.0:
            s = lim / tot
            for p in range(group_ptr[g], group_ptr[g + 1]):
                e = group_edges[p]
                for k in range(K):
                    for l in range(Lp1):
                        mu[k, e, l] *= s


# ---------------------------------------------------------------- baseline


@njit(cache=True)
def dcnc_decide_kernel(comp, src, dst, cost, dest, V, group_ptr, group_edges, group_cap, x, remaining):
    """Lifetime-agnostic max-weight with backlog clipping, oldest-first drain.

    ``comp[k, i, l]`` is the lifetime composition of node i's backlog; bucket
    0 holds outdated packets.  Fills ``x`` (same bucket indexing).
    """
    K, N, Lp1 = comp.shape
    x[:, :, :] = 0.0
    remaining[:, :, :] = comp
    for g in range(group_cap.shape[0]):
        best = NEG_INF
        bk = -1
        be = -1
        for k in range(K):
            d = dest[k]
            for p in range(group_ptr[g], group_ptr[g + 1]):
                e = group_edges[p]
                i = src[e]
                if i == d:
                    continue
                j = dst[e]
                qi = 0.0
                for l in range(Lp1):
                    qi += comp[k, i, l]
                qj = 0.0
                if j != d:
                    for l in range(Lp1):
                        qj += comp[k, j, l]
                w = qi - qj - V * cost[e]
                if w > best:
                    best = w
                    bk = k
                    be = e
        if best > 0.0:
            i = src[be]
            want = group_cap[g]
            for l in range(Lp1):
                if want <= 0.0:
                    break
                take = remaining[bk, i, l]
                if take > want:
                    take = want
                if take > 0.0:
                    x[bk, be, l] += take
                    remaining[bk, i, l] -= take
                    want -= take


@njit(cache=True)
def dcnc_advance_kernel(comp, remaining, x, a, dst, cost, dest, Lk, timely, raw, slot_cost):
    """Age held packets, move transmitted ones, absorb deliveries (no drops)."""
    K, N, Lp1 = comp.shape
    E = x.shape[1]
    for k in range(K):
        d = dest[k]
        L = Lk[k]
        comp[k, :, :] = 0.0
        for i in range(N):
            if i == d:
                continue
            comp[k, i, 0] += remaining[k, i, 0] + remaining[k, i, 1]
            for l in range(2, L + 1):
                comp[k, i, l - 1] += remaining[k, i, l]
        tt = 0.0
        rr = 0.0
        c = 0.0
        for e in range(E):
            j = dst[e]
            s = 0.0
            for l in range(L + 1):
                v = x[k, e, l]
                if v == 0.0:
                    continue
                s += v
                if j == d:
                    rr += v
                    if l >= 1:
                        tt += v
                else:
                    comp[k, j, l - 1 if l >= 1 else 0] += v
            c += cost[e] * s
        for i in range(N):
            if i == d:
                continue
            for l in range(1, L + 1):
                comp[k, i, l] += a[k, i, l]
        timely[k] = tt
        raw[k] = rr
        slot_cost[k] = c


@njit(cache=True)
def seed_rng(s):
    """Seed numba's internal generator (used by the sampled realization)."""
    np.random.seed(s)
