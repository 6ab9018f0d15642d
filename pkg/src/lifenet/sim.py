"""Time-slotted closed loop for the proposed policy and the backpressure baseline.

Slot order for the proposed policy: draw arrivals; the virtual controller
picks nu(t) and updates its queues; the routing distribution is rebuilt from
the averages over slots 0..t-1 (or kept on skip) and applied to the current
backlog to get mu(t); the averages absorb nu(t) and a(t); the physical
queues advance.  Arrivals of slot t become usable in slot t+1.
"""
from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np
from numba import njit

from . import kernels
from .flowmatch import MATCH_MODES, SKIP_TOL, flow_matching_gap
from .model import CloudScenario, LayeredGraph, build_layered_graph
from .queueing import InvariantError
from .topology import topology

log = logging.getLogger(__name__)

POLICIES = ("proposed", "dcnc")
PROCESSES = ("poisson", "deterministic", "uniform")
SWEEP_AXES = ("lambda", "V", "L")


# ---------------------------------------------------------------- arrivals


class ArrivalGenerator:
    """I.i.d. per-(commodity, node, lifetime) arrivals, truncated at A_max.

    Only streams with a positive mean rate are sampled.  ``uniform`` draws
    from [0, 2*rate].
    """

    def __init__(self, lg: LayeredGraph, process: str = "poisson", seed=0):
        if process not in PROCESSES:
            raise ValueError(f"unknown arrival process {process!r}")
        self.process = process
        ks, nodes, ls, rates, caps = [], [], [], [], []
        for k, c in enumerate(lg.commodities):
            a_max = c.a_max if c.a_max is not None else np.inf
            for (i, l), r in sorted(c.rates.items()):
                if r > 0:
                    ks.append(k)
                    nodes.append(i)
                    ls.append(l)
                    rates.append(r)
                    caps.append(a_max)
        self.k = np.array(ks, dtype=np.int64)
        self.node = np.array(nodes, dtype=np.int64)
        self.lifetime = np.array(ls, dtype=np.int64)
        self.rate = np.array(rates, dtype=float)
        self.cap = np.array(caps, dtype=float)
        self.rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)

    @property
    def num_streams(self) -> int:
        return len(self.rate)

    def draw(self, n: int) -> np.ndarray:
        """``(n, streams)`` samples."""
        S = self.num_streams
        if self.process == "deterministic":
            out = np.broadcast_to(self.rate, (n, S)).copy()
        elif self.process == "poisson":
            out = self.rng.poisson(self.rate, size=(n, S)).astype(float)
        else:
            out = self.rng.uniform(0.0, 2.0 * self.rate, size=(n, S))
        np.minimum(out, self.cap, out=out)
        return out

    def dense(self, sample_row: np.ndarray, shape) -> np.ndarray:
        a = np.zeros(shape)
        np.add.at(a, (self.k, self.node, self.lifetime), sample_row)
        return a


def replication_seed(master: int, replication: int) -> np.random.SeedSequence:
    """Seed of replication ``r``: SeedSequence([master, r]), the same for every sweep value."""
    return np.random.SeedSequence([int(master), int(replication)])


# ---------------------------------------------------------------- config & records


@dataclass(frozen=True)
class RunConfig:
    policy: str = "proposed"
    T: int = 10_000
    seed: int = 0
    V: float = 0.0  # in the scenario's native flow units
    process: str = "poisson"
    matching: str = "clip"
    quantum: float | None = None  # sampled realization when set
    peak_cap: float | None = None  # per-slot cap on mu as a multiple of capacity
    arrival_delay: int = 0
    chunk: int = 10_000
    cost_warmup: int = 0

    def __post_init__(self):
        if self.policy not in POLICIES:
            raise ValueError(f"unknown policy {self.policy!r}")
        if int(self.T) != self.T or self.T < 1:
            raise ValueError("horizon T must be a positive integer")
        if self.V < 0:
            raise ValueError("V must be non-negative")
        if self.process not in PROCESSES:
            raise ValueError(f"unknown arrival process {self.process!r}")
        if self.matching not in MATCH_MODES:
            raise ValueError(f"unknown matching mode {self.matching!r}")
        if self.quantum is not None and self.quantum <= 0:
            raise ValueError("quantum must be positive")
        if self.peak_cap is not None and self.peak_cap <= 0:
            raise ValueError("peak cap factor must be positive")
        if self.arrival_delay < 0 or self.chunk < 1 or not 0 <= self.cost_warmup < self.T:
            raise ValueError("bad arrival delay, chunk size or warm-up")


@dataclass
class MetricsRecord:
    """Per-slot series.  ``delivered`` is per commodity, the rest are totals."""

    delivered: np.ndarray  # (T, K) timely deliveries
    delivered_raw: np.ndarray  # (T,)
    dropped: np.ndarray
    cost: np.ndarray
    backlog: np.ndarray
    virtual_backlog: np.ndarray
    virtual_delivered: np.ndarray
    virtual_cost: np.ndarray
    skipped: np.ndarray  # bool

    FIELDS = ("delivered", "delivered_raw", "dropped", "cost", "backlog", "virtual_backlog",
              "virtual_delivered", "virtual_cost")

    @classmethod
    def allocate(cls, T: int, K: int) -> "MetricsRecord":
        z = lambda: np.zeros(T)  # noqa: E731
        return cls(np.zeros((T, K)), z(), z(), z(), z(), z(), z(), z(), np.zeros(T, dtype=np.bool_))

    @property
    def T(self) -> int:
        return self.delivered.shape[0]

    def series(self, name: str) -> np.ndarray:
        v = getattr(self, name)
        return v.sum(axis=1) if name == "delivered" else v

    def running_average(self, name: str) -> np.ndarray:
        s = self.series(name)
        return np.cumsum(s) / np.arange(1, len(s) + 1)


@dataclass
class RunResult:
    config: RunConfig
    metrics: MetricsRecord
    state: dict
    summary: dict = field(default_factory=dict)
    gap_series: list = field(default_factory=list)  # (slot, gap)


# ---------------------------------------------------------------- numba loops


@njit(cache=True)
def _proposed_chunk(t0, arr, s_k, s_i, s_l, Q, U, Ud, nu_sum, a_sum, mu_sum, alpha, A_ring,
                    src, dst, cost, dest, Lk, gamma, gptr, gedges, gcap, out_ptr, out_edges,
                    V, mode, skip_tol, quantum, cap_factor, tau,
                    m_del, m_raw, m_drop, m_cost, m_back, m_ub, m_vdel, m_vcost, m_skip):
    n, S = arr.shape
    K, N, Lp1 = Q.shape
    E = src.shape[0]
    W = np.empty((K, E, Lp1))
    nu = np.zeros((K, E, Lp1))
    mu = np.zeros((K, E, Lp1))
    a = np.zeros((K, N, Lp1))
    out = np.zeros((N, Lp1))
    inn = np.zeros((N, Lp1))
    denom = np.zeros((K, N, Lp1))
    bad = np.zeros((K, N, Lp1), dtype=np.bool_)
    A_now = np.zeros(K)
    A_used = np.zeros(K)
    dk = np.zeros(K)
    drk = np.zeros(K)
    ck = np.zeros(K)
    R = A_ring.shape[0]
    for s in range(n):
        t = t0 + s
        a[:, :, :] = 0.0
        A_now[:] = 0.0
        for q in range(S):
            a[s_k[q], s_i[q], s_l[q]] += arr[s, q]
            A_now[s_k[q]] += arr[s, q]
        # virtual network
        kernels.weights_kernel(U, Ud, src, dst, cost, dest, Lk, V, W)
        kernels.allocate_kernel(W, gptr, gedges, gcap, nu)
        if tau == 0:
            A_used[:] = A_now
        else:
            A_ring[t % R, :] = A_now
            if t >= tau:
                A_used[:] = A_ring[(t - tau) % R, :]
            else:
                A_used[:] = 0.0
        kernels.virtual_update_kernel(U, Ud, nu, a, A_used, gamma, src, dst, dest, Lk, out, inn)
        # actual network
        skipped = False
        if t >= 1:
            nb = kernels.build_alpha_kernel(nu_sum, a_sum, float(t), src, dst, dest, Lk, alpha, mode,
                                            skip_tol, out, inn, denom, bad)
            skipped = nb > 0
        if quantum > 0.0:
            kernels.realize_sampled_kernel(alpha, Q, out_ptr, out_edges, quantum, mu)
        else:
            kernels.realize_kernel(alpha, Q, src, mu)
        if cap_factor > 0.0:
            kernels.cap_groups_kernel(mu, gptr, gedges, gcap, cap_factor)
        nu_sum += nu
        a_sum += a
        worst = kernels.advance_kernel(Q, mu, a, src, dst, cost, dest, Lk, out, inn, dk, drk, ck, 1e-7)
        if worst < 0.0:
            return t
        mu_sum += mu
        # metrics
        vd = 0.0
        vc = 0.0
        for k in range(K):
            d = dest[k]
            for e in range(E):
                for l in range(1, Lp1):
                    v = nu[k, e, l]
                    if v != 0.0:
                        vc += cost[e] * v
                        if dst[e] == d:
                            vd += v
        tot_d = 0.0
        for k in range(K):
            m_del[t, k] = dk[k]
            tot_d += dk[k]
        m_raw[t] = tot_d
        m_drop[t] = drk.sum()
        m_cost[t] = ck.sum()
        m_back[t] = Q.sum()
        m_ub[t] = U.sum() + Ud.sum()
        m_vdel[t] = vd
        m_vcost[t] = vc
        m_skip[t] = skipped
    return -1


@njit(cache=True)
def _dcnc_chunk(t0, arr, s_k, s_i, s_l, comp, x_sum, src, dst, cost, dest, Lk, V, gptr, gedges, gcap,
                m_del, m_raw, m_cost, m_back):
    n, S = arr.shape
    K, N, Lp1 = comp.shape
    E = src.shape[0]
    x = np.zeros((K, E, Lp1))
    remaining = np.zeros((K, N, Lp1))
    a = np.zeros((K, N, Lp1))
    tk = np.zeros(K)
    rk = np.zeros(K)
    ck = np.zeros(K)
    for s in range(n):
        t = t0 + s
        a[:, :, :] = 0.0
        for q in range(S):
            a[s_k[q], s_i[q], s_l[q]] += arr[s, q]
        kernels.dcnc_decide_kernel(comp, src, dst, cost, dest, V, gptr, gedges, gcap, x, remaining)
        kernels.dcnc_advance_kernel(comp, remaining, x, a, dst, cost, dest, Lk, tk, rk, ck)
        x_sum += x
        for k in range(K):
            m_del[t, k] = tk[k]
        m_raw[t] = rk.sum()
        m_cost[t] = ck.sum()
        m_back[t] = comp.sum()
    return -1


# ---------------------------------------------------------------- driver


def run(lg: LayeredGraph, cfg: RunConfig, seed_seq: np.random.SeedSequence | None = None) -> RunResult:
    """Simulate ``cfg.T`` slots; deterministic in (lg, cfg, seed)."""
    topo = topology(lg)
    K = topo.K
    ss = seed_seq if seed_seq is not None else np.random.SeedSequence(int(cfg.seed))
    arr_ss, pkt_ss = ss.spawn(2)
    gen = ArrivalGenerator(lg, cfg.process, np.random.default_rng(arr_ss))
    T = int(cfg.T)
    rec = MetricsRecord.allocate(T, K)
    gaps = []
    if cfg.policy == "proposed":
        state = _run_proposed(lg, topo, cfg, gen, rec, gaps, pkt_ss)
    else:
        state = _run_dcnc(lg, topo, cfg, gen, rec)
    res = RunResult(cfg, rec, state, gap_series=gaps)
    res.summary = summarize(res, lg)
    return res


def _run_proposed(lg, topo, cfg, gen, rec, gaps, pkt_ss):
    Q = np.zeros(topo.queue_shape())
    U = np.zeros(topo.queue_shape())
    Ud = np.zeros(topo.K)
    nu_sum = np.zeros(topo.flow_shape())
    mu_sum = np.zeros(topo.flow_shape())
    a_sum = np.zeros(topo.queue_shape())
    alpha = np.zeros(topo.flow_shape())
    ring = np.zeros((cfg.arrival_delay + 1, topo.K))
    if cfg.quantum is not None:
        kernels.seed_rng(int(pkt_ss.generate_state(1)[0]))
    injected = 0.0
    t = 0
    while t < cfg.T:
        n = min(cfg.chunk, cfg.T - t)
        arr = gen.draw(n)
        injected += float(arr.sum())
        bad = _proposed_chunk(
            t, arr, gen.k, gen.node, gen.lifetime, Q, U, Ud, nu_sum, a_sum, mu_sum, alpha, ring,
            topo.src, topo.dst, topo.cost, topo.dest, topo.Lk, topo.gamma,
            topo.group_ptr, topo.group_edges, topo.group_cap, topo.out_ptr, topo.out_edges,
            float(cfg.V), MATCH_MODES[cfg.matching], SKIP_TOL, float(cfg.quantum or 0.0), float(cfg.peak_cap or 0.0),
            int(cfg.arrival_delay),
            rec.delivered, rec.delivered_raw, rec.dropped, rec.cost, rec.backlog, rec.virtual_backlog,
            rec.virtual_delivered, rec.virtual_cost, rec.skipped)
        state = dict(Q=Q, U=U, Ud=Ud, nu_sum=nu_sum, mu_sum=mu_sum, a_sum=a_sum, alpha=alpha)
        if bad >= 0:
            raise SimulationAborted(f"availability breach in slot {bad}", bad, state)
        t += n
        gaps.append((t, flow_matching_gap(nu_sum / t, mu_sum / t)))
    done = rec.delivered.sum() + rec.dropped.sum() + Q.sum()
    if abs(injected - done) > 1e-6 * max(1.0, injected):
        raise SimulationAborted(f"packet conservation broken: injected {injected}, accounted {done}", cfg.T, state)
    state["injected"] = injected
    return state


def _run_dcnc(lg, topo, cfg, gen, rec):
    comp = np.zeros(topo.queue_shape())
    x_sum = np.zeros(topo.flow_shape())
    injected = 0.0
    t = 0
    while t < cfg.T:
        n = min(cfg.chunk, cfg.T - t)
        arr = gen.draw(n)
        injected += float(arr.sum())
        _dcnc_chunk(t, arr, gen.k, gen.node, gen.lifetime, comp, x_sum, topo.src, topo.dst, topo.cost,
                    topo.dest, topo.Lk, float(cfg.V), topo.group_ptr, topo.group_edges, topo.group_cap,
                    rec.delivered, rec.delivered_raw, rec.cost, rec.backlog)
        t += n
    state = dict(comp=comp, mu_sum=x_sum, injected=injected)
    if abs(injected - rec.delivered_raw.sum() - comp.sum()) > 1e-6 * max(1.0, injected):
        raise SimulationAborted("packet conservation broken", cfg.T, state)
    return state


class SimulationAborted(InvariantError):
    """Invariant breach during a run; ``state`` holds the arrays at abort time."""

    def __init__(self, msg, slot, state):
        super().__init__(msg)
        self.slot = slot
        self.state = state


# ---------------------------------------------------------------- analysis


def detect_convergence(delivered, gamma: float, lambda_total: float, eps: float) -> int | None:
    """First tau with  gamma*lambda - mean(delivered[:s]) <= eps  for every s in max(tau,1)..T.

    ``delivered`` may be (T,) or (T, K) (summed over commodities).  Returns
    None when the deficit still exceeds ``eps`` at the end of the series.
    """
    d = np.asarray(delivered, dtype=float)
    if d.ndim > 1:
        d = d.sum(axis=1)
    if d.size == 0:
        return None
    s = np.arange(1, d.size + 1)
    deficit = gamma * lambda_total - np.cumsum(d) / s
    above = np.nonzero(deficit > eps)[0]
    if above.size == 0:
        return 0
    last = int(above[-1])  # deficit index j corresponds to s = j + 1
    if last == d.size - 1:
        return None
    return last + 2


def group_average_load(lg: LayeredGraph, mu_sum: np.ndarray, T: int) -> np.ndarray:
    """Average flow per capacity group divided by its capacity."""
    topo = topology(lg)
    per_edge = mu_sum.sum(axis=(0, 2)) / T
    out = np.zeros(len(topo.group_cap))
    for g in range(len(topo.group_cap)):
        es = topo.group_edges[topo.group_ptr[g]:topo.group_ptr[g + 1]]
        out[g] = per_edge[es].sum() / topo.group_cap[g]
    return out


def summarize(res: RunResult, lg: LayeredGraph, eps_fraction: float = 0.005) -> dict:
    rec, cfg = res.metrics, res.config
    T = rec.T
    half = T // 2
    lam = np.array([c.total_rate for c in lg.commodities])
    gam = np.array([c.gamma for c in lg.commodities])
    required = float((gam * lam).sum())
    eps = eps_fraction * float(lam.sum())
    deliv = rec.series("delivered")
    w = cfg.cost_warmup
    out = {
        "policy": cfg.policy,
        "T": T,
        "V": cfg.V,
        "seed": cfg.seed,
        "required_rate": required,
        "throughput": float(deliv.mean()),
        "throughput_last_half": float(deliv[half:].mean()) if T > 1 else float(deliv.mean()),
        "raw_throughput": float(rec.delivered_raw.mean()),
        "cost": float(rec.cost[w:].mean()),
        "cost_last_half": float(rec.cost[half:].mean()) if T > 1 else float(rec.cost.mean()),
        "final_backlog": float(rec.backlog[-1]),
        "t_eps": detect_convergence(deliv, 1.0, required, eps),
    }
    for k in range(len(lam)):
        out[f"throughput_k{k}"] = float(rec.delivered[:, k].mean())
    mu_sum = res.state["mu_sum"]
    loads = group_average_load(lg, mu_sum, T)
    out["max_group_load"] = float(loads.max(initial=0.0))
    if cfg.policy == "proposed":
        out.update({
            "dropped": float(rec.dropped.mean()),
            "virtual_cost": float(rec.virtual_cost.mean()),
            "virtual_cost_last_half": float(rec.virtual_cost[half:].mean()) if T > 1 else float(rec.virtual_cost.mean()),
            "virtual_throughput": float(rec.virtual_delivered.mean()),
            "final_virtual_backlog": float(rec.virtual_backlog[-1]),
            "t_eps_virtual": detect_convergence(rec.virtual_delivered, 1.0, required, eps),
            "skips": int(rec.skipped.sum()),
            "gap": flow_matching_gap(res.state["nu_sum"] / T, mu_sum / T),
        })
    return out


# ---------------------------------------------------------------- sweeps


def scenario_for(scenario: CloudScenario, axis: str, value) -> tuple[CloudScenario, dict]:
    """Apply one sweep value; returns (scenario, config overrides)."""
    if axis == "lambda":
        clients = [replace(c, rate=c.rate * float(value)) for c in scenario.clients]
        return scenario.with_clients(clients), {}
    if axis == "L":
        if int(value) != value or value < 1:
            raise ValueError("L values must be positive integers")
        return scenario.with_clients([replace(c, L=int(value)) for c in scenario.clients]), {}
    if axis == "V":
        return scenario, {"V": float(value)}
    raise ValueError(f"unknown sweep axis {axis!r}")


def _sweep_point(args):
    scenario, axis, value, r, cfg, master = args
    sc, over = scenario_for(scenario, axis, value)
    lg = build_layered_graph(sc)
    c = replace(cfg, seed=int(master), **over)
    res = run(lg, c, replication_seed(master, r))
    row = {"axis": axis, "value": value, "replication": r}
    row.update(res.summary)
    return row


def sweep(scenario: CloudScenario, axis: str, values, replications: int = 1, cfg: RunConfig | None = None,
          master_seed: int = 0, jobs: int = 1) -> list[dict]:
    """One run per (value, replication); rows in (value, replication) order."""
    if axis not in SWEEP_AXES:
        raise ValueError(f"unknown sweep axis {axis!r}")
    values = list(values)
    if not values:
        raise ValueError("sweep needs at least one value")
    if replications < 1:
        raise ValueError("replications must be >= 1")
    cfg = cfg or RunConfig()
    tasks = [(scenario, axis, v, r, cfg, master_seed) for v in values for r in range(replications)]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            return list(ex.map(_sweep_point, tasks))
    return [_sweep_point(t) for t in tasks]


def aggregate(rows: list[dict], keys=("throughput", "cost", "final_virtual_backlog", "t_eps")) -> list[dict]:
    """Mean and standard error per (policy, value) over replications."""
    groups: dict = {}
    for r in rows:
        groups.setdefault((r.get("policy"), r["value"]), []).append(r)
    out = []
    for (pol, val), rs in groups.items():
        row = {"policy": pol, "axis": rs[0]["axis"], "value": val, "replications": len(rs)}
        for k in keys:
            vals = [r.get(k) for r in rs]
            if any(v is None for v in vals):
                row[f"{k}_mean"] = None
                row[f"{k}_stderr"] = None
                continue
            v = np.asarray(vals, dtype=float)
            row[f"{k}_mean"] = float(v.mean())
            row[f"{k}_stderr"] = float(v.std(ddof=1) / np.sqrt(len(v))) if len(v) > 1 else 0.0
        out.append(row)
    return out


def config_dict(cfg: RunConfig) -> dict:
    return asdict(cfg)
