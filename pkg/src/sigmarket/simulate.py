"""Synthetic market generation and worker best responses.

Generates job posts from arrival/type/consideration primitives, simulates
employer logit choices with exogenous abandonment, and calibrates worker
(bid, effort) strategies as best responses to a win-probability surface.
The generator iterates belief fitting and best responses to a damped
fixed point and freezes one consistent profile as the data-generating
process.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .beliefs import BeliefFunction, fit_beliefs
from .core import (
    BID_MAX,
    BID_MIN,
    EFFORT_FLOOR,
    EFFORT_MAX,
    Application,
    JobPost,
    ModelParams,
    OUTSIDE_OPTION,
)
from .winprob import CachedSurface

OUTSIDE = -1  # choose_winner's outside-option index
_MS_PER_MIN = 60_000


# ---------------------------------------------------------------------------
# Primitives: arrivals, types, strategies, consideration
# ---------------------------------------------------------------------------


@dataclass
class ArrivalDistribution:
    """Discrete distribution over job-post compositions (group counts)."""

    compositions: list[dict[str, int]]
    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if np.any(w < 0) or not np.isclose(w.sum(), 1.0):
            raise ValueError("weights must be nonnegative and sum to 1")
        self.weights = w / w.sum()

    def sample(self, n: int, rng: np.random.Generator) -> list[dict[str, int]]:
        idx = rng.choice(len(self.compositions), size=n, p=self.weights)
        return [self.compositions[i] for i in idx]

    def group_keys(self) -> list[str]:
        keys = set()
        for comp in self.compositions:
            keys.update(comp)
        return sorted(keys)


def poisson_arrival(
    group_weights: dict[str, float],
    mean_apps: float,
    n_patterns: int,
    rng: np.random.Generator,
    min_apps: int = 3,
    max_apps: int = 80,
) -> ArrivalDistribution:
    """Synthetic arrival process: Poisson totals split multinomially over groups."""
    keys = sorted(group_weights)
    p = np.array([group_weights[k] for k in keys], dtype=float)
    p = p / p.sum()
    comps = []
    for _ in range(n_patterns):
        total = int(np.clip(rng.poisson(mean_apps), min_apps, max_apps))
        counts = rng.multinomial(total, p)
        comps.append({k: int(c) for k, c in zip(keys, counts) if c > 0})
    w = np.full(n_patterns, 1.0 / n_patterns)
    return ArrivalDistribution(comps, w)


@dataclass
class GroupTypeModel:
    """Gaussian copula over cost/ability marginals with correlation rho."""

    cost_marginal: tuple    # ("normal", mu, sd, lo, hi) or ("empirical", values)
    ability_marginal: tuple
    rho: float

    def _quantile(self, marginal, u):
        if marginal[0] == "normal":
            _, mu, sd, lo, hi = marginal
            return np.clip(stats.norm.ppf(u, mu, sd), lo, hi)
        if marginal[0] == "empirical":
            values = np.sort(np.asarray(marginal[1], dtype=float))
            idx = np.clip((u * values.size).astype(int), 0, values.size - 1)
            return values[idx]
        raise ValueError(f"unknown marginal kind {marginal[0]!r}")

    def sample(self, n: int, rng: np.random.Generator):
        z1 = rng.standard_normal(n)
        z2 = self.rho * z1 + np.sqrt(1.0 - self.rho**2) * rng.standard_normal(n)
        c = self._quantile(self.cost_marginal, stats.norm.cdf(z1))
        a = self._quantile(self.ability_marginal, stats.norm.cdf(z2))
        return c, a

    def quantiles(self, qs):
        n = 20001
        u = (np.arange(n) + 0.5) / n
        c = self._quantile(self.cost_marginal, u)
        a = self._quantile(self.ability_marginal, u)
        return np.quantile(c, qs), np.quantile(a, qs)


@dataclass
class TypeDistribution:
    groups: dict[str, GroupTypeModel]

    def sample(self, group_key: str, n: int, rng: np.random.Generator):
        return self.groups[group_key].sample(n, rng)

    @classmethod
    def from_pseudo_data(cls, by_group: dict[str, tuple[np.ndarray, np.ndarray]], rho=None):
        """Empirical marginals from recovered types; dependence via Gaussian copula
        at the empirical (cost, ability) correlation unless ``rho`` overrides it."""
        groups = {}
        for key, (c, a) in by_group.items():
            r = rho if rho is not None else float(np.corrcoef(c, a)[0, 1]) if c.size > 2 else 0.0
            r = float(np.clip(r, -0.99, 0.99))
            groups[key] = GroupTypeModel(("empirical", np.asarray(c)), ("empirical", np.asarray(a)), r)
        return cls(groups)


@dataclass
class GroupStrategy:
    c_nodes: np.ndarray
    a_nodes: np.ndarray
    bids: np.ndarray      # (len(c_nodes), len(a_nodes))
    efforts: np.ndarray

    def actions(self, c, a):
        b = _bilinear(self.c_nodes, self.a_nodes, self.bids, c, a)
        e = _bilinear(self.c_nodes, self.a_nodes, self.efforts, c, a)
        return np.clip(b, BID_MIN, BID_MAX), np.clip(e, EFFORT_FLOOR, EFFORT_MAX)


def _bilinear(xs, ys, Z, x, y):
    x = np.clip(np.asarray(x, dtype=float), xs[0], xs[-1])
    y = np.clip(np.asarray(y, dtype=float), ys[0], ys[-1])
    i = np.clip(np.searchsorted(xs, x) - 1, 0, xs.size - 2)
    j = np.clip(np.searchsorted(ys, y) - 1, 0, ys.size - 2)
    dx = xs[i + 1] - xs[i]
    dy = ys[j + 1] - ys[j]
    tx = np.where(dx > 0, (x - xs[i]) / np.where(dx > 0, dx, 1.0), 0.0)
    ty = np.where(dy > 0, (y - ys[j]) / np.where(dy > 0, dy, 1.0), 0.0)
    return (
        Z[i, j] * (1 - tx) * (1 - ty)
        + Z[i + 1, j] * tx * (1 - ty)
        + Z[i, j + 1] * (1 - tx) * ty
        + Z[i + 1, j + 1] * tx * ty
    )


@dataclass
class StrategyProfile:
    groups: dict[str, GroupStrategy]

    def actions(self, group_key: str, c, a):
        return self.groups[group_key].actions(c, a)

    def sup_distance(self, other: "StrategyProfile") -> float:
        d = 0.0
        for k, g in self.groups.items():
            o = other.groups[k]
            d = max(d, float(np.max(np.abs(g.bids - o.bids))))
        return d


# ---------------------------------------------------------------------------
# Employer choice
# ---------------------------------------------------------------------------


def choose_winner(considered_deltas, pi: float, rng: np.random.Generator) -> int:
    """Categorical winner draw over considered indices plus the outside option.

    Inside j wins with probability pi * exp(d_j) / (1 + sum exp(d)); the
    outside option absorbs the rest (including abandonment).  Returns the
    index into ``considered_deltas`` or ``OUTSIDE`` (-1).
    """
    d = np.asarray(considered_deltas, dtype=float)
    if d.size == 0:
        return OUTSIDE
    m = max(0.0, float(d.max()))
    w = np.exp(d - m)
    denom = np.exp(-m) + w.sum()
    p_inside = pi * w / denom
    u = rng.random()
    cum = np.cumsum(p_inside)
    k = int(np.searchsorted(cum, u))
    return k if k < d.size else OUTSIDE


# ---------------------------------------------------------------------------
# Market simulation
# ---------------------------------------------------------------------------

_ARRIVAL_WINDOWS_MIN = {
    "Arr0to5": (0.0, 5.0),
    "Arr5to45": (5.0, 45.0),
    "SpikeArrival": (45.0, 55.0),
    "ArrOver45": (55.0, 720.0),
}


@dataclass
class SimulatedMarket:
    records: list[dict]
    sidecar: list[dict]

    def job_posts(self) -> list[JobPost]:
        from .data import record_group

        jobs: dict[str, JobPost] = {}
        for rec in self.records:
            jid = rec["job_id"]
            if jid not in jobs:
                jobs[jid] = JobPost(job_id=jid)
            group = record_group(rec)
            app = Application(
                job_id=jid,
                worker_id=rec["worker_id"],
                group=group,
                bid=rec["bid"],
                effort=rec.get("effort_minutes"),
                signal=rec.get("signal", 0.0),
                considered=rec.get("considered", False),
                won=rec.get("won", False),
            )
            jobs[jid].applications.append(app)
            if app.won:
                jobs[jid].winner = app.worker_id
        for job in jobs.values():
            if job.winner is None:
                job.winner = OUTSIDE_OPTION
        return list(jobs.values())

    @property
    def hire_rate(self) -> float:
        jobs = {}
        for rec in self.records:
            jobs.setdefault(rec["job_id"], False)
            if rec.get("won"):
                jobs[rec["job_id"]] = True
        return float(np.mean([v for v in jobs.values()]))


def _signal_to_criteria(signal: float):
    """Criteria vectors whose weighted sum quantizes the model signal."""
    m = int(np.clip(np.rint(signal * 28.0 / 18.0), 0, 28))
    c_sum = min(m // 2, 10)
    g_sum = m - 2 * c_sum
    if g_sum > 8:  # m odd and custom saturated
        c_sum, g_sum = 10, 8
    custom = _split_ternary(c_sum, 5)
    generic = _split_ternary(g_sum, 4)
    return custom, generic


def _split_ternary(total: int, k: int) -> list[int]:
    out = [0] * k
    for i in range(k):
        take = min(2, total)
        out[i] = take
        total -= take
    return out


def simulate_market(
    n_jobs: int,
    arrival: ArrivalDistribution,
    types: TypeDistribution,
    strategy: StrategyProfile,
    params: ModelParams,
    consideration: dict[str, float],
    rng: np.random.Generator,
    beliefs: BeliefFunction | str = "truth",
    bid_heap_prob: float = 0.8,
    worker_pool_div: int = 3,
    eta_sd: float = 0.0,
    job_prefix: str = "j",
) -> SimulatedMarket:
    """Simulate ``n_jobs`` job posts and employer choices.

    Employers score considered applications by T(x) + beta * mu + signed
    bid disutility, where mu is the belief function applied to the
    realized signal (or the true ability when ``beliefs='truth'``), add
    T1EV taste shocks, compare against the outside shock, and abandon the
    post with probability 1 - pi.  Bids heap onto $5 multiples with
    probability ``bid_heap_prob``.  Worker ids repeat (pool size ~
    group applications / ``worker_pool_div``) so worker-effect machinery
    downstream has repeat observations; ``eta_sd`` > 0 gives workers
    lognormal time-efficiency multipliers (measured time = effort / eta).
    """
    comps = arrival.sample(n_jobs, rng)
    slot_job = []
    slot_group = []
    for m, comp in enumerate(comps):
        for key in sorted(comp):
            slot_job.extend([m] * comp[key])
            slot_group.extend([key] * comp[key])
    slot_job = np.asarray(slot_job)
    n_slots = slot_job.size
    group_keys = sorted(set(slot_group))
    gmap = {k: i for i, k in enumerate(group_keys)}
    gidx = np.array([gmap[k] for k in slot_group])

    cost = np.empty(n_slots)
    ability = np.empty(n_slots)
    bid = np.empty(n_slots)
    effort = np.empty(n_slots)
    noise = np.empty(n_slots)
    signal = np.empty(n_slots)
    q = np.zeros(n_slots, dtype=bool)
    worker_idx = np.empty(n_slots, dtype=int)
    eta = np.ones(n_slots)

    for g, key in enumerate(group_keys):
        rows = np.flatnonzero(gidx == g)
        c, a = types.sample(key, rows.size, rng)
        b, e = strategy.actions(key, c, a)
        heap = rng.random(rows.size) < bid_heap_prob
        b_heaped = np.clip(np.rint(b / 5.0) * 5.0, BID_MIN, BID_MAX)
        b = np.where(heap, b_heaped, b)
        eps = rng.normal(0.0, np.sqrt(params.signal_noise_var[key]), rows.size)
        s = params.signal_K[key] + params.signal_gamma[key] * np.log(e) + eps
        s = np.clip(s, 0.0, 18.0)
        q[rows] = rng.random(rows.size) < consideration[key]
        pool_size = max(2, rows.size // worker_pool_div)
        widx = rng.integers(0, pool_size, size=rows.size)
        if eta_sd > 0:
            worker_eta = np.exp(rng.normal(0.0, eta_sd, pool_size))
            eta[rows] = worker_eta[widx]
        cost[rows], ability[rows] = c, a
        bid[rows], effort[rows], noise[rows], signal[rows] = b, e, eps, s
        worker_idx[rows] = widx

    # employer scores
    if beliefs == "truth":
        mu = ability
    else:
        mu = np.empty(n_slots)
        for g, key in enumerate(group_keys):
            rows = np.flatnonzero(gidx == g)
            mu[rows] = beliefs.evaluate(signal[rows], key)
    tvec = np.array([params.t_by_group[k] for k in group_keys])
    delta = tvec[gidx] + params.beta * mu + params.alpha_signed * bid

    # T1EV taste shocks, outside shock, abandonment
    shock = rng.gumbel(size=n_slots)
    shock0 = rng.gumbel(size=n_jobs)
    abandoned = rng.random(n_jobs) >= params.pi
    score = np.where(q, delta + shock, -np.inf)
    best = np.full(n_jobs, -np.inf)
    np.fmax.at(best, slot_job, score)
    hired_job = (best > shock0) & ~abandoned
    won = hired_job[slot_job] & (score == best[slot_job])

    # measurement-schema fields
    minutes_window = np.array([_ARRIVAL_WINDOWS_MIN[k.split("|")[1]] for k in group_keys])
    win_lo = minutes_window[gidx, 0]
    win_hi = minutes_window[gidx, 1]
    first_view_min = win_lo + (win_hi - win_lo) * rng.random(n_slots)
    t_measured = effort / eta
    rank = np.empty(n_slots, dtype=int)
    for m in range(n_jobs):
        rows = np.flatnonzero(slot_job == m)
        rank[rows] = rng.permutation(rows.size) + 1

    records = []
    sidecar = []
    for i in range(n_slots):
        key = group_keys[gidx[i]]
        country, arr, rep = key.split("|")
        custom, generic = _signal_to_criteria(signal[i])
        fv = int(round(first_view_min[i] * _MS_PER_MIN))
        sub = fv + int(round(t_measured[i] * _MS_PER_MIN))
        t_ok = 4_000 <= (sub - fv) <= 12 * _MS_PER_MIN
        rec = {
            "job_id": f"{job_prefix}{slot_job[i]:06d}",
            "worker_id": f"{key}#w{worker_idx[i]}",
            "bid": float(bid[i]),
            "criteria_custom": custom,
            "criteria_generic": generic,
            "d_edit": 1.0,
            "posted_ms": 0,
            "first_view_ms": fv,
            "submitted_ms": sub,
            "country_group": country,
            "arrival_group": arr,
            "reputation_group": rep,
            "engaged": bool(won[i]),
            "messages": 0,
            "rank_at_close": int(rank[i]),
            "signal": float(signal[i]),
            "effort_minutes": float(t_measured[i]) if t_ok else None,
            "considered": bool(q[i]),
            "won": bool(won[i]),
        }
        records.append(rec)
        sidecar.append(
            {
                "job_id": rec["job_id"],
                "worker_id": rec["worker_id"],
                "cost": float(cost[i]),
                "ability": float(ability[i]),
                "signal_noise": float(noise[i]),
                "true_effort": float(effort[i]),
                "eta": float(eta[i]),
            }
        )
    return SimulatedMarket(records, sidecar)


# ---------------------------------------------------------------------------
# Best responses against a win-probability surface
# ---------------------------------------------------------------------------


def _golden_effort(payoff, lo=EFFORT_FLOOR, hi=EFFORT_MAX, tol=1e-5):
    """Golden-section maximizer of a unimodal payoff of effort."""
    invphi = (np.sqrt(5.0) - 1) / 2
    a, b = lo, hi
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = payoff(c), payoff(d)
    while b - a > tol:
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = payoff(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = payoff(d)
    return 0.5 * (a + b)


def best_response(cache: CachedSurface, c: float, a: float, bid_tol: float = 1e-3):
    """Optimal (bid, effort) for one type against a cached surface.

    Bisection on the bid FOC with a nested golden-section on effort;
    corner bids allowed; falls back to a dense grid argmax (then local
    polish) when the FOC has no interior root.
    """

    def e_star(b):
        return _golden_effort(lambda e: cache.prob(b, e) * (b - c) - 0.5 * e * e * np.exp(-a))

    def foc(b):
        e = e_star(b)
        p, db, _ = cache.prob_and_gradient(b, e)
        return p + db * (b - c), e

    # degenerate surface: winning is impossible, any bid ties; corner convention
    if float(np.max(cache.values)) <= 1e-12:
        return BID_MAX, EFFORT_FLOOR

    g_lo, e_lo = foc(BID_MIN)
    g_hi, e_hi = foc(BID_MAX)
    if g_lo <= 0.0:
        return BID_MIN, e_lo
    if g_hi >= 0.0:
        return BID_MAX, e_hi
    lo, hi = BID_MIN, BID_MAX
    e_mid = e_lo
    while hi - lo > bid_tol:
        mid = 0.5 * (lo + hi)
        g_mid, e_mid = foc(mid)
        if g_mid > 0.0:
            lo = mid
        else:
            hi = mid
    b_foc = 0.5 * (lo + hi)
    e_foc = e_star(b_foc)

    # guard against non-monotone FOCs: compare with a grid argmax
    B, E = np.meshgrid(cache.bgrid, cache.egrid, indexing="ij")
    payoff = cache.values * (B - c) - 0.5 * E * E * np.exp(-a)
    k = int(np.argmax(payoff))
    b_g, e_g = B.flat[k], E.flat[k]
    val_foc = cache.prob(b_foc, e_foc) * (b_foc - c) - 0.5 * e_foc**2 * np.exp(-a)
    val_grid = payoff.flat[k]
    if val_grid > val_foc + 1e-9:
        e_g = _golden_effort(lambda e: cache.prob(b_g, e) * (b_g - c) - 0.5 * e * e * np.exp(-a))
        return float(b_g), float(e_g)
    return float(b_foc), float(e_foc)


def calibrate_strategy_from_focs(
    types: TypeDistribution,
    surface,
    params: ModelParams,
    n_nodes: int = 25,
) -> StrategyProfile:
    """Best-response strategy on a per-group grid of type quantiles.

    ``surface`` must expose ``cached(group_key)`` returning a
    :class:`~sigmarket.winprob.CachedSurface`; non-finite surface values
    raise naming the group.
    """
    qs = (np.arange(n_nodes) + 0.5) / n_nodes
    groups = {}
    for key, tm in types.groups.items():
        cache = surface.cached(key)
        if not np.all(np.isfinite(cache.values)):
            raise ValueError(f"non-finite win-probability values for group {key!r}")
        c_nodes, a_nodes = tm.quantiles(qs)
        c_nodes = np.unique(c_nodes)
        a_nodes = np.unique(a_nodes)
        B = np.empty((c_nodes.size, a_nodes.size))
        E = np.empty_like(B)
        for i, c in enumerate(c_nodes):
            for j, a in enumerate(a_nodes):
                B[i, j], E[i, j] = best_response(cache, c, a)
        groups[key] = GroupStrategy(c_nodes, a_nodes, B, E)
    return StrategyProfile(groups)


# ---------------------------------------------------------------------------
# Generator: a self-consistent (strategy, beliefs) profile
# ---------------------------------------------------------------------------


class TrueIndexSurface:
    """Win-probability surface under the generator's own employer index.

    Same slot structure as the estimation pool, but the deviator's weight
    runs through the (nonlinear) belief function: exp(T + beta * g(s) +
    alpha_signed * b).
    """

    def __init__(self, slots: dict[str, dict], params: ModelParams, beliefs: BeliefFunction):
        self.slots = slots
        self.params = params
        self.beliefs = beliefs

    def prob(self, group_key: str, b, e):
        g = self.slots[group_key]
        p = self.params
        q = g["q"]
        eps = g["eps"][q]
        delta_comp = g["delta_comp"][q]
        n_all = g["eps"].size
        bb, ee = np.broadcast_arrays(np.asarray(b, dtype=float), np.asarray(e, dtype=float))
        shape = bb.shape
        bb, ee = bb.ravel(), ee.ravel()
        out = np.empty(bb.size)
        t = p.t_by_group[group_key]
        K, gam = p.signal_K[group_key], p.signal_gamma[group_key]
        chunk = max(1, 2_000_000 // max(eps.size, 1))
        for lo in range(0, bb.size, chunk):
            hi = min(lo + chunk, bb.size)
            s = K + gam * np.log(ee[lo:hi, None]) + eps[None, :]
            mu = self.beliefs.evaluate(np.clip(s, 0.0, 18.0), group_key)
            omega = np.exp(t + p.beta * mu + p.alpha_signed * bb[lo:hi, None])
            out[lo:hi] = (omega / (1.0 + omega + delta_comp[None, :])).sum(axis=1)
        out *= p.pi / n_all
        out = out.reshape(shape)
        return out if out.ndim else float(out)

    def cached(self, group_key: str, nb: int = 45, ne: int = 40) -> CachedSurface:
        bgrid = np.linspace(BID_MIN, BID_MAX, nb)
        egrid = np.geomspace(EFFORT_FLOOR, EFFORT_MAX, ne)
        P = self.prob(group_key, bgrid[:, None], egrid[None, :])
        return CachedSurface(bgrid, egrid, P)


def _build_true_slots(
    arrival: ArrivalDistribution,
    types: TypeDistribution,
    strategy: StrategyProfile,
    params: ModelParams,
    consideration: dict[str, float],
    beliefs: BeliefFunction | None,
    m_jobs: int,
    rng: np.random.Generator,
    bid_heap_prob: float = 0.8,
) -> dict[str, dict]:
    comps = arrival.sample(m_jobs, rng)
    slot_job, slot_key = [], []
    for m, comp in enumerate(comps):
        for key in sorted(comp):
            slot_job.extend([m] * comp[key])
            slot_key.extend([key] * comp[key])
    slot_job = np.asarray(slot_job)
    keys = sorted(set(slot_key))
    gmap = {k: i for i, k in enumerate(keys)}
    gidx = np.array([gmap[k] for k in slot_key])
    n_slots = slot_job.size

    q = np.zeros(n_slots, dtype=bool)
    omega = np.zeros(n_slots)
    eps_dev = np.zeros(n_slots)
    for g, key in enumerate(keys):
        rows = np.flatnonzero(gidx == g)
        c, a = types.sample(key, rows.size, rng)
        b, e = strategy.actions(key, c, a)
        heap = rng.random(rows.size) < bid_heap_prob
        b = np.where(heap, np.clip(np.rint(b / 5.0) * 5.0, BID_MIN, BID_MAX), b)
        eps = rng.normal(0.0, np.sqrt(params.signal_noise_var[key]), rows.size)
        s = np.clip(params.signal_K[key] + params.signal_gamma[key] * np.log(e) + eps, 0.0, 18.0)
        mu = a if beliefs is None else beliefs.evaluate(s, key)
        omega[rows] = np.exp(params.t_by_group[key] + params.beta * mu + params.alpha_signed * b)
        q[rows] = rng.random(rows.size) < consideration[key]
        eps_dev[rows] = rng.normal(0.0, np.sqrt(params.signal_noise_var[key]), rows.size)

    omega_c = np.where(q, omega, 0.0)
    tot = np.bincount(slot_job, weights=omega_c, minlength=m_jobs)
    delta_comp = tot[slot_job] - omega_c
    return {
        key: {
            "eps": eps_dev[gidx == g],
            "delta_comp": delta_comp[gidx == g],
            "q": q[gidx == g],
        }
        for g, key in enumerate(keys)
    }


def _fit_generator_beliefs(
    types: TypeDistribution,
    strategy: StrategyProfile,
    params: ModelParams,
    rng: np.random.Generator,
    n_per_group: int = 30_000,
    n_bins: int = 40,
) -> BeliefFunction:
    """Belief curves implied by a strategy: E[a | s] on a large simulated panel."""
    by_group = {}
    for key, tm in types.groups.items():
        c, a = tm.sample(n_per_group, rng)
        _, e = strategy.actions(key, c, a)
        eps = rng.normal(0.0, np.sqrt(params.signal_noise_var[key]), n_per_group)
        s = np.clip(params.signal_K[key] + params.signal_gamma[key] * np.log(e) + eps, 0.0, 18.0)
        by_group[key] = (s, a)
    return fit_beliefs(by_group, n_bins=n_bins)


@dataclass
class Generator:
    """A frozen data-generating profile: primitives plus calibrated behavior."""

    params: ModelParams
    types: TypeDistribution
    arrival: ArrivalDistribution
    consideration: dict[str, float]
    strategy: StrategyProfile
    beliefs: BeliefFunction
    rounds: int = 0
    strategy_drift: float = np.nan
    diagnostics: dict = field(default_factory=dict)


def seed_strategy(types: TypeDistribution, markup: float = 60.0, effort_scale: float = 1.0,
                  n_nodes: int = 25) -> StrategyProfile:
    """Heuristic starting profile: cost-plus bids, effort log-linear in ability."""
    qs = (np.arange(n_nodes) + 0.5) / n_nodes
    groups = {}
    for key, tm in types.groups.items():
        c_nodes, a_nodes = tm.quantiles(qs)
        c_nodes, a_nodes = np.unique(c_nodes), np.unique(a_nodes)
        B = np.clip(c_nodes[:, None] + markup + 0.0 * a_nodes[None, :], BID_MIN, BID_MAX)
        a_mid = np.median(a_nodes)
        E = np.clip(
            effort_scale * np.exp(0.5 * (a_nodes[None, :] - a_mid)) + 0.0 * c_nodes[:, None],
            EFFORT_FLOOR,
            EFFORT_MAX,
        )
        groups[key] = GroupStrategy(c_nodes, a_nodes, B, E)
    return StrategyProfile(groups)


def calibrate_generator(
    params: ModelParams,
    types: TypeDistribution,
    arrival: ArrivalDistribution,
    consideration: dict[str, float],
    rng: np.random.Generator,
    rounds: int = 4,
    m_pool: int = 1500,
    damping: float = 0.5,
    tol: float = 0.5,
    n_nodes: int = 25,
) -> Generator:
    """Iterate belief fitting and best responses to a damped fixed point.

    Each round refits employer beliefs to the current strategy's signal
    content, rebuilds the true-index win surface, and takes a damped step
    toward the best-response strategy.  Beliefs are refit once more under
    the final strategy so the employers' curve matches what they face.
    """
    if rounds < 1:
        raise ValueError("need at least one calibration round")
    strategy = seed_strategy(types, n_nodes=n_nodes)
    drift = np.nan
    for r in range(rounds):
        beliefs = _fit_generator_beliefs(types, strategy, params, rng)
        slots = _build_true_slots(
            arrival, types, strategy, params, consideration, beliefs, m_pool, rng
        )
        surface = TrueIndexSurface(slots, params, beliefs)
        response = calibrate_strategy_from_focs(types, surface, params, n_nodes=n_nodes)
        drift = strategy.sup_distance(response)
        merged = {}
        for key, g_new in response.groups.items():
            g_old = strategy.groups[key]
            merged[key] = GroupStrategy(
                g_new.c_nodes,
                g_new.a_nodes,
                damping * g_old.bids + (1 - damping) * g_new.bids,
                damping * g_old.efforts + (1 - damping) * g_new.efforts,
            )
        strategy = StrategyProfile(merged)
        if drift < tol:
            break
    beliefs = _fit_generator_beliefs(types, strategy, params, rng)
    return Generator(
        params=params,
        types=types,
        arrival=arrival,
        consideration=consideration,
        strategy=strategy,
        beliefs=beliefs,
        rounds=r + 1,
        strategy_drift=float(drift),
    )
