"""Counterfactual equilibria and welfare accounting.

Solves bid-only equilibria where signaling is shut down (employers see
group mean ability) or information is full (employers see true ability),
replays the estimated signaling equilibrium on the same draws, and
reports hiring patterns and surplus by ability/cost quintile.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .beliefs import BeliefFunction
from .core import BID_MAX, BID_MIN, effort_cost
from .demand import StructuralParams
from .simulate import ArrivalDistribution, StrategyProfile, TypeDistribution
from .supply import TypePseudoData

BID_TOL = 0.05
MAX_ITER = 200
DAMPING = 0.5


# ---------------------------------------------------------------------------
# Bid-only strategies and the equilibrium pool
# ---------------------------------------------------------------------------


@dataclass
class GroupBidStrategy:
    c_nodes: np.ndarray
    bids: np.ndarray              # (nc,) for NS, (nc, na) for FI
    a_nodes: np.ndarray | None = None

    def bid(self, c, a=None):
        if self.a_nodes is None:
            c = np.clip(np.asarray(c, dtype=float), self.c_nodes[0], self.c_nodes[-1])
            return np.interp(c, self.c_nodes, self.bids)
        from .simulate import _bilinear

        return _bilinear(self.c_nodes, self.a_nodes, self.bids, c, a)


@dataclass
class BidStrategy:
    kind: str                      # "NS" or "FI"
    groups: dict[str, GroupBidStrategy]

    def bid(self, group_key: str, c, a=None):
        return self.groups[group_key].bid(c, a)

    def sup_distance(self, other: "BidStrategy") -> float:
        return max(
            float(np.max(np.abs(g.bids - other.groups[k].bids))) for k, g in self.groups.items()
        )


@dataclass
class EqReport:
    converged: bool
    iterations: int
    residual: float
    residual_history: list[float]
    oscillating: bool = False
    alternate_distance: float | None = None
    message: str = ""


@dataclass
class MarketDraws:
    """Common random draws shared by all scenarios on one set of jobs."""

    n_jobs: int
    slot_job: np.ndarray
    group_keys: list[str]
    gidx: np.ndarray
    cost: np.ndarray
    ability: np.ndarray
    q: np.ndarray
    gumbel: np.ndarray             # per-slot taste shocks
    gumbel0: np.ndarray            # per-job outside shocks
    abandoned: np.ndarray          # per-job flags

    def slots_of(self, key: str) -> np.ndarray:
        return np.flatnonzero(self.gidx == self.group_keys.index(key))


def draw_common_market(
    arrival: ArrivalDistribution,
    types: TypeDistribution,
    consideration: dict[str, float],
    n_jobs: int,
    pi: float,
    rng: np.random.Generator,
) -> MarketDraws:
    comps = arrival.sample(n_jobs, rng)
    slot_job, slot_key = [], []
    for m, comp in enumerate(comps):
        for key in sorted(comp):
            slot_job.extend([m] * comp[key])
            slot_key.extend([key] * comp[key])
    slot_job = np.asarray(slot_job, dtype=int)
    keys = sorted(set(slot_key))
    gmap = {k: i for i, k in enumerate(keys)}
    gidx = np.array([gmap[k] for k in slot_key])
    n_slots = slot_job.size

    cost = np.empty(n_slots)
    ability = np.empty(n_slots)
    q = np.zeros(n_slots, dtype=bool)
    for g, key in enumerate(keys):
        rows = np.flatnonzero(gidx == g)
        c, a = types.sample(key, rows.size, rng)
        cost[rows], ability[rows] = c, a
        q[rows] = rng.random(rows.size) < consideration[key]
    return MarketDraws(
        n_jobs=n_jobs,
        slot_job=slot_job,
        group_keys=keys,
        gidx=gidx,
        cost=cost,
        ability=ability,
        q=q,
        gumbel=rng.gumbel(size=n_slots),
        gumbel0=rng.gumbel(size=n_jobs),
        abandoned=rng.random(n_jobs) >= pi,
    )


def _competitor_weights(
    draws: MarketDraws,
    strategy: BidStrategy,
    params: StructuralParams,
    group_means: dict[str, float] | None,
):
    """Per-slot weights exp(T + beta*m + alpha*b) and leave-one-out sums."""
    n = draws.gidx.size
    omega = np.zeros(n)
    bids = np.zeros(n)
    for g, key in enumerate(draws.group_keys):
        rows = np.flatnonzero(draws.gidx == g)
        if group_means is None:  # full information: employers see true ability
            m = draws.ability[rows]
            b = strategy.bid(key, draws.cost[rows], draws.ability[rows])
        else:
            m = group_means[key]
            b = strategy.bid(key, draws.cost[rows])
        bids[rows] = b
        omega[rows] = np.exp(params.t_by_group[key] + params.beta * m + params.alpha_signed * b)
    omega_c = np.where(draws.q, omega, 0.0)
    tot = np.bincount(draws.slot_job, weights=omega_c, minlength=draws.n_jobs)
    delta_comp = tot[draws.slot_job] - omega_c
    return omega, bids, delta_comp


def _solve_bid_nodes(v_node, c_node, delta, q, pi, alpha_signed, n_all):
    """Per-node bisection on the bid FOC P(b) + P'(b) (b - c) = 0.

    ``v_node`` is the bid-free part of the deviator weight exp(T + beta*m);
    ``delta`` the considered competitor sums over this group's slots.
    """
    v_node = np.asarray(v_node, dtype=float)
    c_node = np.asarray(c_node, dtype=float)
    dd = delta[q]
    if dd.size == 0 or n_all == 0:
        return np.full(v_node.shape, BID_MAX)

    def foc(b):
        u = np.exp(alpha_signed * b)
        vu = v_node * u
        s = vu[:, None] / (1.0 + vu[:, None] + dd[None, :])
        P = (pi / n_all) * s.sum(axis=1)
        Pb = (pi / n_all) * alpha_signed * (s * (1.0 - s)).sum(axis=1)
        return P + Pb * (b - c_node)

    lo = np.full(v_node.shape, BID_MIN)
    hi = np.full(v_node.shape, BID_MAX)
    g_lo = foc(lo)
    g_hi = foc(hi)
    at_lo = g_lo <= 0.0
    at_hi = g_hi >= 0.0
    interior = ~(at_lo | at_hi)
    for _ in range(45):  # resolves 220 / 2^45 << tolerance
        mid = 0.5 * (lo + hi)
        g_mid = foc(mid)
        go_up = g_mid > 0.0
        lo = np.where(interior & go_up, mid, lo)
        hi = np.where(interior & ~go_up, mid, hi)
        if np.all((hi - lo)[interior] < 1e-3):
            break
    out = 0.5 * (lo + hi)
    out[at_lo] = BID_MIN
    out[at_hi] = BID_MAX
    return out


def _best_response(draws, strategy, params, group_means):
    """One exact best-response pass against ``strategy`` on the pool."""
    _, _, delta_comp = _competitor_weights(draws, strategy, params, group_means)
    groups = {}
    for g, key in enumerate(draws.group_keys):
        rows = np.flatnonzero(draws.gidx == g)
        cur = strategy.groups[key]
        delta_g = delta_comp[rows]
        q_g = draws.q[rows]
        n_all = rows.size
        if cur.a_nodes is None:
            v = np.full(cur.c_nodes.size, np.exp(params.t_by_group[key] + params.beta * group_means[key]))
            bids = _solve_bid_nodes(
                v, cur.c_nodes, delta_g, q_g, params.pi, params.alpha_signed, n_all
            )
            groups[key] = GroupBidStrategy(cur.c_nodes, bids)
        else:
            nc, na = cur.c_nodes.size, cur.a_nodes.size
            cc = np.repeat(cur.c_nodes, na)
            aa = np.tile(cur.a_nodes, nc)
            v = np.exp(params.t_by_group[key] + params.beta * aa)
            bids = _solve_bid_nodes(
                v, cc, delta_g, q_g, params.pi, params.alpha_signed, n_all
            ).reshape(nc, na)
            groups[key] = GroupBidStrategy(cur.c_nodes, bids, cur.a_nodes)
    return BidStrategy(strategy.kind, groups)


def _seed_bid_strategy(kind, types: TypeDistribution, markup: float, n_nodes: int):
    qs = (np.arange(n_nodes) + 0.5) / n_nodes
    groups = {}
    for key, tm in types.groups.items():
        c_nodes, a_nodes = tm.quantiles(qs)
        c_nodes, a_nodes = np.unique(c_nodes), np.unique(a_nodes)
        base = np.clip(c_nodes + markup, BID_MIN, BID_MAX)
        if kind == "NS":
            groups[key] = GroupBidStrategy(c_nodes, base.copy())
        else:
            groups[key] = GroupBidStrategy(
                c_nodes, np.repeat(base[:, None], a_nodes.size, axis=1), a_nodes
            )
    return BidStrategy(kind, groups)


def best_response_pass(
    draws: MarketDraws,
    strategy: BidStrategy,
    params: StructuralParams,
    group_means: dict[str, float] | None,
) -> BidStrategy:
    """One exact best-response pass; the equilibrium-residual probe."""
    return _best_response(draws, strategy, params, group_means)


def _solve_equilibrium(
    kind: str,
    types: TypeDistribution,
    arrival: ArrivalDistribution,
    consideration: dict[str, float],
    params: StructuralParams,
    group_means: dict[str, float] | None,
    rng: np.random.Generator,
    m_pool: int = 1500,
    n_nodes: int = 25,
    start_markups=(0.0, 50.0),
    tol: float = BID_TOL,
    draws: MarketDraws | None = None,
):
    if draws is None:
        draws = draw_common_market(arrival, types, consideration, m_pool, params.pi, rng)
    solutions = []
    histories = []
    for markup in start_markups:
        strategy = _seed_bid_strategy(kind, types, markup, n_nodes)
        history = []
        converged = False
        for it in range(MAX_ITER):
            response = _best_response(draws, strategy, params, group_means)
            residual = strategy.sup_distance(response)
            history.append(residual)
            if residual < tol:
                # the returned iterate itself satisfies the residual contract
                converged = True
                break
            merged = {}
            for key, g_new in response.groups.items():
                g_old = strategy.groups[key]
                merged[key] = GroupBidStrategy(
                    g_new.c_nodes,
                    DAMPING * g_old.bids + (1 - DAMPING) * g_new.bids,
                    g_new.a_nodes,
                )
            strategy = BidStrategy(kind, merged)
        solutions.append((strategy, converged, it + 1, history))
        histories.append(history)

    strategy, converged, iters, history = solutions[0]
    alternate = None
    if len(solutions) > 1:
        alternate = strategy.sup_distance(solutions[1][0])
    oscillating = (
        not converged
        and len(history) > 20
        and np.std(history[-10:]) > 0.1 * np.mean(history[-10:])
    )
    report = EqReport(
        converged=converged,
        iterations=iters,
        residual=history[-1],
        residual_history=history,
        oscillating=bool(oscillating),
        alternate_distance=alternate,
        message=""
        if converged
        else f"no convergence after {iters} passes; last residual {history[-1]:.3f}",
    )
    return strategy, report, draws


def solve_ns_equilibrium(
    types: TypeDistribution,
    arrival: ArrivalDistribution,
    consideration: dict[str, float],
    params: StructuralParams,
    group_means: dict[str, float],
    rng: np.random.Generator,
    m_pool: int = 1500,
    n_nodes: int = 25,
    tol: float = BID_TOL,
    draws: MarketDraws | None = None,
):
    """No-signaling equilibrium: bids depend on cost only; employers use E[a | x].

    Damped best-response iteration on a fixed bootstrap pool; convergence
    means one exact best-response pass moves no grid bid by more than
    ``tol``.  Solved from two starting points (cost-plus-0/cost-plus-50);
    the report carries the distance between the two fixed points.
    """
    strategy, report, _ = _solve_equilibrium(
        "NS", types, arrival, consideration, params, group_means, rng, m_pool, n_nodes,
        tol=tol, draws=draws,
    )
    return strategy, report


def solve_fi_equilibrium(
    types: TypeDistribution,
    arrival: ArrivalDistribution,
    consideration: dict[str, float],
    params: StructuralParams,
    rng: np.random.Generator,
    m_pool: int = 1500,
    n_nodes: int = 25,
    tol: float = BID_TOL,
):
    """Full-information equilibrium: employers observe abilities; bids on a (c, a) grid."""
    strategy, report, _ = _solve_equilibrium(
        "FI", types, arrival, consideration, params, None, rng, m_pool, n_nodes, tol=tol
    )
    return strategy, report


# ---------------------------------------------------------------------------
# Scenario simulation on common draws
# ---------------------------------------------------------------------------


@dataclass
class ScenarioOutcome:
    mode: str                      # "SQ", "NS", or "FI"
    draws: MarketDraws
    bid: np.ndarray
    effort: np.ndarray             # zeros in NS/FI
    delta: np.ndarray              # employer decision index per slot
    won: np.ndarray
    win_prob: np.ndarray           # analytic per-slot win probability
    lse: np.ndarray                # per-job log(1 + sum exp delta) over considered


def _resolve_choices(draws: MarketDraws, delta: np.ndarray, pi: float):
    score = np.where(draws.q, delta + draws.gumbel, -np.inf)
    best = np.full(draws.n_jobs, -np.inf)
    np.fmax.at(best, draws.slot_job, score)
    hired = (best > draws.gumbel0) & ~draws.abandoned
    won = hired[draws.slot_job] & (score == best[draws.slot_job]) & draws.q

    w = np.where(draws.q, np.exp(delta), 0.0)
    tot = np.bincount(draws.slot_job, weights=w, minlength=draws.n_jobs)
    lse = np.log1p(tot)
    win_prob = pi * w / (1.0 + tot[draws.slot_job])
    return won, win_prob, lse


def simulate_sq(
    draws: MarketDraws,
    donors: TypePseudoData,
    beliefs: BeliefFunction,
    params: StructuralParams,
    signal_production: dict[str, tuple[float, float, float]],
    rng: np.random.Generator,
) -> ScenarioOutcome:
    """Status-quo scenario: actions bootstrapped from recovered strategies.

    Each drawn type maps to the nearest recovered (cost, ability) within
    its group (standardized coordinates) and reuses that observation's
    bid and effort; signals are re-drawn through the production function
    and employers score them with the estimated belief curve.
    """
    n = draws.gidx.size
    bid = np.empty(n)
    effort = np.empty(n)
    mu = np.empty(n)
    for g, key in enumerate(draws.group_keys):
        rows = np.flatnonzero(draws.gidx == g)
        if rows.size == 0:
            continue
        sel = donors.group_index == donors.group_keys.index(key) if key in donors.group_keys else None
        if sel is None or not sel.any():
            sel = np.ones(donors.c_hat.size, dtype=bool)  # pooled fallback
        dc, da = donors.c_hat[sel], donors.a_hat[sel]
        db, de = donors.bid[sel], donors.effort[sel]
        sc = np.std(dc) or 1.0
        sa = np.std(da) or 1.0
        tree = cKDTree(np.column_stack([dc / sc, da / sa]))
        _, idx = tree.query(np.column_stack([draws.cost[rows] / sc, draws.ability[rows] / sa]))
        bid[rows] = db[idx]
        effort[rows] = de[idx]
        K, gam, vnoise = signal_production[key]
        s = K + gam * np.log(effort[rows]) + rng.normal(0.0, np.sqrt(vnoise), rows.size)
        mu[rows] = beliefs.evaluate(np.clip(s, 0.0, 18.0), key)

    tvec = np.array([params.t_by_group[k] for k in draws.group_keys])
    delta = tvec[draws.gidx] + params.beta * mu + params.alpha_signed * bid
    won, win_prob, lse = _resolve_choices(draws, delta, params.pi)
    return ScenarioOutcome("SQ", draws, bid, effort, delta, won, win_prob, lse)


def simulate_bid_only(
    mode: str,
    draws: MarketDraws,
    strategy: BidStrategy,
    params: StructuralParams,
    group_means: dict[str, float] | None,
) -> ScenarioOutcome:
    """NS or FI scenario on the common draws; no signaling, zero effort."""
    n = draws.gidx.size
    bid = np.empty(n)
    mu = np.empty(n)
    for g, key in enumerate(draws.group_keys):
        rows = np.flatnonzero(draws.gidx == g)
        if group_means is None:
            bid[rows] = strategy.bid(key, draws.cost[rows], draws.ability[rows])
            mu[rows] = draws.ability[rows]
        else:
            bid[rows] = strategy.bid(key, draws.cost[rows])
            mu[rows] = group_means[key]
    tvec = np.array([params.t_by_group[k] for k in draws.group_keys])
    delta = tvec[draws.gidx] + params.beta * mu + params.alpha_signed * bid
    won, win_prob, lse = _resolve_choices(draws, delta, params.pi)
    return ScenarioOutcome(mode, draws, bid, np.zeros(n), delta, won, win_prob, lse)


# ---------------------------------------------------------------------------
# Welfare
# ---------------------------------------------------------------------------


@dataclass
class WelfareReport:
    mode: str
    hiring_rate: float
    conditional_hiring_rate: float
    analytic_conditional_hiring_rate: float
    mean_winning_bid: float
    worker_surplus: float          # per job
    employer_surplus: float        # per job
    total_surplus: float
    writing_costs: float           # per job
    hired_by_cell: np.ndarray      # P(hired | ability x cost quintile cell)
    share_hired_by_cell: np.ndarray  # P(cell | hired)
    ability_edges: np.ndarray
    cost_edges: np.ndarray

    def to_dict(self) -> dict:
        d = {
            "mode": self.mode,
            "hiring_rate": self.hiring_rate,
            "conditional_hiring_rate": self.conditional_hiring_rate,
            "analytic_conditional_hiring_rate": self.analytic_conditional_hiring_rate,
            "mean_winning_bid": self.mean_winning_bid,
            "worker_surplus": self.worker_surplus,
            "employer_surplus": self.employer_surplus,
            "total_surplus": self.total_surplus,
            "writing_costs": self.writing_costs,
            "hired_by_cell": self.hired_by_cell.tolist(),
            "share_hired_by_cell": self.share_hired_by_cell.tolist(),
            "ability_edges": self.ability_edges.tolist(),
            "cost_edges": self.cost_edges.tolist(),
        }
        return d


def quintile_edges(values: np.ndarray) -> np.ndarray:
    return np.quantile(values, [0.2, 0.4, 0.6, 0.8])


def _cell_index(draws: MarketDraws, ability_edges, cost_edges):
    ai = np.searchsorted(ability_edges, draws.ability)
    ci = np.searchsorted(cost_edges, draws.cost)
    return ai, ci


def welfare_report(
    outcome: ScenarioOutcome,
    params: StructuralParams,
    ability_edges: np.ndarray,
    cost_edges: np.ndarray,
    use_analytic_cells: bool = True,
) -> WelfareReport:
    """Hiring, surplus, and quintile-cell hiring patterns for one scenario.

    Worker surplus sums realized margins minus writing costs (zero in
    NS/FI); employer surplus uses the logit inclusive value pi * E[log(1 +
    sum exp delta)] / |alpha| per job (Euler constant dropped; it cancels
    across scenarios).  Quintile cells use the fixed edges passed in so
    scenarios stay comparable.
    """
    draws = outcome.draws
    n_jobs = draws.n_jobs
    writing = effort_cost(outcome.effort, draws.ability) if outcome.mode == "SQ" else np.zeros_like(outcome.effort)
    margins = np.where(outcome.won, outcome.bid - draws.cost, 0.0)
    worker = (margins.sum() - writing.sum()) / n_jobs
    employer = params.pi * float(np.mean(outcome.lse)) / abs(params.alpha_signed)

    hires = int(outcome.won.sum())
    not_abandoned = int((~draws.abandoned).sum())
    wins = outcome.win_prob if use_analytic_cells else outcome.won.astype(float)
    ai, ci = _cell_index(draws, ability_edges, cost_edges)
    cell_apps = np.zeros((5, 5))
    cell_wins = np.zeros((5, 5))
    np.add.at(cell_apps, (ai, ci), 1.0)
    np.add.at(cell_wins, (ai, ci), wins)
    with np.errstate(invalid="ignore", divide="ignore"):
        hired_by_cell = np.where(cell_apps > 0, cell_wins / np.maximum(cell_apps, 1), 0.0)
    total_wins = cell_wins.sum()
    share_by_cell = cell_wins / total_wins if total_wins > 0 else np.zeros((5, 5))

    return WelfareReport(
        mode=outcome.mode,
        hiring_rate=hires / n_jobs,
        conditional_hiring_rate=hires / not_abandoned if not_abandoned else 0.0,
        analytic_conditional_hiring_rate=float(np.mean(1.0 - np.exp(-outcome.lse))),
        mean_winning_bid=float(outcome.bid[outcome.won].mean()) if hires else float("nan"),
        worker_surplus=float(worker),
        employer_surplus=float(employer),
        total_surplus=float(worker + employer),
        writing_costs=float(writing.sum() / n_jobs),
        hired_by_cell=hired_by_cell,
        share_hired_by_cell=share_by_cell,
        ability_edges=np.asarray(ability_edges, dtype=float),
        cost_edges=np.asarray(cost_edges, dtype=float),
    )


def run_counterfactuals(
    types: TypeDistribution,
    arrival: ArrivalDistribution,
    consideration: dict[str, float],
    params: StructuralParams,
    donors: TypePseudoData,
    beliefs: BeliefFunction,
    signal_production: dict[str, tuple[float, float, float]],
    group_means: dict[str, float],
    n_jobs: int,
    rng: np.random.Generator,
    m_pool: int = 1500,
    n_nodes: int = 25,
) -> dict:
    """Solve NS and FI, replay SQ, and report all three on common draws."""
    ns_strategy, ns_report = solve_ns_equilibrium(
        types, arrival, consideration, params, group_means, rng, m_pool, n_nodes
    )
    fi_strategy, fi_report = solve_fi_equilibrium(
        types, arrival, consideration, params, rng, m_pool, n_nodes
    )
    draws = draw_common_market(arrival, types, consideration, n_jobs, params.pi, rng)
    sq = simulate_sq(draws, donors, beliefs, params, signal_production, rng)
    ns = simulate_bid_only("NS", draws, ns_strategy, params, group_means)
    fi = simulate_bid_only("FI", draws, fi_strategy, params, None)

    a_edges = quintile_edges(draws.ability)
    c_edges = quintile_edges(draws.cost)
    reports = {
        o.mode: welfare_report(o, params, a_edges, c_edges) for o in (sq, ns, fi)
    }
    soft_checks = {}
    if reports["FI"].total_surplus < reports["NS"].total_surplus:
        soft_checks["fi_vs_ns_total_surplus"] = (
            "diagnostic: FI total surplus below NS on these draws "
            f"({reports['FI'].total_surplus:.3f} < {reports['NS'].total_surplus:.3f})"
        )
    return {
        "strategies": {"NS": ns_strategy, "FI": fi_strategy},
        "eq_reports": {"NS": ns_report, "FI": fi_report},
        "outcomes": {"SQ": sq, "NS": ns, "FI": fi},
        "reports": reports,
        "soft_checks": soft_checks,
    }
