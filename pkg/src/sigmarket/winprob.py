"""Simulated ex-ante win-probability surfaces.

A pool of bootstrapped job posts holds, for every simulated application
slot, the competitor weight sum it would face and a signaling-noise
draw.  A hypothetical worker of the slot's group replaces each slot in
turn (inheriting its consideration status and noise), and the surface
averages her logit hiring shares over all same-group slots, scaled by
the non-abandonment rate.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import RectBivariateSpline

from .bidsignal import BidBinModel, CopulaModel, sample_bid_signal
from .core import BID_MAX, BID_MIN, EFFORT_FLOOR, EFFORT_MAX
from .data import ApplicationTable
from .demand import ReducedFormParams

POOL_SCHEMA_VERSION = 1
MIN_POOL_JOBS = 1000

_CHUNK = 2_000_000  # max points x slots per evaluation block


@dataclass
class GroupSlots:
    eps: np.ndarray          # deviator noise draw per slot
    delta_comp: np.ndarray   # sum of competitor weights, outside and self excluded
    q: np.ndarray            # slot's consideration flag
    k_s: float
    gamma_s: float
    k_lam: float
    gamma_lam: float

    @property
    def n_slots(self) -> int:
        return self.eps.shape[0]


@dataclass
class SimulationPool:
    groups: dict[str, GroupSlots]
    alpha_signed: float
    pi: float
    m_jobs: int
    reduced_params: ReducedFormParams | None = None
    meta: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "version": POOL_SCHEMA_VERSION,
            "alpha_signed": self.alpha_signed,
            "pi": self.pi,
            "m_jobs": self.m_jobs,
            "meta": self.meta,
            "groups": {
                k: {
                    "eps": g.eps.tolist(),
                    "delta_comp": g.delta_comp.tolist(),
                    "q": g.q.astype(int).tolist(),
                    "k_s": g.k_s,
                    "gamma_s": g.gamma_s,
                    "k_lam": g.k_lam,
                    "gamma_lam": g.gamma_lam,
                }
                for k, g in self.groups.items()
            },
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SimulationPool":
        if d.get("version") != POOL_SCHEMA_VERSION:
            raise ValueError(f"pool schema version {d.get('version')} not supported")
        groups = {
            k: GroupSlots(
                np.asarray(g["eps"], dtype=float),
                np.asarray(g["delta_comp"], dtype=float),
                np.asarray(g["q"], dtype=bool),
                float(g["k_s"]),
                float(g["gamma_s"]),
                float(g["k_lam"]),
                float(g["gamma_lam"]),
            )
            for k, g in d["groups"].items()
        }
        return cls(groups, float(d["alpha_signed"]), float(d["pi"]), int(d["m_jobs"]), None, d.get("meta", {}))

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, sort_keys=True)

    @classmethod
    def load(cls, path) -> "SimulationPool":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def build_pool(
    source: ApplicationTable,
    bin_model: BidBinModel,
    copula_model: CopulaModel,
    reduced: ReducedFormParams,
    signal_production: dict[str, tuple[float, float, float]],
    m_jobs: int,
    rng: np.random.Generator,
) -> SimulationPool:
    """Bootstrap M job posts and precompute slot-level surface inputs.

    Consideration-set compositions (group + considered flag per slot) are
    resampled with replacement from ``source``; competitor bids and
    signals are drawn from the fitted per-group joint model, and each
    slot gets a deviator noise draw from its group's fitted noise
    variance.  ``signal_production`` maps group key -> (K_s, gamma_s,
    noise variance).
    """
    if m_jobs < MIN_POOL_JOBS:
        warnings.warn(
            f"pool of {m_jobs} jobs is below {MIN_POOL_JOBS}; integration may be inaccurate",
            stacklevel=2,
        )
    n_source = source.n_jobs
    job_pick = rng.integers(0, n_source, size=m_jobs)

    # slot rows per source job (contiguous after table sort)
    order = np.argsort(source.job_index, kind="stable")
    starts = np.searchsorted(source.job_index[order], np.arange(n_source))
    ends = np.searchsorted(source.job_index[order], np.arange(n_source) + 1)

    slot_group: list[np.ndarray] = []
    slot_q: list[np.ndarray] = []
    slot_job: list[np.ndarray] = []
    for m, src in enumerate(job_pick):
        rows = order[starts[src] : ends[src]]
        slot_group.append(source.group_index[rows])
        slot_q.append(source.considered[rows])
        slot_job.append(np.full(rows.size, m))
    gidx = np.concatenate(slot_group)
    q = np.concatenate(slot_q)
    job = np.concatenate(slot_job)
    n_slots = gidx.size

    # competitor weights: one joint (bid, signal) draw per slot, by group
    omega = np.zeros(n_slots)
    group_keys = source.group_keys
    for g, key in enumerate(group_keys):
        rows = np.flatnonzero(gidx == g)
        if rows.size == 0:
            continue
        bids, sigs = sample_bid_signal(copula_model, bin_model, key, rows.size, rng)
        omega[rows] = np.exp(reduced.delta(key, sigs, bids))

    omega_considered = np.where(q, omega, 0.0)
    total_w = np.bincount(job, weights=omega_considered, minlength=m_jobs)
    delta_comp = total_w[job] - omega_considered

    groups: dict[str, GroupSlots] = {}
    for g, key in enumerate(group_keys):
        rows = np.flatnonzero(gidx == g)
        if rows.size == 0:
            continue
        if key not in signal_production:
            raise KeyError(f"no signal-production estimates for group {key!r}")
        k_s, gamma_s, noise_var = signal_production[key]
        eps = rng.normal(0.0, np.sqrt(noise_var), size=rows.size)
        groups[key] = GroupSlots(
            eps=eps,
            delta_comp=delta_comp[rows],
            q=q[rows].copy(),
            k_s=float(k_s),
            gamma_s=float(gamma_s),
            k_lam=float(reduced.k_lambda[key]),
            gamma_lam=float(reduced.gamma_lambda[key]),
        )

    considered_per_job = np.bincount(job, weights=q.astype(float), minlength=m_jobs)
    meta = {
        "mean_slots_per_job": n_slots / m_jobs,
        "mean_considered_per_job": float(considered_per_job.mean()),
    }
    return SimulationPool(groups, reduced.alpha_signed, reduced.pi, m_jobs, reduced, meta)


class WinProbabilitySurface:
    """Exact evaluator of the pooled win probability and its derivatives.

    Domain: bids in [30, 250], efforts in [4 seconds, 12 minutes].
    Values lie in [0, pi]; decreasing in the bid and increasing in effort
    wherever the pool is nondegenerate.
    """

    def __init__(self, pool: SimulationPool):
        self.pool = pool
        self._w = {}  # per-group exp(gamma_lam * eps), precomputed
        for key, g in pool.groups.items():
            self._w[key] = np.exp(g.gamma_lam * g.eps)

    def _group(self, key: str) -> GroupSlots:
        if key not in self.pool.groups:
            raise KeyError(f"group {key!r} absent from the simulation pool")
        return self.pool.groups[key]

    def _accumulate(self, key, b, e, want_grad: bool):
        g = self._group(key)
        W = self._w[key][g.q]             # only considered slots contribute
        delta = g.delta_comp[g.q]
        n_all = g.n_slots
        b = np.asarray(b, dtype=float).ravel()
        e = np.asarray(e, dtype=float).ravel()
        if np.any((e < EFFORT_FLOOR - 1e-12) | (e > EFFORT_MAX + 1e-9)):
            raise ValueError("effort outside the surface domain")
        gamma = g.gamma_lam * g.gamma_s
        log_u = (
            g.k_lam
            + g.gamma_lam * g.k_s
            + self.pool.alpha_signed * b
            + gamma * np.log(e)
        )
        n_pts = b.size
        prob = np.zeros(n_pts)
        slope = np.zeros(n_pts) if want_grad else None
        if W.size:
            step = max(1, _CHUNK // W.size)
            for lo in range(0, n_pts, step):
                hi = min(lo + step, n_pts)
                omega = np.exp(log_u[lo:hi, None]) * W[None, :]
                denom = 1.0 + omega + delta[None, :]
                share = omega / denom
                prob[lo:hi] = share.sum(axis=1)
                if want_grad:
                    # d share / d log(omega) = share * (1 + delta) / denom
                    slope[lo:hi] = (share * (1.0 - omega / denom)).sum(axis=1)
        scale = self.pool.pi / n_all
        prob *= scale
        if want_grad:
            slope *= scale
            return prob, slope, gamma, e
        return prob, None, gamma, e

    def prob(self, group_key: str, b, e):
        shape = np.broadcast(np.asarray(b, dtype=float), np.asarray(e, dtype=float)).shape
        bb, ee = np.broadcast_arrays(np.asarray(b, dtype=float), np.asarray(e, dtype=float))
        p, _, _, _ = self._accumulate(group_key, bb, ee, want_grad=False)
        p = p.reshape(shape)
        return p if p.ndim else float(p)

    def gradient(self, group_key: str, b, e):
        p, db, de = self.prob_and_gradient(group_key, b, e)
        return db, de

    def prob_and_gradient(self, group_key: str, b, e):
        """(P, dP/db, dP/de) in one pass; the derivatives share the slot sums."""
        shape = np.broadcast(np.asarray(b, dtype=float), np.asarray(e, dtype=float)).shape
        bb, ee = np.broadcast_arrays(np.asarray(b, dtype=float), np.asarray(e, dtype=float))
        p, slope, gamma, e_flat = self._accumulate(group_key, bb, ee, want_grad=True)
        db = self.pool.alpha_signed * slope
        de = (gamma / e_flat) * slope
        p, db, de = (a.reshape(shape) for a in (p, db, de))
        if p.ndim:
            return p, db, de
        return float(p), float(db), float(de)

    def cached(self, group_key: str, nb: int = 45, ne: int = 40) -> "CachedSurface":
        """Bicubic interpolant on an (nb x ne) grid, for inner optimization loops."""
        bgrid = np.linspace(BID_MIN, BID_MAX, nb)
        egrid = np.geomspace(EFFORT_FLOOR, EFFORT_MAX, ne)
        P = self.prob(group_key, bgrid[:, None], egrid[None, :])
        return CachedSurface(bgrid, egrid, P)


class CachedSurface:
    """Spline cache of one group's surface; exact evaluation stays with the pool."""

    def __init__(self, bgrid, egrid, values):
        self.bgrid = bgrid
        self.egrid = egrid
        self.values = values
        self._spline = RectBivariateSpline(bgrid, egrid, values, kx=3, ky=3)

    def prob(self, b, e):
        return self._spline(np.clip(b, self.bgrid[0], self.bgrid[-1]),
                            np.clip(e, self.egrid[0], self.egrid[-1]), grid=False)

    def prob_and_gradient(self, b, e):
        b = np.clip(b, self.bgrid[0], self.bgrid[-1])
        e = np.clip(e, self.egrid[0], self.egrid[-1])
        p = self._spline(b, e, grid=False)
        db = self._spline(b, e, dx=1, grid=False)
        de = self._spline(b, e, dy=1, grid=False)
        return p, db, de


def win_probability(pool: SimulationPool, group_key: str, b, e):
    """Ex-ante win probability P*(b, e; x) averaged over the pool."""
    return WinProbabilitySurface(pool).prob(group_key, b, e)


def win_probability_gradient(pool: SimulationPool, group_key: str, b, e):
    """(dP*/db, dP*/de) via the analytic logit-share derivatives."""
    return WinProbabilitySurface(pool).gradient(group_key, b, e)
