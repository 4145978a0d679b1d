"""Per-group joint model of competitor bids and signals.

Bids live on discrete heap points (multiples of $5/$10/$50 in the data)
plus a deviation layer; the bid-bin index and the signal are tied
together by a Student-t copula over mid-rank pseudo-observations.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import optimize, stats
from scipy.special import gammaln

from .core import BID_MIN, BID_MAX

MIN_GROUP_OBS = 40
DOF_RANGE = (2.1, 50.0)

REPUTATION_ORDER = ("Rookie", "Low", "Middle", "High")


@dataclass
class GroupBidBins:
    centers: np.ndarray       # sorted; always includes 30 and 250
    masses: np.ndarray        # assignment shares, sum to 1
    dev_freq: np.ndarray      # per-bin share of assigned bids off the exact center
    dev_lo: np.ndarray        # uniform deviation interval per bin
    dev_hi: np.ndarray
    n_obs: int
    sparse: bool = False


@dataclass
class BidBinModel:
    groups: dict[str, GroupBidBins]

    def bin_index(self, group_key: str, bids) -> np.ndarray:
        """Assign bids to nearest centers; ties break toward the lower center."""
        g = self.groups[group_key]
        return _nearest_center(g.centers, np.asarray(bids, dtype=float))

    def to_dict(self) -> dict:
        return {
            k: {
                "centers": g.centers.tolist(),
                "masses": g.masses.tolist(),
                "dev_freq": g.dev_freq.tolist(),
                "dev_lo": g.dev_lo.tolist(),
                "dev_hi": g.dev_hi.tolist(),
                "n_obs": g.n_obs,
                "sparse": g.sparse,
            }
            for k, g in self.groups.items()
        }

    @classmethod
    def from_dict(cls, d: dict) -> "BidBinModel":
        return cls(
            {
                k: GroupBidBins(
                    np.asarray(g["centers"]),
                    np.asarray(g["masses"]),
                    np.asarray(g["dev_freq"]),
                    np.asarray(g["dev_lo"]),
                    np.asarray(g["dev_hi"]),
                    int(g["n_obs"]),
                    bool(g["sparse"]),
                )
                for k, g in d.items()
            }
        )


def _nearest_center(centers: np.ndarray, bids: np.ndarray) -> np.ndarray:
    pos = np.searchsorted(centers, bids)
    pos = np.clip(pos, 1, len(centers) - 1)
    lower, upper = centers[pos - 1], centers[pos]
    # tie (equidistant) goes to the lower center
    use_upper = (upper - bids) < (bids - lower)
    return np.where(use_upper, pos, pos - 1)


def fit_bid_bins(bids_by_group: dict[str, np.ndarray]) -> BidBinModel:
    """Fit the discrete bid-bin layer per group.

    Centers are the endpoints plus every bid value with exact-match mass
    of at least max(20, 0.5% of the group's applications); all other bids
    attach to the nearest center and feed the deviation layer.
    """
    groups = {}
    for key, bids in bids_by_group.items():
        bids = np.asarray(bids, dtype=float)
        if bids.size == 0:
            raise ValueError(f"group {key!r} has no bids")
        n = bids.size
        threshold = max(20.0, 0.005 * n)
        values, counts = np.unique(bids, return_counts=True)
        centers = set(values[counts >= threshold].tolist())
        centers.update((BID_MIN, BID_MAX))
        centers = np.array(sorted(centers))

        idx = _nearest_center(centers, bids)
        k = centers.size
        assigned = np.bincount(idx, minlength=k).astype(float)
        deviants = np.bincount(idx, weights=(bids != centers[idx]), minlength=k)
        masses = assigned / n
        with np.errstate(invalid="ignore"):
            dev_freq = np.where(assigned > 0, deviants / np.maximum(assigned, 1), 0.0)

        mid = 0.5 * (centers[:-1] + centers[1:])
        dev_lo = np.concatenate(([BID_MIN], mid))
        dev_hi = np.concatenate((mid, [BID_MAX]))
        groups[key] = GroupBidBins(
            centers, masses, dev_freq, dev_lo, dev_hi, n_obs=n, sparse=n < MIN_GROUP_OBS
        )
    return BidBinModel(groups)


# ---------------------------------------------------------------------------
# Student-t copula
# ---------------------------------------------------------------------------


def t_copula_loglik(x: np.ndarray, y: np.ndarray, rho: float, dof: float) -> float:
    """Log-likelihood of a bivariate t copula at t-quantile pairs (x, y)."""
    r2 = 1.0 - rho * rho
    const = gammaln((dof + 2) / 2) + gammaln(dof / 2) - 2 * gammaln((dof + 1) / 2)
    quad = (x * x - 2 * rho * x * y + y * y) / (dof * r2)
    ll = (
        const
        - 0.5 * np.log(r2)
        - (dof + 2) / 2 * np.log1p(quad)
        + (dof + 1) / 2 * (np.log1p(x * x / dof) + np.log1p(y * y / dof))
    )
    return float(np.sum(ll))


def midrank_uniforms(values: np.ndarray) -> np.ndarray:
    """Mid-rank pseudo-observations (rank - 0.5) / N; ties get average ranks."""
    r = stats.rankdata(values, method="average")
    return (r - 0.5) / values.shape[0]


@dataclass
class GroupCopula:
    rho: float
    dof: float
    bid_cum_masses: np.ndarray      # CDF over bid-bin indices
    signal_sorted: np.ndarray       # empirical signal quantile table
    independent: bool = False
    pooled_from: str | None = None  # donor group when this one was sparse
    diagnostic: str | None = None


@dataclass
class CopulaModel:
    groups: dict[str, GroupCopula]
    pooling_map: dict[str, str] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "groups": {
                k: {
                    "rho": g.rho,
                    "dof": g.dof,
                    "bid_cum_masses": g.bid_cum_masses.tolist(),
                    "signal_sorted": g.signal_sorted.tolist(),
                    "independent": g.independent,
                    "pooled_from": g.pooled_from,
                    "diagnostic": g.diagnostic,
                }
                for k, g in self.groups.items()
            },
            "pooling_map": dict(self.pooling_map),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CopulaModel":
        return cls(
            {
                k: GroupCopula(
                    float(g["rho"]),
                    float(g["dof"]),
                    np.asarray(g["bid_cum_masses"]),
                    np.asarray(g["signal_sorted"]),
                    bool(g["independent"]),
                    g.get("pooled_from"),
                    g.get("diagnostic"),
                )
                for k, g in d["groups"].items()
            },
            dict(d.get("pooling_map", {})),
        )


def fit_t_copula_params(u: np.ndarray, v: np.ndarray, dof_grid_size: int = 12) -> tuple[float, float]:
    """MLE of (rho, dof) for the bivariate t copula on pseudo-uniform pairs.

    Profile likelihood over a log-spaced dof grid with local refinement;
    the likelihood is flat in dof so the grid keeps the search robust.
    """

    def best_rho(dof: float) -> tuple[float, float]:
        x = stats.t.ppf(u, dof)
        y = stats.t.ppf(v, dof)
        res = optimize.minimize_scalar(
            lambda r: -t_copula_loglik(x, y, r, dof),
            bounds=(-0.99, 0.99),
            method="bounded",
            options={"xatol": 1e-5},
        )
        return float(res.x), -float(res.fun)

    grid = np.geomspace(DOF_RANGE[0], DOF_RANGE[1], dof_grid_size)
    profile = [best_rho(d) for d in grid]
    lls = np.array([p[1] for p in profile])
    k = int(np.argmax(lls))
    lo = grid[max(k - 1, 0)]
    hi = grid[min(k + 1, len(grid) - 1)]
    if lo == hi:
        return profile[k][0], float(grid[k])
    res = optimize.minimize_scalar(
        lambda logd: -best_rho(float(np.exp(logd)))[1],
        bounds=(np.log(lo), np.log(hi)),
        method="bounded",
        options={"xatol": 1e-3},
    )
    dof = float(np.exp(res.x))
    rho, _ = best_rho(dof)
    return rho, dof


def _pool_sparse(data_by_group: dict[str, tuple[np.ndarray, np.ndarray]]) -> dict[str, str]:
    """Map sparse groups to a donor group (same country x arrival, nearest reputation)."""
    sizes = {k: v[0].shape[0] for k, v in data_by_group.items()}
    pooling: dict[str, str] = {}
    for key, n in sizes.items():
        if n >= MIN_GROUP_OBS:
            continue
        country, arrival, rep = key.split("|")
        rep_pos = REPUTATION_ORDER.index(rep)
        donor = None
        for dist in (1, 2, 3):
            candidates = []
            for d in (-dist, dist):
                p = rep_pos + d
                if 0 <= p < len(REPUTATION_ORDER):
                    k2 = f"{country}|{arrival}|{REPUTATION_ORDER[p]}"
                    if k2 in sizes and sizes[k2] + n >= MIN_GROUP_OBS:
                        candidates.append((sizes[k2], k2))
            if candidates:
                donor = max(candidates)[1]
                break
        if donor is not None:
            pooling[key] = donor
    return pooling


def fit_copula(
    data_by_group: dict[str, tuple[np.ndarray, np.ndarray]],
    bin_model: BidBinModel,
) -> CopulaModel:
    """Fit per-group t copulas between bid-bin index and signal.

    ``data_by_group`` maps group key -> (bids, signals).  Sparse groups
    (< 40 pairs) borrow their copula dependence parameters from a pooled
    fit with the nearest reputation neighbor; the pooling map is recorded
    on the model.  Marginal tables always come from the group's own data.
    """
    pooling = _pool_sparse(data_by_group)
    groups: dict[str, GroupCopula] = {}
    for key, (bids, signals) in data_by_group.items():
        bids = np.asarray(bids, dtype=float)
        signals = np.asarray(signals, dtype=float)
        bins = bin_model.bin_index(key, bids)
        cum = np.cumsum(bin_model.groups[key].masses)
        cum[-1] = 1.0
        sig_sorted = np.sort(signals)

        pooled_from = None
        pairs = [(bins, signals)]
        if key in pooling:
            donor = pooling[key]
            d_bids, d_sigs = data_by_group[donor]
            pairs.append((bin_model.bin_index(donor, d_bids), np.asarray(d_sigs, dtype=float)))
            pooled_from = donor

        degenerate = all(np.unique(b).size < 2 or np.std(s) == 0.0 for b, s in pairs)
        if degenerate:
            groups[key] = GroupCopula(
                0.0, 10.0, cum, sig_sorted, independent=True, pooled_from=pooled_from,
                diagnostic="degenerate marginal: independence copula fallback",
            )
            continue

        # pseudo-observations per contributing group, then pooled
        u = np.concatenate([midrank_uniforms(b) for b, _ in pairs])
        v = np.concatenate([midrank_uniforms(s) for _, s in pairs])
        rho, dof = fit_t_copula_params(u, v)
        groups[key] = GroupCopula(rho, dof, cum, sig_sorted, pooled_from=pooled_from)
    return CopulaModel(groups, pooling)


def sample_copula_uniforms(rho: float, dof: float, size: int, rng: np.random.Generator):
    """Draw pseudo-uniform pairs from the bivariate t copula."""
    z1 = rng.standard_normal(size)
    z2 = rng.standard_normal(size)
    g = rng.chisquare(dof, size) / dof
    x = z1 / np.sqrt(g)
    y = (rho * z1 + np.sqrt(1.0 - rho * rho) * z2) / np.sqrt(g)
    return stats.t.cdf(x, dof), stats.t.cdf(y, dof)


def sample_bid_signal(
    copula: CopulaModel,
    bins: BidBinModel,
    group_key: str,
    size: int,
    rng: np.random.Generator,
):
    """Draw (bid, signal) pairs for one group.

    Copula uniforms -> inverse marginal tables -> bin center and signal,
    then a Bernoulli deviation perturbs the bid uniformly within the
    bin's midpoint interval.  Deviations are independent of the signal
    conditional on the bin.
    """
    gc = copula.groups[group_key]
    gb = bins.groups[group_key]
    if gc.independent:
        u, v = rng.random(size), rng.random(size)
    else:
        u, v = sample_copula_uniforms(gc.rho, gc.dof, size, rng)

    bin_idx = np.searchsorted(gc.bid_cum_masses, u, side="left")
    bin_idx = np.clip(bin_idx, 0, gb.centers.size - 1)
    n_sig = gc.signal_sorted.size
    sig_idx = np.clip((v * n_sig).astype(int), 0, n_sig - 1)
    signals = gc.signal_sorted[sig_idx]

    bids = gb.centers[bin_idx].copy()
    deviate = rng.random(size) < gb.dev_freq[bin_idx]
    lo, hi = gb.dev_lo[bin_idx], gb.dev_hi[bin_idx]
    draw = lo + (hi - lo) * rng.random(size)
    bids[deviate] = draw[deviate]
    return bids, signals
