"""Employer belief functions: E[ability | signal, group].

Fitted per group as equal-mass signal bins -> weighted isotonic
regression -> monotone cubic interpolation through the isotonic knots,
held flat outside the outermost knots.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import PchipInterpolator


def pava(y, weights=None):
    """Weighted isotonic (nondecreasing) least squares by pool-adjacent-violators.

    Returns the fitted array; minimizes sum w_i (y_i - f_i)^2 over
    nondecreasing f.
    """
    y = np.asarray(y, dtype=float)
    if weights is None:
        w = np.ones_like(y)
    else:
        w = np.asarray(weights, dtype=float)
        if np.any(w <= 0):
            raise ValueError("weights must be positive")
    if y.shape != w.shape or y.ndim != 1:
        raise ValueError("y and weights must be equal-length 1-d arrays")

    # blocks as (mean, weight, count) triples, merged while out of order
    means: list[float] = []
    wsum: list[float] = []
    count: list[int] = []
    for yi, wi in zip(y, w):
        means.append(float(yi))
        wsum.append(float(wi))
        count.append(1)
        while len(means) > 1 and means[-2] > means[-1]:
            m2, w2, c2 = means.pop(), wsum.pop(), count.pop()
            m1, w1, c1 = means.pop(), wsum.pop(), count.pop()
            wt = w1 + w2
            means.append((m1 * w1 + m2 * w2) / wt)
            wsum.append(wt)
            count.append(c1 + c2)
    out = np.empty_like(y)
    pos = 0
    for m, c in zip(means, count):
        out[pos : pos + c] = m
        pos += c
    return out


@dataclass
class GroupBelief:
    knot_signals: np.ndarray
    knot_abilities: np.ndarray
    constant: float | None = None      # degenerate fit: single value everywhere
    _interp: PchipInterpolator | None = field(default=None, repr=False, compare=False)

    def _pchip(self) -> PchipInterpolator:
        if self._interp is None:
            self._interp = PchipInterpolator(self.knot_signals, self.knot_abilities)
        return self._interp

    def __call__(self, s):
        s = np.asarray(s, dtype=float)
        if self.constant is not None:
            out = np.full(s.shape, self.constant)
            return out if out.ndim else float(out)
        lo, hi = self.knot_signals[0], self.knot_signals[-1]
        out = self._pchip()(np.clip(s, lo, hi))
        return out if out.ndim else float(out)

    def derivative(self, s):
        s = np.asarray(s, dtype=float)
        if self.constant is not None:
            out = np.zeros(s.shape)
            return out if out.ndim else float(out)
        lo, hi = self.knot_signals[0], self.knot_signals[-1]
        inside = (s >= lo) & (s <= hi)
        out = np.where(inside, self._pchip().derivative()(np.clip(s, lo, hi)), 0.0)
        return out if out.ndim else float(out)


@dataclass
class BeliefFunction:
    """Per-group monotone belief maps signal -> expected ability."""

    groups: dict[str, GroupBelief]
    diagnostics: dict[str, str] = field(default_factory=dict)

    def __call__(self, s, group_key: str):
        return self.evaluate(s, group_key)

    def evaluate(self, s, group_key: str):
        if group_key not in self.groups:
            raise KeyError(f"no belief function fitted for group {group_key!r}")
        return self.groups[group_key](s)

    def derivative(self, s, group_key: str):
        if group_key not in self.groups:
            raise KeyError(f"no belief function fitted for group {group_key!r}")
        return self.groups[group_key].derivative(s)

    def to_dict(self) -> dict:
        out = {}
        for k, g in self.groups.items():
            out[k] = {
                "knot_signals": [float(v) for v in np.atleast_1d(g.knot_signals)],
                "knot_abilities": [float(v) for v in np.atleast_1d(g.knot_abilities)],
                "constant": g.constant,
            }
        return {"groups": out, "diagnostics": dict(self.diagnostics)}

    @classmethod
    def from_dict(cls, d: dict) -> "BeliefFunction":
        groups = {}
        for k, g in d["groups"].items():
            groups[k] = GroupBelief(
                np.asarray(g["knot_signals"], dtype=float),
                np.asarray(g["knot_abilities"], dtype=float),
                g.get("constant"),
            )
        return cls(groups, dict(d.get("diagnostics", {})))


def equal_mass_bins(values: np.ndarray, n_bins: int) -> np.ndarray:
    """Bin assignment (0..n_bins-1) splitting sorted values into equal counts."""
    n = values.shape[0]
    order = np.argsort(values, kind="stable")
    sizes = np.full(n_bins, n // n_bins)
    sizes[: n % n_bins] += 1
    bins = np.empty(n, dtype=int)
    bins[order] = np.repeat(np.arange(n_bins), sizes)
    return bins


def fit_group_belief(signals, abilities, n_bins: int = 50):
    """Fit one group's belief curve; returns (GroupBelief, diagnostic | None)."""
    s = np.asarray(signals, dtype=float)
    a = np.asarray(abilities, dtype=float)
    diag = None
    if np.unique(s).size < 2:
        return GroupBelief(np.array([0.0]), np.array([0.0]), constant=float(a.mean())), (
            "constant belief: fewer than 2 distinct signal values"
        )
    if s.shape[0] < n_bins:
        n_bins = max(5, s.shape[0] // 10)
        diag = f"reduced to {n_bins} bins (only {s.shape[0]} observations)"
    bins = equal_mass_bins(s, n_bins)
    counts = np.bincount(bins, minlength=n_bins).astype(float)
    mean_s = np.bincount(bins, weights=s, minlength=n_bins) / counts
    mean_a = np.bincount(bins, weights=a, minlength=n_bins) / counts

    # knots must be strictly increasing in signal; merge ties (mass-weighted)
    order = np.argsort(mean_s)
    mean_s, mean_a, counts = mean_s[order], mean_a[order], counts[order]
    ks, ka, kw = [mean_s[0]], [mean_a[0] * counts[0]], [counts[0]]
    for msig, mab, c in zip(mean_s[1:], mean_a[1:], counts[1:]):
        if msig - ks[-1] < 1e-12:
            ka[-1] += mab * c
            kw[-1] += c
        else:
            ks.append(msig)
            ka.append(mab * c)
            kw.append(c)
    knot_s = np.array(ks)
    knot_a = np.array(ka) / np.array(kw)
    if knot_s.size < 2:
        return GroupBelief(np.array([0.0]), np.array([0.0]), constant=float(a.mean())), (
            "constant belief: signal bins collapse to one knot"
        )
    iso = pava(knot_a, weights=np.array(kw))
    return GroupBelief(knot_s, iso), diag


def fit_beliefs(pseudo_data: dict[str, tuple[np.ndarray, np.ndarray]], n_bins: int = 50) -> BeliefFunction:
    """Fit monotone belief functions from (signal, ability) pseudo-data per group.

    Parameters
    ----------
    pseudo_data : dict
        group key -> (signals, recovered abilities).
    n_bins : int
        Equal-mass signal bins per group; reduced (floor 5) and flagged
        for groups with fewer observations than bins.
    """
    groups, diagnostics = {}, {}
    for key, (s, a) in pseudo_data.items():
        gb, diag = fit_group_belief(s, a, n_bins=n_bins)
        groups[key] = gb
        if diag:
            diagnostics[key] = diag
    return BeliefFunction(groups, diagnostics)


def evaluate_belief(f: BeliefFunction, s, group_key: str):
    """Evaluate a fitted belief function; monotone and flat outside the knots."""
    return f.evaluate(s, group_key)
