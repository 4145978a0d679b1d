"""Worker-side recovery: signal production, effort correction, type inversion.

The signal-production regression gives per-group intercept/slope/noise;
its residuals feed an empirical-Bayes shrinkage of worker time-efficiency
effects; corrected efforts and the win-probability surface then invert
each application's first-order conditions into (cost, ability)
pseudo-data.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import EFFORT_FLOOR, EFFORT_MAX
from .data import ApplicationTable
from .winprob import WinProbabilitySurface

EB_CAP = 1.25


@dataclass
class SignalProductionFit:
    # group key -> (K_s, gamma_s, noise variance)
    params: dict[str, tuple[float, float, float]]
    residuals: np.ndarray          # aligned with the valid-effort rows
    valid_rows: np.ndarray         # row indices into the source table
    diagnostics: dict[str, str] = field(default_factory=dict)


def _pooled_ols(x, y):
    xm, ym = x.mean(), y.mean()
    vx = np.sum((x - xm) ** 2)
    slope = np.sum((x - xm) * (y - ym)) / vx
    const = ym - slope * xm
    resid = y - const - slope * x
    dof = max(x.size - 2, 1)
    return const, slope, float(np.sum(resid**2) / dof)


def estimate_signal_production(table: ApplicationTable) -> SignalProductionFit:
    """Per-group regression of signal on log effort with worker effects.

    The slope comes from the within-worker transformation (workers with a
    single valid application drop out of it); the intercept centers the
    worker effects at zero; the noise variance comes from the within
    residuals.  Groups without enough repeat workers, or with no
    within-worker variation in log effort, fall back to pooled OLS and
    are flagged.
    """
    valid = np.flatnonzero(~np.isnan(table.effort) & ~np.isnan(table.signal))
    if valid.size == 0:
        raise ValueError("no valid-effort applications to fit signal production")
    params: dict[str, tuple[float, float, float]] = {}
    diagnostics: dict[str, str] = {}
    residuals = np.full(valid.size, np.nan)

    for g, key in enumerate(table.group_keys):
        sel = np.flatnonzero(table.group_index[valid] == g)
        if sel.size == 0:
            continue
        rows = valid[sel]
        y = table.signal[rows]
        x = np.log(table.effort[rows])
        workers = table.worker_ids[rows]
        _, winv = np.unique(workers, return_inverse=True)
        counts = np.bincount(winv)
        multi = counts[winv] >= 2

        use_fe = int(np.sum(counts >= 2)) >= 2
        if use_fe:
            xm = np.bincount(winv, weights=x) / counts
            ym = np.bincount(winv, weights=y) / counts
            xt = (x - xm[winv])[multi]
            yt = (y - ym[winv])[multi]
            vx = float(np.sum(xt**2))
            if vx < 1e-12:
                use_fe = False
                diagnostics[key] = "no within-worker variation in log effort; pooled OLS"
            else:
                gamma = float(np.sum(xt * yt) / vx)
                const = float(y.mean() - gamma * x.mean())
                u = yt - gamma * xt
                n_workers = int(np.sum(counts >= 2))
                dof = max(xt.size - n_workers - 1, 1)
                noise_var = float(np.sum(u**2) / dof)
        if not use_fe:
            if key not in diagnostics:
                diagnostics[key] = "too few repeat workers; pooled OLS"
            if sel.size < 2 or np.ptp(x) < 1e-12:
                raise ValueError(f"group {key!r} has no usable effort variation")
            const, gamma, noise_var = _pooled_ols(x, y)
        noise_var = max(noise_var, 1e-8)
        params[key] = (const, gamma, noise_var)
        residuals[sel] = y - const - gamma * x

    return SignalProductionFit(params, residuals, valid, diagnostics)


@dataclass
class EffortCorrectionModel:
    worker_ids: list[str]
    precision: np.ndarray          # S_j per worker
    weighted_mean: np.ndarray      # phi-tilde per worker
    posterior_mean: np.ndarray     # shrunk phi per worker
    v_eta: float
    cap: float = EB_CAP

    def log_shift(self) -> np.ndarray:
        return np.clip(self.posterior_mean, -self.cap, self.cap)


def correct_effort(
    fit: SignalProductionFit,
    table: ApplicationTable,
) -> tuple[np.ndarray, EffortCorrectionModel]:
    """Empirical-Bayes corrected efforts for the valid rows of ``table``.

    Residuals are scaled into efficiency units (y = r / gamma) with
    precision weights gamma^2 / V; worker means shrink toward zero by
    V_eta * S / (1 + V_eta * S), where V_eta comes from the
    method-of-moments variance decomposition over repeat workers (floored
    at zero).  Log-effort shifts are capped at +/-1.25.

    Returns (corrected efforts aligned with ``fit.valid_rows``, model).
    """
    rows = fit.valid_rows
    gkeys = [table.group_keys[g] for g in table.group_index[rows]]
    gamma = np.array([fit.params[k][1] for k in gkeys])
    noise = np.array([fit.params[k][2] for k in gkeys])
    y = fit.residuals / gamma
    w = gamma**2 / noise

    workers, winv = np.unique(table.worker_ids[rows], return_inverse=True)
    S = np.bincount(winv, weights=w)
    phi_tilde = np.bincount(winv, weights=w * y) / S

    counts = np.bincount(winv)
    rep = counts >= 2
    if rep.any():
        Sr, pr = S[rep], phi_tilde[rep]
        mu = float(np.sum(Sr * pr) / np.sum(Sr))
        var_w = float(np.sum(Sr * (pr - mu) ** 2) / np.sum(Sr))
        v_eta = max(var_w - rep.sum() / float(np.sum(Sr)), 0.0)
    else:
        v_eta = 0.0

    shrink = v_eta * S / (1.0 + v_eta * S)
    phi_eb = shrink * phi_tilde
    model = EffortCorrectionModel(
        worker_ids=[str(w_) for w_ in workers],
        precision=S,
        weighted_mean=phi_tilde,
        posterior_mean=phi_eb,
        v_eta=v_eta,
    )
    shift = model.log_shift()[winv]
    corrected = table.effort[rows] * np.exp(shift)
    return corrected, model


@dataclass
class TypePseudoData:
    """Recovered (cost, ability) per accepted application."""

    rows: np.ndarray               # indices into the source table
    c_hat: np.ndarray
    a_hat: np.ndarray
    bid: np.ndarray
    effort: np.ndarray             # corrected effort used in the inversion
    signal: np.ndarray
    group_index: np.ndarray
    group_keys: list[str]
    rejects: list[tuple[int, str]] = field(default_factory=list)

    @property
    def reject_rate(self) -> float:
        n = self.rows.size + len(self.rejects)
        return len(self.rejects) / n if n else 0.0

    def by_group(self) -> dict[str, tuple[np.ndarray, np.ndarray]]:
        """Group key -> (signals, abilities), the belief-fitting input."""
        out = {}
        for g, key in enumerate(self.group_keys):
            sel = self.group_index == g
            if sel.any():
                out[key] = (self.signal[sel], self.a_hat[sel])
        return out


def invert_focs(
    surface: WinProbabilitySurface,
    table: ApplicationTable,
    corrected_effort: np.ndarray,
    valid_rows: np.ndarray,
) -> TypePseudoData:
    """Invert bid and effort first-order conditions into type pseudo-data.

    cost = bid + P / (dP/db); ability solves e * exp(-a) = (dP/de) * (bid
    - cost).  Applications where the surface violates P > 0, dP/db < 0,
    or dP/de > 0 become reject records instead of crashing the batch.
    """
    n = valid_rows.size
    P = np.full(n, np.nan)
    db = np.full(n, np.nan)
    de = np.full(n, np.nan)
    gidx = table.group_index[valid_rows]
    bids = table.bid[valid_rows]
    # corrected efforts can leave the measurement window; the surface domain caps them
    efforts = np.clip(corrected_effort, EFFORT_FLOOR, EFFORT_MAX)
    for g, key in enumerate(table.group_keys):
        sel = np.flatnonzero(gidx == g)
        if sel.size == 0:
            continue
        if key not in surface.pool.groups:
            continue  # leaves nan -> rejected below
        p, d_b, d_e = surface.prob_and_gradient(key, bids[sel], efforts[sel])
        P[sel], db[sel], de[sel] = p, d_b, d_e

    rejects: list[tuple[int, str]] = []
    ok = np.ones(n, dtype=bool)
    for i in range(n):
        if np.isnan(P[i]):
            rejects.append((int(valid_rows[i]), "group absent from surface"))
            ok[i] = False
        elif P[i] <= 0.0:
            rejects.append((int(valid_rows[i]), "win probability not positive"))
            ok[i] = False
        elif db[i] >= 0.0:
            rejects.append((int(valid_rows[i]), "bid derivative not negative"))
            ok[i] = False
        elif de[i] <= 0.0:
            rejects.append((int(valid_rows[i]), "effort derivative not positive"))
            ok[i] = False

    rows = valid_rows[ok]
    markup = -P[ok] / db[ok]
    c_hat = bids[ok] - markup
    a_hat = np.log(efforts[ok]) - np.log(de[ok] * markup)
    bad = ~np.isfinite(c_hat) | ~np.isfinite(a_hat)
    if bad.any():
        for r in rows[bad]:
            rejects.append((int(r), "non-finite inversion"))
    keep = ~bad
    return TypePseudoData(
        rows=rows[keep],
        c_hat=c_hat[keep],
        a_hat=a_hat[keep],
        bid=bids[ok][keep],
        effort=efforts[ok][keep],
        signal=table.signal[rows[keep]],
        group_index=gidx[ok][keep],
        group_keys=list(table.group_keys),
        rejects=rejects,
    )
