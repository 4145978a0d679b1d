"""Employer-choice maximum likelihood with the abandonment mixture.

Two stages share one likelihood core: the reduced form puts a per-group
linear-in-signal index on each considered application, the structural
stage replaces signals with belief pseudo-data.  The bid coefficient
enters the index additively, so its estimate is expected to be negative;
``ModelParams.alpha`` is the corresponding positive disutility.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from .data import ApplicationTable


@dataclass
class ReducedFormParams:
    alpha_signed: float
    k_lambda: dict[str, float]
    gamma_lambda: dict[str, float]
    pi: float

    def __post_init__(self):
        if not (0.0 < self.pi < 1.0):
            raise ValueError("pi must lie in (0, 1)")

    def delta(self, group_key, signal, bid):
        return (
            self.k_lambda[group_key]
            + self.gamma_lambda[group_key] * np.asarray(signal, dtype=float)
            + self.alpha_signed * np.asarray(bid, dtype=float)
        )


@dataclass
class StructuralParams:
    alpha_signed: float
    beta: float
    t_by_group: dict[str, float]
    pi: float

    def __post_init__(self):
        if not (0.0 < self.pi < 1.0):
            raise ValueError("pi must lie in (0, 1)")

    def delta(self, group_key, belief, bid):
        return (
            self.t_by_group[group_key]
            + self.beta * np.asarray(belief, dtype=float)
            + self.alpha_signed * np.asarray(bid, dtype=float)
        )


@dataclass
class FitReport:
    converged: bool
    iterations: int
    grad_sup_norm: float
    loglik: float
    std_errors: dict[str, float] = field(default_factory=dict)
    message: str = ""


@dataclass
class ChoiceData:
    """Considered applications only, plus each job's realized outcome."""

    job_index: np.ndarray
    group_index: np.ndarray
    bid: np.ndarray
    cov: np.ndarray               # signal (reduced form) or belief (structural)
    win_row: np.ndarray           # per job: row into the arrays above, -1 = outside
    n_jobs: int
    group_keys: list[str]

    @classmethod
    def from_table(cls, table: ApplicationTable, covariate: str = "signal") -> "ChoiceData":
        cov_full = table.signal if covariate == "signal" else table.belief
        keep = table.considered
        winners_full = table.job_winner_rows()
        for j, r in enumerate(winners_full):
            if r >= 0 and not table.considered[r]:
                raise ValueError(f"job {table.job_ids[j]} winner is not in the consideration set")
        rows = np.flatnonzero(keep)
        if np.any(np.isnan(cov_full[rows])):
            raise ValueError(f"missing {covariate} on a considered application")
        pos = np.full(table.n_apps, -1, dtype=int)
        pos[rows] = np.arange(rows.size)
        win_row = np.where(winners_full >= 0, pos[np.maximum(winners_full, 0)], -1)
        return cls(
            job_index=table.job_index[rows],
            group_index=table.group_index[rows],
            bid=table.bid[rows],
            cov=cov_full[rows],
            win_row=win_row,
            n_jobs=table.n_jobs,
            group_keys=list(table.group_keys),
        )

    @property
    def n_groups(self) -> int:
        return len(self.group_keys)


def _logit(psi):
    return 1.0 / (1.0 + np.exp(-psi))


def _mixture_core(delta: np.ndarray, data: ChoiceData, pi: float):
    """Log-likelihood and d/d(delta, pi) of the abandonment-mixture logit.

    Inside win: delta_w - log(1 + sum exp delta) + log pi.
    Outside:    log(pi / (1 + sum exp delta) + 1 - pi).
    """
    nj = data.n_jobs
    m = np.zeros(nj)
    np.maximum.at(m, data.job_index, delta)
    m = np.maximum(m, 0.0)
    e = np.exp(delta - m[data.job_index])
    sum_e = np.bincount(data.job_index, weights=e, minlength=nj)
    lse = m + np.log(np.exp(-m) + sum_e)          # log(1 + sum exp delta)
    p = e * np.exp(m[data.job_index] - lse[data.job_index])  # exp(delta - lse)

    inside = data.win_row >= 0
    p0 = np.exp(-lse)                              # 1 / (1 + sum exp)
    mix0 = pi * p0 + (1.0 - pi)                    # outside-choice probability

    ll = 0.0
    win_rows = data.win_row[inside]
    ll += float(np.sum(delta[win_rows] - lse[inside])) + inside.sum() * np.log(pi)
    ll += float(np.sum(np.log(mix0[~inside])))

    # d ll / d delta_k: inside jobs 1{win} - p; outside jobs -(pi*p0/mix0) * p
    scale = np.where(inside, -1.0, -(pi * p0) / mix0)
    g = scale[data.job_index] * p
    np.add.at(g, win_rows, 1.0)

    # d ll / d pi
    dpi = inside.sum() / pi + float(np.sum((p0[~inside] - 1.0) / mix0[~inside]))
    return ll, g, dpi


def _reduced_unpack(theta, n_groups):
    alpha = theta[0]
    K = theta[1 : 1 + n_groups]
    gam = theta[1 + n_groups : 1 + 2 * n_groups]
    psi = theta[-1]
    return alpha, K, gam, psi


def reduced_form_loglik(params: ReducedFormParams, data: ChoiceData) -> float:
    """Pseudo-log-likelihood of choices under the linear-in-signal index."""
    K = np.array([params.k_lambda[k] for k in data.group_keys])
    gam = np.array([params.gamma_lambda[k] for k in data.group_keys])
    delta = K[data.group_index] + gam[data.group_index] * data.cov + params.alpha_signed * data.bid
    ll, _, _ = _mixture_core(delta, data, params.pi)
    return ll


def _reduced_negloglik_grad(theta, data: ChoiceData):
    ng = data.n_groups
    alpha, K, gam, psi = _reduced_unpack(theta, ng)
    pi = _logit(psi)
    delta = K[data.group_index] + gam[data.group_index] * data.cov + alpha * data.bid
    ll, g, dpi = _mixture_core(delta, data, pi)
    grad = np.empty_like(theta)
    grad[0] = np.dot(g, data.bid)
    grad[1 : 1 + ng] = np.bincount(data.group_index, weights=g, minlength=ng)
    grad[1 + ng : 1 + 2 * ng] = np.bincount(data.group_index, weights=g * data.cov, minlength=ng)
    grad[-1] = dpi * pi * (1.0 - pi)
    return -ll, -grad


def _structural_negloglik_grad(theta, data: ChoiceData):
    ng = data.n_groups
    alpha, beta = theta[0], theta[1]
    T = theta[2 : 2 + ng]
    psi = theta[-1]
    pi = _logit(psi)
    delta = T[data.group_index] + beta * data.cov + alpha * data.bid
    ll, g, dpi = _mixture_core(delta, data, pi)
    grad = np.empty_like(theta)
    grad[0] = np.dot(g, data.bid)
    grad[1] = np.dot(g, data.cov)
    grad[2 : 2 + ng] = np.bincount(data.group_index, weights=g, minlength=ng)
    grad[-1] = dpi * pi * (1.0 - pi)
    return -ll, -grad


def structural_loglik(params: StructuralParams, data: ChoiceData) -> float:
    """Log-likelihood with beliefs in place of signals."""
    T = np.array([params.t_by_group[k] for k in data.group_keys])
    delta = T[data.group_index] + params.beta * data.cov + params.alpha_signed * data.bid
    ll, _, _ = _mixture_core(delta, data, params.pi)
    return ll


def _pi_init(data: ChoiceData) -> float:
    outside_share = float(np.mean(data.win_row < 0))
    return float(np.clip(1.0 - outside_share, 0.02, 0.98))


def _check_identified(data: ChoiceData) -> None:
    inside = int(np.sum(data.win_row >= 0))
    if inside == 0 or inside == data.n_jobs:
        raise ValueError("need at least one inside win and one outside outcome to identify pi")


def _run_mle(fun, theta0, data, tol):
    res = optimize.minimize(
        fun,
        theta0,
        args=(data,),
        jac=True,
        method="L-BFGS-B",
        options={"maxiter": 1000, "gtol": 1e-10, "ftol": 1e-13},
    )
    grad = fun(res.x, data)[1]
    sup = float(np.max(np.abs(grad)))
    converged = sup < tol
    return res, sup, converged


def _std_errors(fun, theta, data, step=1e-5):
    """Inverse-Hessian standard errors; Hessian by central differences of the gradient."""
    n = theta.size
    H = np.empty((n, n))
    for i in range(n):
        h = step * max(1.0, abs(theta[i]))
        tp, tm = theta.copy(), theta.copy()
        tp[i] += h
        tm[i] -= h
        H[i] = (fun(tp, data)[1] - fun(tm, data)[1]) / (2 * h)
    H = 0.5 * (H + H.T)
    try:
        cov = np.linalg.inv(H)
        se = np.sqrt(np.clip(np.diag(cov), 0.0, np.inf))
    except np.linalg.LinAlgError:
        se = np.full(n, np.nan)
    return se


def fit_reduced_form(data: ChoiceData, init: ReducedFormParams | None = None, tol: float = 1e-5):
    """Maximize the reduced-form pseudo-log-likelihood.

    Returns (ReducedFormParams, FitReport).  pi is optimized on the logit
    scale; standard errors come from the inverse numerical Hessian.
    """
    _check_identified(data)
    ng = data.n_groups
    if init is None:
        theta0 = np.zeros(2 * ng + 2)
        theta0[-1] = np.log(_pi_init(data) / (1 - _pi_init(data)))
    else:
        theta0 = np.concatenate(
            [
                [init.alpha_signed],
                [init.k_lambda[k] for k in data.group_keys],
                [init.gamma_lambda[k] for k in data.group_keys],
                [np.log(init.pi / (1 - init.pi))],
            ]
        )
    res, sup, converged = _run_mle(_reduced_negloglik_grad, theta0, data, tol)
    alpha, K, gam, psi = _reduced_unpack(res.x, ng)
    pi = _logit(psi)
    se = _std_errors(_reduced_negloglik_grad, res.x, data)
    names = (
        ["alpha_signed"]
        + [f"k_lambda[{k}]" for k in data.group_keys]
        + [f"gamma_lambda[{k}]" for k in data.group_keys]
        + ["pi"]
    )
    se[-1] = se[-1] * pi * (1 - pi)  # delta method from the logit scale
    params = ReducedFormParams(
        alpha_signed=float(alpha),
        k_lambda={k: float(v) for k, v in zip(data.group_keys, K)},
        gamma_lambda={k: float(v) for k, v in zip(data.group_keys, gam)},
        pi=float(pi),
    )
    report = FitReport(
        converged=converged,
        iterations=int(res.nit),
        grad_sup_norm=sup,
        loglik=-float(res.fun),
        std_errors=dict(zip(names, se)),
        message="" if converged else f"gradient sup-norm {sup:.2e} above tol {tol:.1e}",
    )
    return params, report


def fit_structural(data: ChoiceData, init: StructuralParams | None = None, tol: float = 1e-5):
    """Maximize the structural log-likelihood (beliefs replace signals)."""
    _check_identified(data)
    ng = data.n_groups
    if init is None:
        theta0 = np.zeros(ng + 3)
        theta0[-1] = np.log(_pi_init(data) / (1 - _pi_init(data)))
    else:
        theta0 = np.concatenate(
            [
                [init.alpha_signed, init.beta],
                [init.t_by_group[k] for k in data.group_keys],
                [np.log(init.pi / (1 - init.pi))],
            ]
        )
    res, sup, converged = _run_mle(_structural_negloglik_grad, theta0, data, tol)
    alpha, beta = res.x[0], res.x[1]
    T = res.x[2 : 2 + ng]
    pi = _logit(res.x[-1])
    se = _std_errors(_structural_negloglik_grad, res.x, data)
    se[-1] = se[-1] * pi * (1 - pi)
    names = ["alpha_signed", "beta"] + [f"T[{k}]" for k in data.group_keys] + ["pi"]
    params = StructuralParams(
        alpha_signed=float(alpha),
        beta=float(beta),
        t_by_group={k: float(v) for k, v in zip(data.group_keys, T)},
        pi=float(pi),
    )
    report = FitReport(
        converged=converged,
        iterations=int(res.nit),
        grad_sup_norm=sup,
        loglik=-float(res.fun),
        std_errors=dict(zip(names, se)),
        message="" if converged else f"gradient sup-norm {sup:.2e} above tol {tol:.1e}",
    )
    return params, report


def wtp_per_sd(coef: float, alpha_signed: float, sd: float) -> float:
    """Dollar value of a one-SD covariate change: sd * coef / |alpha|."""
    if alpha_signed == 0.0:
        raise ZeroDivisionError("bid coefficient is zero; WTP undefined")
    return sd * coef / abs(alpha_signed)


def choice_probabilities(delta_inside: np.ndarray, pi: float):
    """(inside win probabilities, outside probability) for one job.

    Inside j: pi * exp(delta_j) / (1 + sum exp); outside: pi / (1 + sum)
    + (1 - pi).  Sums to 1 by construction.
    """
    delta_inside = np.asarray(delta_inside, dtype=float)
    m = max(0.0, delta_inside.max()) if delta_inside.size else 0.0
    denom = np.exp(-m) + np.sum(np.exp(delta_inside - m))
    inside = pi * np.exp(delta_inside - m) / denom
    outside = pi * np.exp(-m) / denom + (1.0 - pi)
    return inside, outside
