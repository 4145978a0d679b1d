"""Model primitives: worker/employer types, effort costs, signal production, payoffs.

Everything here is a pure function of its inputs; random draws take an
explicit ``numpy.random.Generator`` owned by the caller.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

# Admissible action box shared across the whole pipeline.
BID_MIN = 30.0
BID_MAX = 250.0
EFFORT_FLOOR = 1.0 / 15.0  # 4 seconds, in minutes
EFFORT_MAX = 12.0


class CountryGroup(str, Enum):
    ENGLISH_SPEAKING = "EnglishSpeaking"
    SOUTH_ASIA = "SouthAsia"
    EUROPE = "Europe"
    OTHER = "Other"
    NOT_SOUTH_ASIA_SPIKE = "NotSouthAsiaSpike"


class ArrivalGroup(str, Enum):
    ARR_0_5 = "Arr0to5"
    ARR_5_45 = "Arr5to45"
    SPIKE = "SpikeArrival"
    ARR_OVER_45 = "ArrOver45"


class ReputationGroup(str, Enum):
    ROOKIE = "Rookie"
    LOW = "Low"
    MIDDLE = "Middle"
    HIGH = "High"


@dataclass(frozen=True)
class ObservableGroup:
    """One cell of the country x arrival x reputation stratification.

    Spike arrivals only exist for South Asia and for the pooled
    non-South-Asia spike bucket, which collapses the otherwise sparse
    cells into one group; the cross product therefore has 56 valid cells.
    """

    country: CountryGroup
    arrival: ArrivalGroup
    reputation: ReputationGroup

    def __post_init__(self):
        spike_country = self.country in (
            CountryGroup.SOUTH_ASIA,
            CountryGroup.NOT_SOUTH_ASIA_SPIKE,
        )
        if self.arrival is ArrivalGroup.SPIKE and not spike_country:
            raise ValueError(
                f"spike arrivals outside South Asia pool into "
                f"{CountryGroup.NOT_SOUTH_ASIA_SPIKE.value}, got {self.country.value}"
            )
        if self.country is CountryGroup.NOT_SOUTH_ASIA_SPIKE and self.arrival is not ArrivalGroup.SPIKE:
            raise ValueError(
                f"{CountryGroup.NOT_SOUTH_ASIA_SPIKE.value} only exists for spike arrivals"
            )

    @property
    def key(self) -> str:
        return f"{self.country.value}|{self.arrival.value}|{self.reputation.value}"

    @classmethod
    def from_key(cls, key: str) -> "ObservableGroup":
        c, a, r = key.split("|")
        return cls(CountryGroup(c), ArrivalGroup(a), ReputationGroup(r))

    @classmethod
    def from_fields(cls, country: str, arrival: str, reputation: str) -> "ObservableGroup":
        return cls(CountryGroup(country), ArrivalGroup(arrival), ReputationGroup(reputation))


def all_groups() -> list[ObservableGroup]:
    """Enumerate the 56 valid observable groups."""
    out = []
    for c in CountryGroup:
        for a in ArrivalGroup:
            if a is ArrivalGroup.SPIKE and c not in (
                CountryGroup.SOUTH_ASIA,
                CountryGroup.NOT_SOUTH_ASIA_SPIKE,
            ):
                continue
            if c is CountryGroup.NOT_SOUTH_ASIA_SPIKE and a is not ArrivalGroup.SPIKE:
                continue
            for r in ReputationGroup:
                out.append(ObservableGroup(c, a, r))
    return out


@dataclass(frozen=True)
class WorkerType:
    """Private (cost, ability) pair plus the worker's observable group."""

    cost: float
    ability: float
    group: ObservableGroup


OUTSIDE_OPTION = "__outside__"


@dataclass
class Application:
    """One worker's action at one job post."""

    job_id: str
    worker_id: str
    group: ObservableGroup
    bid: float
    effort: float | None = None  # minutes; None when the measurement is invalid
    signal: float = 0.0
    considered: bool = False
    won: bool = False
    completed_5star: bool | None = None
    signal_noise: float | None = None  # simulation only

    def __post_init__(self):
        if self.won and not self.considered:
            raise ValueError(f"application {self.job_id}/{self.worker_id} won but not considered")
        if not (BID_MIN <= self.bid <= BID_MAX):
            raise ValueError(f"bid {self.bid} outside [{BID_MIN}, {BID_MAX}]")
        if self.effort is not None and not (EFFORT_FLOOR <= self.effort <= EFFORT_MAX):
            raise ValueError(f"effort {self.effort} outside validity window")


@dataclass
class JobPost:
    job_id: str
    applications: list[Application] = field(default_factory=list)
    abandoned: bool | None = None
    winner: str | None = None  # worker_id, OUTSIDE_OPTION, or None if unresolved

    def __post_init__(self):
        winners = [a for a in self.applications if a.won]
        if len(winners) > 1:
            raise ValueError(f"job {self.job_id} has {len(winners)} winners")
        if self.abandoned and self.winner not in (None, OUTSIDE_OPTION):
            raise ValueError(f"abandoned job {self.job_id} has winner {self.winner}")

    @property
    def considered(self) -> list[Application]:
        return [a for a in self.applications if a.considered]


@dataclass
class ModelParams:
    """Structural parameters of the market.

    ``alpha`` is the disutility per dollar of bid (positive); the
    estimation modules work with the signed coefficient ``alpha_signed``
    = -alpha, the convention in which the bid enters utility additively.
    The per-group maps are keyed by ``ObservableGroup.key``.
    """

    alpha: float
    beta: float
    t_by_group: dict[str, float]
    pi: float
    signal_K: dict[str, float] = field(default_factory=dict)
    signal_gamma: dict[str, float] = field(default_factory=dict)
    signal_noise_var: dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if self.alpha <= 0:
            raise ValueError("alpha must be positive (disutility of bid)")
        if not (0.0 <= self.pi <= 1.0):
            raise ValueError("pi must lie in [0, 1]")
        for g, gam in self.signal_gamma.items():
            if gam <= 0:
                raise ValueError(f"signal_gamma[{g}] must be > 0")
        for g, v in self.signal_noise_var.items():
            if v <= 0:
                raise ValueError(f"signal_noise_var[{g}] must be > 0")

    @property
    def alpha_signed(self) -> float:
        return -self.alpha

    def groups(self) -> list[str]:
        return sorted(self.t_by_group)


def effort_cost(effort, ability):
    """Cost of signaling effort, e**2 / (2 * exp(a)).

    Strictly convex and increasing in effort, decreasing in ability;
    vanishes as effort goes to zero.
    """
    effort = np.asarray(effort, dtype=float)
    if np.any(effort < 0):
        raise ValueError("effort must be nonnegative")
    out = 0.5 * effort**2 * np.exp(-np.asarray(ability, dtype=float))
    return out if out.ndim else float(out)


def marginal_effort_cost(effort, ability):
    """d/de of :func:`effort_cost`: e * exp(-a)."""
    effort = np.asarray(effort, dtype=float)
    if np.any(effort < 0):
        raise ValueError("effort must be nonnegative")
    out = effort * np.exp(-np.asarray(ability, dtype=float))
    return out if out.ndim else float(out)


def signal_mean(effort, group: ObservableGroup | str, params: ModelParams):
    """Deterministic part of signal production, K(x) + gamma(x) * log(e)."""
    effort = np.asarray(effort, dtype=float)
    if np.any(effort <= 0):
        raise ValueError("effort must be positive (log-linear production)")
    key = group.key if isinstance(group, ObservableGroup) else group
    out = params.signal_K[key] + params.signal_gamma[key] * np.log(effort)
    return out if out.ndim else float(out)


def draw_signal(effort, group: ObservableGroup | str, params: ModelParams, rng: np.random.Generator):
    """Realized signal: production mean plus Gaussian noise.

    Noise is homoskedastic within group and independent of types and
    effort given the group.
    """
    key = group.key if isinstance(group, ObservableGroup) else group
    mean = signal_mean(effort, key, params)
    sd = float(np.sqrt(params.signal_noise_var[key]))
    noise = rng.normal(0.0, sd, size=np.shape(mean)) if np.ndim(mean) else rng.normal(0.0, sd)
    return mean + noise


def employer_utility(bid, ability, group: ObservableGroup | str, taste_shock, params: ModelParams):
    """Employer's indirect utility of hiring: T(x) + beta * a - alpha * b + shock.

    The outside option's utility is its taste shock alone (level
    normalized to zero).
    """
    key = group.key if isinstance(group, ObservableGroup) else group
    t = params.t_by_group[key]
    out = t + params.beta * np.asarray(ability, dtype=float) - params.alpha * np.asarray(bid, dtype=float)
    out = out + np.asarray(taste_shock, dtype=float)
    return out if out.ndim else float(out)


def worker_expost_utility(bid, effort, cost, ability, won):
    """Worker's realized payoff: won * (bid - cost) - effort cost.

    The effort cost is sunk whether or not the worker is hired.
    """
    won = np.asarray(won, dtype=float)
    gain = won * (np.asarray(bid, dtype=float) - np.asarray(cost, dtype=float))
    out = gain - effort_cost(effort, ability)
    return out if out.ndim else float(out)


def ability_in_dollars(ability, params: ModelParams):
    """Report-scale ability: employers' WTP per unit is beta / alpha dollars."""
    return (params.beta / params.alpha) * np.asarray(ability, dtype=float)
