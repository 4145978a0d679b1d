"""Signal scoring, effort-measurement validation, and consideration sets.

Signals are a weighted sum of nine ternary criteria with the custom block
zeroed for near copy-pasted proposals; consideration sets come from a
five-step score/trim/expand algorithm over click, rank, and timestamp
records.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

MS_PER_MINUTE = 60_000
EFFORT_MIN_MS = 4_000           # 4 seconds
EFFORT_MAX_MS = 12 * MS_PER_MINUTE
COPY_PASTE_THRESHOLD = 0.04     # inclusive: d_edit >= 0.04 keeps custom scores
SIGNAL_SCALE = 18.0 / 28.0
CONSIDERED_CAP = 32
PAGE_SIZE = 8


@dataclass(frozen=True)
class CriteriaVector:
    custom: tuple[int, int, int, int, int]
    generic: tuple[int, int, int, int]

    def __post_init__(self):
        if len(self.custom) != 5 or len(self.generic) != 4:
            raise ValueError("need 5 custom and 4 generic scores")
        for v in self.custom + self.generic:
            if v not in (0, 1, 2):
                raise ValueError(f"criteria scores are ternary, got {v}")


def levenshtein(a, b) -> int:
    """Edit distance between two sequences (two-row DP)."""
    n, m = len(a), len(b)
    if n > m:
        a, b, n, m = b, a, m, n
    prev = list(range(n + 1))
    for i in range(1, m + 1):
        cur = [i] + [0] * n
        bi = b[i - 1]
        for j in range(1, n + 1):
            cost = 0 if a[j - 1] == bi else 1
            cur[j] = min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + cost)
        prev = cur
    return prev[n]


def normalized_edit_distance(a: str, b: str, unit: str = "word") -> float:
    """Levenshtein distance divided by the longer sequence length, in [0, 1].

    ``unit='word'`` (the default) operates on whitespace-split tokens --
    the share of words that would need to change; ``unit='char'`` on raw
    characters.  Two empty texts are at distance 0.
    """
    if unit == "word":
        sa, sb = a.split(), b.split()
    elif unit == "char":
        sa, sb = a, b
    else:
        raise ValueError(f"unknown unit {unit!r}")
    denom = max(len(sa), len(sb))
    if denom == 0:
        return 0.0
    return levenshtein(sa, sb) / denom


def min_worker_edit_distance(proposal: str, other_proposals, unit: str = "word") -> float:
    """Minimum normalized distance to the worker's other proposals.

    Returns 1 when there is nothing to compare against, the convention
    for proposals whose distance cannot be computed.
    """
    others = list(other_proposals)
    if not others:
        return 1.0
    return min(normalized_edit_distance(proposal, o, unit=unit) for o in others)


def aggregate_signal(criteria: CriteriaVector, d_edit: float) -> float:
    """Weighted criteria score in [0, 18].

    Custom criteria carry double weight and are zeroed when the proposal
    is within 4% edit distance of another proposal by the same worker.
    """
    if not (0.0 <= d_edit <= 1.0):
        raise ValueError(f"d_edit must lie in [0, 1], got {d_edit}")
    keep_custom = 1.0 if d_edit >= COPY_PASTE_THRESHOLD else 0.0
    return SIGNAL_SCALE * (2.0 * sum(criteria.custom) * keep_custom + sum(criteria.generic))


class EffortReject(str, Enum):
    NEGATIVE = "Negative"
    MISSING = "Missing"
    TOO_LONG = "TooLong"
    TOO_SHORT = "TooShort"


def validate_effort(first_view_ms, submitted_ms):
    """Elapsed minutes between first view and submission, if plausible.

    Returns ``(minutes, None)`` for elapsed times in [4s, 12min] and
    ``(None, reason)`` otherwise; rejection reasons are values, not
    faults.
    """
    if first_view_ms is None or submitted_ms is None:
        return None, EffortReject.MISSING
    delta = int(submitted_ms) - int(first_view_ms)
    if delta < 0:
        return None, EffortReject.NEGATIVE
    if delta < EFFORT_MIN_MS:
        return None, EffortReject.TOO_SHORT
    if delta > EFFORT_MAX_MS:
        return None, EffortReject.TOO_LONG
    return delta / MS_PER_MINUTE, None


def score_record(rec: dict, unit: str = "word") -> dict:
    """Augment one schema record with signal and effort fields."""
    out = dict(rec)
    crit = CriteriaVector(tuple(rec["criteria_custom"]), tuple(rec["criteria_generic"]))
    out["signal"] = aggregate_signal(crit, float(rec["d_edit"]))
    minutes, reject = validate_effort(rec.get("first_view_ms"), rec.get("submitted_ms"))
    out["effort_minutes"] = minutes
    out["effort_reject"] = None if reject is None else reject.value
    return out


# ---------------------------------------------------------------------------
# Consideration sets
# ---------------------------------------------------------------------------

TWO_HOURS_MS = 2 * 60 * MS_PER_MINUTE
FIVE_MINUTES_MS = 5 * MS_PER_MINUTE
TWELVE_HOURS_MS = 12 * 60 * MS_PER_MINUTE


@dataclass(frozen=True)
class ClickRecord:
    """Click/rank/timestamp data for one application.

    Operationally the consideration algorithm consumes schema dicts; this
    type documents and validates the per-application inputs.
    """

    job_id: str
    worker_id: str
    submitted_at: int                       # ms
    first_view_at: int | None
    employer_engaged: bool
    messages_count: int
    rank_at_close: int
    page_at_close: int
    engaged_rank_reference: int | None = None

    def __post_init__(self):
        if self.rank_at_close < 1 or self.page_at_close < 1:
            raise ValueError("ranks and pages are 1-indexed")
        expect = -(-self.rank_at_close // PAGE_SIZE)  # ceil division
        if self.page_at_close != expect:
            raise ValueError(
                f"page {self.page_at_close} inconsistent with rank {self.rank_at_close} "
                f"({PAGE_SIZE} applications per page)"
            )
        if self.messages_count < 0:
            raise ValueError("messages_count must be >= 0")

    def to_record(self) -> dict:
        return {
            "job_id": self.job_id,
            "worker_id": self.worker_id,
            "submitted_ms": self.submitted_at,
            "first_view_ms": self.first_view_at,
            "engaged": self.employer_engaged,
            "messages": self.messages_count,
            "rank_at_close": self.rank_at_close,
        }


@dataclass
class ConsiderationResult:
    considered: dict[tuple[str, str], bool]   # (job_id, worker_id) -> flag
    dropped_jobs: list[str]
    excluded_jobs: list[str]                  # missing rank data; diagnostics
    percentile_75: int


def _condition_points(job_recs):
    """Step-1 scores and the per-condition-1 flag for one job's records.

    Records need: submitted_ms, posted_ms (optional), engaged, messages,
    rank_at_close, won.
    """
    posted = int(job_recs[0].get("posted_ms", 0) or 0)
    sub = np.array([int(r["submitted_ms"]) for r in job_recs])
    rank = np.array([int(r["rank_at_close"]) for r in job_recs])
    engaged = np.array(
        [bool(r.get("engaged", False)) or int(r.get("messages", 0)) >= 2 or bool(r.get("won", False))
         for r in job_recs]
    )
    since_post = sub - posted

    # order of submission (ties by rank, then stable)
    sub_order = np.lexsort((rank, sub))
    submit_pos = np.empty(len(job_recs), dtype=int)
    submit_pos[sub_order] = np.arange(len(job_recs))

    c1 = engaged
    c2 = (submit_pos < 8) & (since_post <= TWO_HOURS_MS)
    c3 = (rank <= PAGE_SIZE) & (since_post <= TWO_HOURS_MS)
    n_fast = int(np.sum(since_post <= FIVE_MINUTES_MS))
    c4 = (since_post <= FIVE_MINUTES_MS) & (n_fast < 30)

    # condition 5: above the latest-submitted engaged application, present
    # by the time it was submitted (ties resolved by (timestamp, rank))
    c5 = np.zeros(len(job_recs), dtype=bool)
    if engaged.any():
        eng_idx = np.flatnonzero(engaged)
        ref = eng_idx[np.lexsort((rank[eng_idx], sub[eng_idx]))[-1]]
        c5 = (sub <= sub[ref]) & (rank < rank[ref])
        c5[ref] = False

    score = c1.astype(int) + c2 + c3 + c4 + c5
    return score, c1, submit_pos, rank, since_post


def build_consideration_sets(jobs_records: dict[str, list[dict]], era: str = "PreLLM") -> ConsiderationResult:
    """Flag considered applications per the score/trim/expand algorithm.

    ``jobs_records`` maps job_id to that job's schema records.  The Step-2
    trim threshold is the era sample's own nearest-rank 75th percentile of
    step-1 considered-set sizes; ``era`` labels the corpus ("PreLLM" or
    "PostLLM") in diagnostics.  Jobs with missing rank data are excluded
    with a diagnostic rather than failing the batch.
    """
    if era not in ("PreLLM", "PostLLM"):
        raise ValueError(f"unknown era {era!r}")

    excluded = []
    per_job = {}
    for jid, recs in jobs_records.items():
        if any(r.get("rank_at_close") is None or r.get("submitted_ms") is None for r in recs):
            excluded.append(jid)
            continue
        score, c1, submit_pos, rank, since_post = _condition_points(recs)
        won = np.array([bool(r.get("won", False)) for r in recs])
        msgs = np.array([int(r.get("messages", 0)) for r in recs])
        per_job[jid] = {
            "score": score,
            "c1": c1,
            "flag": score >= 1,
            "submit_pos": submit_pos,
            "rank": rank,
            "since_post": since_post,
            "won": won,
            "messages": msgs,
        }

    sizes = np.array([int(j["flag"].sum()) for j in per_job.values()])
    if sizes.size == 0:
        return ConsiderationResult({}, [], excluded, 0)
    # nearest-rank 75th percentile
    p75 = int(np.sort(sizes)[int(np.ceil(0.75 * sizes.size)) - 1])

    dropped = []
    for jid, j in per_job.items():
        flag = j["flag"]
        score, c1 = j["score"], j["c1"]
        only_weak = (score == 1) & ~c1

        # Step 2: trim sets above the sample's 75th percentile
        if flag.sum() > p75:
            flag = flag & ~only_weak

        n_total = len(flag)
        # Step 3a-3e: expansion passes for small sets
        if flag.sum() < 5 and n_total > 15:
            flag = flag | (j["rank"] <= 2 * PAGE_SIZE)
        if flag.sum() < 5 and n_total < 9:
            flag = flag | (j["since_post"] <= TWELVE_HOURS_MS)
        if flag.sum() < 3:
            flag = flag | ((j["rank"] <= PAGE_SIZE) & (j["since_post"] <= TWELVE_HOURS_MS))
        if flag.sum() < 3 and n_total < 8:
            flag = np.ones_like(flag)
        if flag.sum() < 3:
            flag = flag | (j["submit_pos"] < 5)

        # Step 4a-4e: trim passes for sets above the cap
        if flag.sum() > CONSIDERED_CAP:
            flag = flag & ~only_weak
        if flag.sum() > CONSIDERED_CAP:
            flag = flag & ~((score == 2) & ~c1)
        if flag.sum() > CONSIDERED_CAP:
            flag = flag & ~((score == 3) & ~c1)
        if flag.sum() > CONSIDERED_CAP:
            flag = flag & ~((score == 4) & ~c1)
        if flag.sum() > CONSIDERED_CAP:
            # hired applications stay considered regardless of messages
            flag = flag & ~((score == 4) & (j["messages"] < 5) & ~j["won"])

        # hiring is the strongest interaction; the winner is always in
        flag = flag | j["won"]
        j["flag"] = flag

        # Step 5: drop unawarded jobs still above the cap
        if flag.sum() > CONSIDERED_CAP and not j["won"].any():
            dropped.append(jid)

    flags = {}
    for jid, recs in jobs_records.items():
        if jid in per_job and jid not in dropped:
            for rec, q in zip(recs, per_job[jid]["flag"]):
                flags[(jid, str(rec["worker_id"]))] = bool(q)
    return ConsiderationResult(flags, dropped, excluded, p75)
