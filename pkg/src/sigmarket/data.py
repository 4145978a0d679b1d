"""JSONL application schema and a columnar view used by the estimation stages.

One record per application.  Required input fields (exact names):
job_id, worker_id, bid, criteria_custom (5 ints), criteria_generic (4 ints),
d_edit, first_view_ms, submitted_ms, country_group, arrival_group,
reputation_group, engaged, messages, rank_at_close.  ``posted_ms`` is an
optional extension (the job's posting instant; defaults to 0, i.e.
timestamps measured relative to posting).  Stages append: signal,
effort_minutes / effort_reject, considered, won, c_hat, a_hat, belief.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .core import ObservableGroup

REQUIRED_FIELDS = (
    "job_id",
    "worker_id",
    "bid",
    "criteria_custom",
    "criteria_generic",
    "d_edit",
    "first_view_ms",
    "submitted_ms",
    "country_group",
    "arrival_group",
    "reputation_group",
    "engaged",
    "messages",
    "rank_at_close",
)


class SchemaError(ValueError):
    """An input record is missing or mistypes a schema field."""


def validate_record(rec: dict, require_measurement_fields: bool = True) -> None:
    if require_measurement_fields:
        for f in REQUIRED_FIELDS:
            if f not in rec:
                raise SchemaError(f"record for job {rec.get('job_id', '?')} missing field '{f}'")
        if len(rec["criteria_custom"]) != 5:
            raise SchemaError("criteria_custom must have 5 entries")
        if len(rec["criteria_generic"]) != 4:
            raise SchemaError("criteria_generic must have 4 entries")
        for v in list(rec["criteria_custom"]) + list(rec["criteria_generic"]):
            if v not in (0, 1, 2):
                raise SchemaError(f"criteria scores must be ternary, got {v}")
    # group fields are always required
    for f in ("job_id", "worker_id", "bid", "country_group", "arrival_group", "reputation_group"):
        if f not in rec:
            raise SchemaError(f"record missing field '{f}'")


def record_group(rec: dict) -> ObservableGroup:
    return ObservableGroup.from_fields(
        rec["country_group"], rec["arrival_group"], rec["reputation_group"]
    )


def read_jsonl(path) -> list[dict]:
    records = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line:
                records.append(json.loads(line))
    return records


def write_jsonl(path, records) -> None:
    with open(path, "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


@dataclass
class ApplicationTable:
    """Columnar view of application records, grouped by job.

    Applications are sorted by (job order of first appearance, original
    order within job); ``job_index`` maps each row to a dense job id.
    """

    job_ids: list[str]                 # unique jobs, in first-appearance order
    job_index: np.ndarray              # (n,) int, row -> job
    worker_ids: np.ndarray             # (n,) object
    group_keys: list[str]              # unique group keys, sorted
    group_index: np.ndarray            # (n,) int, row -> group
    bid: np.ndarray                    # (n,) float
    signal: np.ndarray                 # (n,) float (nan if absent)
    effort: np.ndarray                 # (n,) float minutes (nan if absent/invalid)
    considered: np.ndarray             # (n,) bool
    won: np.ndarray                    # (n,) bool
    belief: np.ndarray                 # (n,) float (nan if absent)

    @property
    def n_jobs(self) -> int:
        return len(self.job_ids)

    @property
    def n_apps(self) -> int:
        return self.bid.shape[0]

    def rows_for_group(self, key: str) -> np.ndarray:
        g = self.group_keys.index(key)
        return np.flatnonzero(self.group_index == g)

    def job_winner_rows(self) -> np.ndarray:
        """Row index of the winning application per job, -1 if outside option."""
        win = np.full(self.n_jobs, -1, dtype=int)
        rows = np.flatnonzero(self.won)
        for r in rows:
            j = self.job_index[r]
            if win[j] != -1:
                raise ValueError(f"job {self.job_ids[j]} has multiple winners")
            win[j] = r
        return win

    @classmethod
    def from_records(cls, records: list[dict]) -> "ApplicationTable":
        job_ids: list[str] = []
        job_pos: dict[str, int] = {}
        group_set = set()
        for rec in records:
            validate_record(rec, require_measurement_fields=False)
            jid = str(rec["job_id"])
            if jid not in job_pos:
                job_pos[jid] = len(job_ids)
                job_ids.append(jid)
            group_set.add(record_group(rec).key)
        group_keys = sorted(group_set)
        gpos = {k: i for i, k in enumerate(group_keys)}

        n = len(records)
        job_index = np.empty(n, dtype=int)
        group_index = np.empty(n, dtype=int)
        worker_ids = np.empty(n, dtype=object)
        bid = np.empty(n)
        signal = np.full(n, np.nan)
        effort = np.full(n, np.nan)
        belief = np.full(n, np.nan)
        considered = np.zeros(n, dtype=bool)
        won = np.zeros(n, dtype=bool)
        for i, rec in enumerate(records):
            job_index[i] = job_pos[str(rec["job_id"])]
            group_index[i] = gpos[record_group(rec).key]
            worker_ids[i] = str(rec["worker_id"])
            bid[i] = float(rec["bid"])
            if rec.get("signal") is not None:
                signal[i] = float(rec["signal"])
            if rec.get("effort_minutes") is not None:
                effort[i] = float(rec["effort_minutes"])
            if rec.get("belief") is not None:
                belief[i] = float(rec["belief"])
            considered[i] = bool(rec.get("considered", False))
            won[i] = bool(rec.get("won", False))

        # stable sort by job so per-job segments are contiguous
        order = np.argsort(job_index, kind="stable")
        return cls(
            job_ids=job_ids,
            job_index=job_index[order],
            worker_ids=worker_ids[order],
            group_keys=group_keys,
            group_index=group_index[order],
            bid=bid[order],
            signal=signal[order],
            effort=effort[order],
            considered=considered[order],
            won=won[order],
            belief=belief[order],
        )
