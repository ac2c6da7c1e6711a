"""Cohort selection, risk splitting, reference ranges, distributions, and
timeline summaries.

Reference ranges follow the clinician-facing convention used throughout the
views: mean +/- 1.96 * sample SD of the low-risk group. Note this is a
population tolerance band, not a standard-error interval of the mean; the
bound formula is kept deliberately.
"""

from __future__ import annotations

import hashlib
import json
import threading
from dataclasses import dataclass, field
from datetime import timedelta
from typing import Optional, Sequence

import numpy as np

from .features import FeatureMatrix, admission_window, primary_surgery
from .store import Dataset, TimeWindow

RISK_TARGETS = ("L", "C", "A", "I", "O")
TIMELINE_INTERVALS_HOURS = (1, 4, 8)


@dataclass(frozen=True)
class Predicate:
    entity: str
    column: str
    op: str  # "range" | "in"
    low: Optional[float] = None
    high: Optional[float] = None
    values: tuple = ()

    def __post_init__(self):
        if self.op not in ("range", "in"):
            raise ValueError(f"unknown predicate op {self.op!r}")
        if self.op == "range":
            if self.low is None and self.high is None:
                raise ValueError("range predicate needs low and/or high")
            if self.low is not None and self.high is not None and self.low > self.high:
                raise ValueError(f"contradictory range: low {self.low} > high {self.high}")

    def matches(self, value) -> bool:
        if value is None:
            return False
        if self.op == "range":
            if self.low is not None and value < self.low:
                return False
            if self.high is not None and value > self.high:
                return False
            return True
        return value in self.values

    def to_dict(self) -> dict:
        payload = {"entity": self.entity, "column": self.column, "op": self.op}
        if self.op == "range":
            payload["low"] = self.low
            payload["high"] = self.high
        else:
            payload["values"] = list(self.values)
        return payload


@dataclass(frozen=True)
class CohortSelector:
    """Conjunction of static-attribute predicates; empty selects everyone."""

    predicates: tuple[Predicate, ...] = ()

    @classmethod
    def from_dict(cls, payload: dict) -> "CohortSelector":
        preds = []
        for p in payload.get("predicates", []):
            preds.append(
                Predicate(
                    entity=p["entity"],
                    column=p["column"],
                    op=p["op"],
                    low=p.get("low"),
                    high=p.get("high"),
                    values=tuple(p.get("values", ())),
                )
            )
        return cls(predicates=tuple(preds))

    def canonical_json(self) -> str:
        return json.dumps([p.to_dict() for p in self.predicates], sort_keys=True, separators=(",", ":"))

    def cohort_id(self) -> str:
        return hashlib.sha1(self.canonical_json().encode("utf-8")).hexdigest()[:12]


@dataclass
class Cohort:
    cohort_id: str
    selector: CohortSelector
    patient_ids: tuple[str, ...]
    low_risk: tuple[str, ...]
    high_risk: tuple[str, ...]

    @property
    def size(self) -> int:
        return len(self.patient_ids)


def _patient_attribute_rows(dataset: Dataset, patient_id: str) -> dict[str, list[dict]]:
    rows = {"patients": [dataset.row("patients", patient_id)]}
    rows["admissions"] = [r for r in dataset.rows("admissions") if r["patient_id"] == patient_id]
    rows["surgeries"] = [r for r in dataset.rows("surgeries") if r["patient_id"] == patient_id]
    return rows


def select_cohort(dataset: Dataset, selector: CohortSelector) -> Cohort:
    """Deterministic cohort membership plus the low/high risk split.

    A patient matches a predicate on admissions/surgeries if any of their
    rows does; the overall selector is a conjunction.
    """
    for pred in selector.predicates:
        if pred.entity not in ("patients", "admissions", "surgeries"):
            raise ValueError(f"selector references unknown entity {pred.entity!r}")
        schema = dataset.manifest.entities[pred.entity]
        if all(c.name != pred.column for c in schema.columns):
            raise ValueError(f"selector references unknown attribute {pred.entity}.{pred.column}")

    members = []
    for pid in dataset.patient_ids:
        rows = _patient_attribute_rows(dataset, pid)
        ok = True
        for pred in selector.predicates:
            if not any(pred.matches(r.get(pred.column)) for r in rows[pred.entity] if r):
                ok = False
                break
        if ok:
            members.append(pid)
    low, high = split_risk(dataset, members)
    return Cohort(
        cohort_id=selector.cohort_id(),
        selector=selector,
        patient_ids=tuple(members),
        low_risk=low,
        high_risk=high,
    )


def split_risk(dataset: Dataset, patient_ids: Sequence[str]) -> tuple[tuple[str, ...], tuple[str, ...]]:
    """low = no positive complication label on any surgery; high = at least one."""
    label_cols = dataset.manifest.label_columns
    positives = set()
    for row in dataset.rows(dataset.manifest.target_entity):
        if any((row.get(c) or 0) > 0 for c in label_cols):
            positives.add(row["patient_id"])
    low = tuple(p for p in patient_ids if p not in positives)
    high = tuple(p for p in patient_ids if p in positives)
    return low, high


class CohortCache:
    """Concurrent-read cache keyed by the selector hash."""

    def __init__(self, dataset: Dataset):
        self._dataset = dataset
        self._lock = threading.Lock()
        self._cache: dict[str, Cohort] = {}

    def get(self, selector: CohortSelector) -> Cohort:
        key = selector.cohort_id()
        cohort = self._cache.get(key)
        if cohort is not None:
            return cohort
        cohort = select_cohort(self._dataset, selector)
        with self._lock:
            self._cache.setdefault(key, cohort)
        return self._cache[key]

    def by_id(self, cohort_id: str) -> Optional[Cohort]:
        return self._cache.get(cohort_id)


@dataclass(frozen=True)
class ReferenceRange:
    mean: float
    sd: float
    low: float
    high: float
    n: int

    @property
    def defined(self) -> bool:
        return self.n >= 2

    def to_dict(self) -> Optional[dict]:
        if not self.defined:
            return None
        return {"mean": self.mean, "sd": self.sd, "low": self.low, "high": self.high, "n": self.n}


UNDEFINED_RANGE = ReferenceRange(mean=float("nan"), sd=float("nan"), low=float("nan"), high=float("nan"), n=0)


def reference_from_values(values) -> ReferenceRange:
    v = np.asarray([x for x in np.asarray(values, dtype=float).ravel() if not np.isnan(x)])
    if v.size < 2:
        return ReferenceRange(float("nan"), float("nan"), float("nan"), float("nan"), int(v.size))
    mean = float(v.mean())
    sd = float(v.std(ddof=1))
    return ReferenceRange(mean=mean, sd=sd, low=mean - 1.96 * sd, high=mean + 1.96 * sd, n=int(v.size))


def feature_reference(matrix: FeatureMatrix, low_risk_patients: Sequence[str], column_id: str) -> ReferenceRange:
    """Reference range of one matrix column over the low-risk group's rows."""
    group = set(low_risk_patients)
    rows = [i for i, pid in enumerate(matrix.patient_ids) if pid in group]
    return reference_from_values(matrix.column(column_id)[rows])


def record_reference(dataset: Dataset, low_risk_patients: Sequence[str], item_id: str) -> ReferenceRange:
    """Reference range pooled over the low-risk group's raw events of one item."""
    pooled = []
    for pid in low_risk_patients:
        pooled.extend(e.value for e in dataset.item_events(pid, item_id))
    return reference_from_values(pooled)


def flag(value, reference: Optional[ReferenceRange]) -> str:
    """below / within / above a closed reference interval.

    Undefined ranges and missing values flag as 'within' (the caller marks
    that no reference exists).
    """
    if value is None or reference is None or not reference.defined:
        return "within"
    if value < reference.low:
        return "below"
    if value > reference.high:
        return "above"
    return "within"


@dataclass
class Distribution:
    kind: str  # "numeric" | "categorical"
    bin_edges: list[float] = field(default_factory=list)
    low_counts: list[int] = field(default_factory=list)
    high_counts: list[int] = field(default_factory=list)
    categories: list[str] = field(default_factory=list)
    patient_value: object = None

    def to_dict(self) -> dict:
        payload = {"kind": self.kind, "patient_value": self.patient_value,
                   "low_counts": self.low_counts, "high_counts": self.high_counts}
        if self.kind == "numeric":
            payload["bin_edges"] = self.bin_edges
        else:
            payload["categories"] = self.categories
        return payload


def distribution(low_values, high_values, kind: str, patient_value=None, bins: int = 20) -> Distribution:
    """Low/high group histograms on shared bins (numeric) or categories."""
    if kind == "categorical":
        lows = [v for v in low_values if v is not None]
        highs = [v for v in high_values if v is not None]
        categories = sorted(set(lows) | set(highs))
        return Distribution(
            kind="categorical",
            categories=categories,
            low_counts=[lows.count(c) for c in categories],
            high_counts=[highs.count(c) for c in categories],
            patient_value=patient_value,
        )
    lo = np.asarray([v for v in low_values if v is not None and not np.isnan(v)], dtype=float)
    hi = np.asarray([v for v in high_values if v is not None and not np.isnan(v)], dtype=float)
    combined = np.concatenate([lo, hi]) if lo.size + hi.size else np.array([0.0])
    vmin, vmax = float(combined.min()), float(combined.max())
    if vmin == vmax:
        vmin, vmax = vmin - 0.5, vmax + 0.5
    edges = np.linspace(vmin, vmax, bins + 1)
    return Distribution(
        kind="numeric",
        bin_edges=edges.tolist(),
        low_counts=np.histogram(lo, bins=edges)[0].tolist(),
        high_counts=np.histogram(hi, bins=edges)[0].tolist(),
        patient_value=patient_value,
    )


@dataclass
class TimelineCell:
    start: object
    end: object
    event_count: int
    abnormal_fraction: float

    def to_dict(self) -> dict:
        from .store import format_timestamp

        return {
            "start": format_timestamp(self.start),
            "end": format_timestamp(self.end),
            "count": self.event_count,
            "abnormal_fraction": self.abnormal_fraction,
        }


def timeline_summary(
    dataset: Dataset,
    patient_id: str,
    interval_hours: int,
    references: dict[str, ReferenceRange],
    sources: Sequence[str] = ("labtests", "vitalsigns", "chartevents"),
) -> dict[str, list[TimelineCell]]:
    """Per-source event counts and abnormal fractions over equal intervals
    tiling the admission window from its start.

    Events whose item lacks a reference range count as normal.
    """
    if interval_hours not in TIMELINE_INTERVALS_HOURS:
        raise ValueError(f"interval must be one of {TIMELINE_INTERVALS_HOURS} hours")
    surgery = primary_surgery(dataset, patient_id)
    if surgery is None:
        raise ValueError(f"patient {patient_id!r} has no surgery")
    window = admission_window(dataset, surgery)
    total_hours = window.hours
    n_cells = max(1, int(np.ceil(total_hours / interval_hours - 1e-9)))
    step = timedelta(hours=interval_hours)

    rows: dict[str, list[TimelineCell]] = {}
    for source in sources:
        events = dataset.patient_events(source, patient_id)
        counts = [0] * n_cells
        abnormal = [0] * n_cells
        for ev in events:
            offset = (ev.ts - window.start).total_seconds() / 3600.0
            cell = int(offset // interval_hours)
            if 0 <= cell < n_cells:
                counts[cell] += 1
                ref = references.get(ev.item_id)
                if flag(ev.value, ref) != "within":
                    abnormal[cell] += 1
        cells = []
        for c in range(n_cells):
            start = window.start + c * step
            cells.append(
                TimelineCell(
                    start=start,
                    end=start + step,
                    event_count=counts[c],
                    abnormal_fraction=(abnormal[c] / counts[c]) if counts[c] else 0.0,
                )
            )
        rows[source] = cells
    return rows
