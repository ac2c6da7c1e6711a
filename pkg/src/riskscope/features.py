"""Feature synthesis over the relational store, with record-level lineage.

Every feature is a recipe: a source entity plus, for dynamic features, an
item, a symbolic time window, and an aggregation. The recipe resolves to the
exact record set that produced the value, so downstream explanations can walk
from any feature back to raw records.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from datetime import timedelta
from enum import Enum
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from sklearn.base import BaseEstimator

from .store import Dataset, DatasetError, RecordEvent, TimeWindow


class AggregationKind(str, Enum):
    MEAN = "mean"
    SD = "sd"
    MIN = "min"
    MAX = "max"
    COUNT = "count"
    TREND = "trend"


ALL_AGGREGATIONS = (
    AggregationKind.MEAN,
    AggregationKind.SD,
    AggregationKind.MIN,
    AggregationKind.MAX,
    AggregationKind.COUNT,
    AggregationKind.TREND,
)

# Core set named directly by the feature-view grouping; the rest are gated
# behind the synthesizer's `aggregations` parameter.
CORE_AGGREGATIONS = (AggregationKind.MEAN, AggregationKind.SD, AggregationKind.TREND)

WINDOW_IN_SURGERY = "in-surgery"
WINDOW_PRE_SURGERY_24H = "pre-surgery-24h"

PHASE_PRE = "pre-surgery"
PHASE_IN = "in-surgery"

_STATIC_GROUPS = {"patients": "demographics", "admissions": "admission", "surgeries": "surgery-info"}
_STATIC_PHASES = {"patients": PHASE_PRE, "admissions": PHASE_PRE, "surgeries": PHASE_IN}


def aggregate(kind: AggregationKind, times_hours: Sequence[float], values: Sequence[float]) -> Optional[float]:
    """Apply one aggregation to a record series; None marks an undefined value.

    TREND is the least-squares slope of value against hours since window
    start; SD uses the sample (n-1) estimator. COUNT is defined for empty
    input (0); the others are not.
    """
    n = len(values)
    if kind == AggregationKind.COUNT:
        return float(n)
    if n == 0:
        return None
    v = np.asarray(values, dtype=float)
    if kind == AggregationKind.MEAN:
        return float(v.mean())
    if kind == AggregationKind.MIN:
        return float(v.min())
    if kind == AggregationKind.MAX:
        return float(v.max())
    if kind == AggregationKind.SD:
        if n < 2:
            return None
        return float(v.std(ddof=1))
    if kind == AggregationKind.TREND:
        if n < 2:
            return None
        t = np.asarray(times_hours, dtype=float)
        tc = t - t.mean()
        denom = float(tc @ tc)
        if denom == 0.0:
            return None
        return float((tc @ (v - v.mean())) / denom)
    raise ValueError(f"unknown aggregation {kind!r}")


@dataclass(frozen=True)
class LineageQuery:
    """What records a feature reads: an event query or a single table cell."""

    entity: str
    item_id: Optional[str] = None
    window: Optional[str] = None
    column: Optional[str] = None


@dataclass(frozen=True)
class CellRef:
    entity: str
    row_id: str
    column: str


@dataclass(frozen=True)
class FeatureDescriptor:
    feature_id: str
    display_name: str
    kind: str  # "static" | "dynamic"
    source_entity: str
    hierarchy_path: tuple[str, str, str]
    lineage: LineageQuery
    item_id: Optional[str] = None
    aggregation: Optional[AggregationKind] = None
    window: Optional[str] = None
    value_kind: str = "numeric"  # statics may be "categorical"

    def __post_init__(self):
        if self.kind == "dynamic" and (self.aggregation is None or self.item_id is None):
            raise ValueError(f"{self.feature_id}: dynamic feature needs item and aggregation")

    def to_dict(self) -> dict:
        return {
            "feature_id": self.feature_id,
            "display_name": self.display_name,
            "kind": self.kind,
            "source_entity": self.source_entity,
            "item_id": self.item_id,
            "aggregation": self.aggregation.value if self.aggregation else None,
            "window": self.window,
            "hierarchy_path": list(self.hierarchy_path),
            "value_kind": self.value_kind,
            "lineage": {
                "entity": self.lineage.entity,
                "item_id": self.lineage.item_id,
                "window": self.lineage.window,
                "column": self.lineage.column,
            },
        }


def resolve_window(dataset: Dataset, surgery_row: dict, symbolic: str) -> TimeWindow:
    start = surgery_row["start_time"]
    if symbolic == WINDOW_IN_SURGERY:
        return TimeWindow(start, surgery_row["end_time"])
    if symbolic == WINDOW_PRE_SURGERY_24H:
        return TimeWindow(start - timedelta(hours=24), start)
    raise ValueError(f"unknown symbolic window {symbolic!r}")


def admission_window(dataset: Dataset, surgery_row: dict) -> TimeWindow:
    admission = dataset.row("admissions", surgery_row["admission_id"])
    return TimeWindow(admission["admit_time"], admission["discharge_time"])


def window_phase(symbolic: str) -> str:
    return PHASE_IN if symbolic == WINDOW_IN_SURGERY else PHASE_PRE


def surgeries_sorted(dataset: Dataset) -> list[dict]:
    target = dataset.manifest.target_entity
    pk = dataset.manifest.entities[target].primary_key
    return sorted(dataset.rows(target), key=lambda r: r[pk])


def primary_surgery(dataset: Dataset, patient_id: str) -> Optional[dict]:
    """The patient's earliest surgery; the instance all views are keyed on."""
    rows = [r for r in dataset.rows(dataset.manifest.target_entity) if r["patient_id"] == patient_id]
    if not rows:
        return None
    return min(rows, key=lambda r: (r["start_time"], r["surgery_id"]))


def synthesize_descriptors(
    dataset: Dataset,
    target_entity: str = "surgeries",
    aggregations: Sequence[AggregationKind] = ALL_AGGREGATIONS,
) -> list[FeatureDescriptor]:
    """Enumerate static and dynamic feature recipes for the target entity.

    Statics cover every numeric/categorical column on the target's relational
    path (skipping keys, labels, and timestamps); dynamics cover one recipe
    per (item, window, aggregation) for each event entity's declared windows.
    Ordering is deterministic.
    """
    manifest = dataset.manifest
    if target_entity not in manifest.entities:
        raise DatasetError(f"target entity {target_entity!r} absent from schema")
    descriptors: list[FeatureDescriptor] = []

    chain = _entity_chain(manifest, target_entity)
    skip = set(manifest.label_columns)
    for entity in chain:
        schema = manifest.entities[entity]
        fk_cols = {fk.column for fk in schema.foreign_keys}
        for col in schema.columns:
            if col.name == schema.primary_key or col.name in fk_cols or col.name in skip:
                continue
            if col.kind not in ("numeric", "categorical"):
                continue
            group = _STATIC_GROUPS.get(entity, entity)
            descriptors.append(
                FeatureDescriptor(
                    feature_id=f"{entity}.{col.name}",
                    display_name=col.name.replace("_", " "),
                    kind="static",
                    source_entity=entity,
                    hierarchy_path=(_STATIC_PHASES.get(entity, PHASE_PRE), group, col.name),
                    lineage=LineageQuery(entity=entity, column=col.name),
                    value_kind="numeric" if col.kind == "numeric" else "categorical",
                )
            )

    for entity in manifest.event_entities:
        windows = manifest.event_windows[entity]
        for item in dataset.item_ids(entity):
            for window in windows:
                for agg in aggregations:
                    descriptors.append(
                        FeatureDescriptor(
                            feature_id=f"{entity}.{item}.{agg.value}.{window}",
                            display_name=f"{item} {agg.value} ({window})",
                            kind="dynamic",
                            source_entity=entity,
                            item_id=item,
                            aggregation=agg,
                            window=window,
                            hierarchy_path=(window_phase(window), _item_group(item, window), agg.value),
                            lineage=LineageQuery(entity=entity, item_id=item, window=window),
                        )
                    )
    return descriptors


def _item_group(item: str, window: str) -> str:
    return item if window == WINDOW_IN_SURGERY else f"{item} ({window})"


def _entity_chain(manifest, target_entity: str) -> list[str]:
    chain, queue = [], [target_entity]
    while queue:
        entity = queue.pop(0)
        if entity in chain:
            continue
        chain.append(entity)
        for fk in manifest.entities[entity].foreign_keys:
            queue.append(fk.references)
    return chain


def _resolve_path_row(dataset: Dataset, surgery_row: dict, entity: str) -> Optional[dict]:
    if entity == "surgeries":
        return surgery_row
    if entity == "admissions":
        return dataset.row("admissions", surgery_row["admission_id"])
    if entity == "patients":
        return dataset.row("patients", surgery_row["patient_id"])
    raise DatasetError(f"no relational path to entity {entity!r}")


def compute_feature(descriptor: FeatureDescriptor, dataset: Dataset, surgery_id: str):
    """Evaluate one feature for one surgery; None marks a missing value."""
    surgery = dataset.row(dataset.manifest.target_entity, surgery_id)
    if surgery is None:
        raise DatasetError(f"unknown surgery id {surgery_id!r}")
    if descriptor.kind == "static":
        row = _resolve_path_row(dataset, surgery, descriptor.source_entity)
        return None if row is None else row.get(descriptor.lineage.column)
    window = resolve_window(dataset, surgery, descriptor.window)
    series = dataset.get_series(surgery["patient_id"], descriptor.item_id, window)
    return aggregate(descriptor.aggregation, series.hours_since_start(), series.values())


def resolve_lineage(descriptor: FeatureDescriptor, dataset: Dataset, surgery_id: str):
    """The exact records compute_feature reads, in time order.

    Dynamic features return RecordEvent lists; statics return the single
    table cell reference.
    """
    surgery = dataset.row(dataset.manifest.target_entity, surgery_id)
    if surgery is None:
        raise DatasetError(f"unknown surgery id {surgery_id!r}")
    if descriptor.kind == "static":
        row = _resolve_path_row(dataset, surgery, descriptor.source_entity)
        if row is None:
            return []
        pk = dataset.manifest.entities[descriptor.source_entity].primary_key
        return [CellRef(descriptor.source_entity, row[pk], descriptor.lineage.column)]
    window = resolve_window(dataset, surgery, descriptor.window)
    series = dataset.get_series(surgery["patient_id"], descriptor.item_id, window)
    return list(series.points)


@dataclass
class FeatureMatrix:
    """One row per surgery; columns are expanded feature ids.

    Categorical features are one-hot expanded; `column_descriptor_ids` maps
    each expanded column back to its display feature. Missing values are NaN
    in `values` with `missing` true.
    """

    column_ids: list[str]
    column_descriptor_ids: list[str]
    values: np.ndarray
    surgery_ids: list[str]
    patient_ids: list[str]
    descriptors: dict[str, FeatureDescriptor]

    def __post_init__(self):
        self._col_index = {c: i for i, c in enumerate(self.column_ids)}
        self._row_index = {s: i for i, s in enumerate(self.surgery_ids)}
        self._patient_row = {}
        for i, pid in enumerate(self.patient_ids):
            self._patient_row.setdefault(pid, i)

    @property
    def missing(self) -> np.ndarray:
        return np.isnan(self.values)

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def column_index(self, column_id: str) -> int:
        return self._col_index[column_id]

    def column(self, column_id: str) -> np.ndarray:
        return self.values[:, self._col_index[column_id]]

    def row_for_surgery(self, surgery_id: str) -> int:
        return self._row_index[surgery_id]

    def row_for_patient(self, patient_id: str) -> Optional[int]:
        return self._patient_row.get(patient_id)

    def vector(self, surgery_id: str) -> np.ndarray:
        return self.values[self._row_index[surgery_id]].copy()

    def columns_for_descriptor(self, feature_id: str) -> list[str]:
        return [c for c, d in zip(self.column_ids, self.column_descriptor_ids) if d == feature_id]


def build_matrix(dataset: Dataset, descriptors: Sequence[FeatureDescriptor]) -> FeatureMatrix:
    """Compute the full feature matrix (deterministic for a fixed dataset)."""
    if not descriptors:
        raise ValueError("descriptors must be nonempty")
    surgeries = surgeries_sorted(dataset)
    pk = dataset.manifest.entities[dataset.manifest.target_entity].primary_key
    surgery_ids = [r[pk] for r in surgeries]
    patient_ids = [r["patient_id"] for r in surgeries]

    raw: dict[str, list] = {}
    for desc in descriptors:
        raw[desc.feature_id] = [compute_feature(desc, dataset, sid) for sid in surgery_ids]

    column_ids: list[str] = []
    column_desc: list[str] = []
    columns: list[list[float]] = []
    for desc in descriptors:
        vals = raw[desc.feature_id]
        if desc.value_kind == "categorical":
            categories = sorted({v for v in vals if v is not None})
            for cat in categories:
                column_ids.append(f"{desc.feature_id}={cat}")
                column_desc.append(desc.feature_id)
                columns.append([np.nan if v is None else float(v == cat) for v in vals])
        else:
            column_ids.append(desc.feature_id)
            column_desc.append(desc.feature_id)
            columns.append([np.nan if v is None else float(v) for v in vals])

    values = np.array(columns, dtype=float).T if columns else np.zeros((len(surgery_ids), 0))
    if values.size == 0:
        values = values.reshape(len(surgery_ids), len(column_ids))
    return FeatureMatrix(
        column_ids=column_ids,
        column_descriptor_ids=column_desc,
        values=values,
        surgery_ids=surgery_ids,
        patient_ids=patient_ids,
        descriptors={d.feature_id: d for d in descriptors},
    )


def export_matrix(matrix: FeatureMatrix, csv_path: Path | str, sidecar_path: Path | str | None = None):
    """Write the matrix as CSV (header = column ids) plus a descriptor sidecar."""
    csv_path = Path(csv_path)
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["surgery_id", "patient_id", *matrix.column_ids])
        for i, sid in enumerate(matrix.surgery_ids):
            row = [sid, matrix.patient_ids[i]]
            for v in matrix.values[i]:
                row.append("" if math.isnan(v) else repr(float(v)))
            writer.writerow(row)
    if sidecar_path is not None:
        payload = {
            "columns": matrix.column_ids,
            "column_descriptor_ids": matrix.column_descriptor_ids,
            "descriptors": [matrix.descriptors[d].to_dict() for d in matrix.descriptors],
        }
        Path(sidecar_path).write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")


class FeatureSynthesizer(BaseEstimator):
    """Estimator-style wrapper: fit enumerates recipes, transform computes the matrix.

    `aggregations=None` means all six kinds; pass e.g. ("mean", "sd", "trend")
    to restrict to the core set.
    """

    def __init__(self, target_entity: str = "surgeries", aggregations=None):
        self.target_entity = target_entity
        self.aggregations = aggregations

    def _agg_kinds(self):
        if self.aggregations is None:
            return ALL_AGGREGATIONS
        return tuple(AggregationKind(a) for a in self.aggregations)

    def fit(self, dataset: Dataset, y=None):
        self.descriptors_ = synthesize_descriptors(dataset, self.target_entity, self._agg_kinds())
        return self

    def transform(self, dataset: Dataset) -> FeatureMatrix:
        if not hasattr(self, "descriptors_"):
            raise RuntimeError("FeatureSynthesizer is not fitted")
        return build_matrix(dataset, self.descriptors_)

    def fit_transform(self, dataset: Dataset, y=None) -> FeatureMatrix:
        return self.fit(dataset).transform(dataset)
