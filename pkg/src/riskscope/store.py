"""Relational EHR-style store: schema manifest, CSV loading, and indexed record queries.

Tables are plain UTF-8 CSV files (one per entity) described by an explicit
``schema.json`` manifest. After loading, the dataset is immutable: all query
methods are read-only and safe for concurrent use.
"""

from __future__ import annotations

import bisect
import csv
import json
import math
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable, Optional

COLUMN_KINDS = ("identifier", "categorical", "numeric", "timestamp", "text")


class DatasetError(Exception):
    """Base class for schema/load/query failures."""


class SchemaError(DatasetError):
    pass


class LoadError(DatasetError):
    """Raised for unreadable or invalid rows; message carries file and line."""


class UnknownPatientError(DatasetError):
    pass


@dataclass(frozen=True)
class ColumnSpec:
    name: str
    kind: str

    def __post_init__(self):
        if self.kind not in COLUMN_KINDS:
            raise SchemaError(f"unknown column kind {self.kind!r} for column {self.name!r}")


@dataclass(frozen=True)
class ForeignKey:
    column: str
    references: str  # referenced entity name


@dataclass(frozen=True)
class TableSchema:
    entity_name: str
    columns: tuple[ColumnSpec, ...]
    primary_key: str
    foreign_keys: tuple[ForeignKey, ...] = ()

    def __post_init__(self):
        names = [c.name for c in self.columns]
        if len(set(names)) != len(names):
            raise SchemaError(f"{self.entity_name}: duplicate column names")
        by_name = {c.name: c for c in self.columns}
        pk = by_name.get(self.primary_key)
        if pk is None:
            raise SchemaError(f"{self.entity_name}: primary key {self.primary_key!r} not declared")
        if pk.kind != "identifier":
            raise SchemaError(f"{self.entity_name}: primary key {self.primary_key!r} must be an identifier column")
        for fk in self.foreign_keys:
            if fk.column not in by_name:
                raise SchemaError(f"{self.entity_name}: foreign key column {fk.column!r} not declared")

    def column(self, name: str) -> ColumnSpec:
        for c in self.columns:
            if c.name == name:
                return c
        raise SchemaError(f"{self.entity_name}: no column {name!r}")


@dataclass(frozen=True)
class Manifest:
    """Explicit description of every entity plus the roles tables play.

    ``event_windows`` maps each time-stamped event entity to the symbolic
    windows its items are aggregated over; ``label_columns`` are outcome
    columns on the target entity, never used as model features.
    """

    entities: dict[str, TableSchema]
    target_entity: str
    label_columns: tuple[str, ...]
    event_windows: dict[str, tuple[str, ...]]

    def __post_init__(self):
        for schema in self.entities.values():
            for fk in schema.foreign_keys:
                if fk.references not in self.entities:
                    raise SchemaError(
                        f"{schema.entity_name}: foreign key {fk.column!r} references "
                        f"undeclared entity {fk.references!r}"
                    )
        for name in self.event_windows:
            if name not in self.entities:
                raise SchemaError(f"event entity {name!r} not declared")
            schema = self.entities[name]
            cols = {c.name for c in schema.columns}
            for required in ("patient_id", "item_id", "ts", "value"):
                if required not in cols:
                    raise SchemaError(f"event entity {name!r} lacks required column {required!r}")

    @property
    def event_entities(self) -> tuple[str, ...]:
        return tuple(self.event_windows)


def parse_timestamp(text: str) -> datetime:
    """Parse an ISO-8601 timestamp to an aware UTC datetime (naive = UTC)."""
    raw = text.strip()
    if raw.endswith(("Z", "z")):
        raw = raw[:-1] + "+00:00"
    ts = datetime.fromisoformat(raw)
    if ts.tzinfo is None:
        ts = ts.replace(tzinfo=timezone.utc)
    return ts.astimezone(timezone.utc)


def format_timestamp(ts: datetime) -> str:
    ts = ts.astimezone(timezone.utc)
    if ts.microsecond:
        ts = ts.replace(microsecond=0)
    return ts.isoformat()


@dataclass(frozen=True)
class TimeWindow:
    """Half-open interval [start, end) over UTC timestamps."""

    start: datetime
    end: datetime

    def __post_init__(self):
        if self.end < self.start:
            raise ValueError("window end precedes start")

    def contains(self, ts: datetime) -> bool:
        return self.start <= ts < self.end

    @property
    def hours(self) -> float:
        return (self.end - self.start).total_seconds() / 3600.0


@dataclass(frozen=True)
class RecordEvent:
    patient_id: str
    entity: str
    item_id: str
    ts: datetime
    value: float
    unit: str = ""
    event_id: str = ""


@dataclass(frozen=True)
class RecordSeries:
    """Time-ascending events of one (patient, item) inside a window.

    Ties on the timestamp preserve input file order and are kept as distinct
    consecutive points.
    """

    patient_id: str
    item_id: str
    points: tuple[RecordEvent, ...]
    window: TimeWindow

    def __len__(self) -> int:
        return len(self.points)

    def timestamps(self) -> list[datetime]:
        return [p.ts for p in self.points]

    def values(self) -> list[float]:
        return [p.value for p in self.points]

    def hours_since_start(self) -> list[float]:
        t0 = self.window.start
        return [(p.ts - t0).total_seconds() / 3600.0 for p in self.points]


def _parse_cell(raw: str, kind: str, context: str):
    text = raw.strip()
    if text == "":
        return None
    if kind == "numeric":
        try:
            value = float(text)
        except ValueError:
            raise LoadError(f"{context}: non-numeric value {raw!r} in numeric column") from None
        if not math.isfinite(value):
            raise LoadError(f"{context}: non-finite value {raw!r} in numeric column")
        return value
    if kind == "timestamp":
        try:
            return parse_timestamp(text)
        except ValueError:
            raise LoadError(f"{context}: unparseable timestamp {raw!r}") from None
    return text


class Dataset:
    """Immutable, indexed view over the loaded tables."""

    def __init__(self, manifest: Manifest, tables: dict[str, list[dict]]):
        self.manifest = manifest
        self.tables = tables
        self._rows_by_pk: dict[str, dict[str, dict]] = {}
        for name, schema in manifest.entities.items():
            self._rows_by_pk[name] = {row[schema.primary_key]: row for row in tables[name]}
        self._build_event_indexes()

    def _build_event_indexes(self):
        self._series: dict[tuple[str, str], tuple[list[datetime], list[RecordEvent]]] = {}
        self._patient_events: dict[tuple[str, str], list[RecordEvent]] = {}
        self._item_entity: dict[str, str] = {}
        for entity in self.manifest.event_entities:
            schema = self.manifest.entities[entity]
            pk = schema.primary_key
            for row in self.tables[entity]:
                ev = RecordEvent(
                    patient_id=row["patient_id"],
                    entity=entity,
                    item_id=row["item_id"],
                    ts=row["ts"],
                    value=row["value"],
                    unit=row.get("unit") or "",
                    event_id=row[pk],
                )
                self._series.setdefault((ev.patient_id, ev.item_id), ([], []))
                self._patient_events.setdefault((entity, ev.patient_id), []).append(ev)
                self._item_entity.setdefault(ev.item_id, entity)
        for (entity, pid), events in self._patient_events.items():
            events.sort(key=lambda e: e.ts)  # stable: input order kept on ties
            for ev in events:
                ts_list, ev_list = self._series[(pid, ev.item_id)]
                ts_list.append(ev.ts)
                ev_list.append(ev)

    # -- basic table access ------------------------------------------------

    def rows(self, entity: str) -> list[dict]:
        return self.tables[entity]

    def row(self, entity: str, pk: str) -> Optional[dict]:
        return self._rows_by_pk[entity].get(pk)

    @property
    def patient_ids(self) -> list[str]:
        schema = self.manifest.entities["patients"]
        return sorted(r[schema.primary_key] for r in self.tables["patients"])

    @property
    def patient_count(self) -> int:
        return len(self.tables["patients"])

    def has_patient(self, patient_id: str) -> bool:
        return patient_id in self._rows_by_pk["patients"]

    def item_ids(self, entity: str) -> list[str]:
        return sorted({i for i, e in self._item_entity.items() if e == entity})

    def item_entity(self, item_id: str) -> Optional[str]:
        return self._item_entity.get(item_id)

    def patient_events(self, entity: str, patient_id: str) -> list[RecordEvent]:
        return self._patient_events.get((entity, patient_id), [])

    def event_count(self, patient_id: str, item_id: str) -> int:
        key = (patient_id, item_id)
        return len(self._series[key][0]) if key in self._series else 0

    def item_events(self, patient_id: str, item_id: str) -> list[RecordEvent]:
        """All events of (patient, item) in time order, regardless of window."""
        key = (patient_id, item_id)
        return list(self._series[key][1]) if key in self._series else []

    # -- record queries ------------------------------------------------------

    def get_series(self, patient_id: str, item_id: str, window: TimeWindow) -> RecordSeries:
        """All events of (patient, item) inside the window, time-ascending.

        O(log n + k) via binary search over the per-(patient, item) index.
        """
        if not self.has_patient(patient_id):
            raise UnknownPatientError(f"unknown patient id {patient_id!r}")
        key = (patient_id, item_id)
        if key not in self._series:
            return RecordSeries(patient_id, item_id, (), window)
        ts_list, ev_list = self._series[key]
        lo = bisect.bisect_left(ts_list, window.start)
        hi = bisect.bisect_left(ts_list, window.end)
        return RecordSeries(patient_id, item_id, tuple(ev_list[lo:hi]), window)


def load_manifest(path: Path) -> Manifest:
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise LoadError(f"missing schema manifest: {path}") from None
    except json.JSONDecodeError as exc:
        raise LoadError(f"invalid schema manifest {path}: {exc}") from None
    entities: dict[str, TableSchema] = {}
    for spec in raw.get("entities", []):
        schema = TableSchema(
            entity_name=spec["entity_name"],
            columns=tuple(ColumnSpec(c["name"], c["kind"]) for c in spec["columns"]),
            primary_key=spec["primary_key"],
            foreign_keys=tuple(ForeignKey(f["column"], f["references"]) for f in spec.get("foreign_keys", [])),
        )
        if schema.entity_name in entities:
            raise SchemaError(f"duplicate entity {schema.entity_name!r}")
        entities[schema.entity_name] = schema
    return Manifest(
        entities=entities,
        target_entity=raw.get("target_entity", "surgeries"),
        label_columns=tuple(raw.get("label_columns", [])),
        event_windows={k: tuple(v) for k, v in raw.get("event_windows", {}).items()},
    )


def load_dataset(directory: Path | str) -> Dataset:
    """Load and validate a dataset directory (CSV tables + schema.json).

    Directories without a schema.json are read against the canonical
    PIC-shaped manifest.
    """
    directory = Path(directory)
    if (directory / "schema.json").exists():
        manifest = load_manifest(directory / "schema.json")
    else:
        from .synth import build_manifest

        manifest = build_manifest()
    tables: dict[str, list[dict]] = {}
    for name, schema in manifest.entities.items():
        path = directory / f"{name}.csv"
        if not path.exists():
            raise LoadError(f"missing table: {name}")
        tables[name] = _load_table(path, schema)
    _check_foreign_keys(manifest, tables)
    return Dataset(manifest, tables)


def _load_table(path: Path, schema: TableSchema) -> list[dict]:
    rows: list[dict] = []
    seen_pk: set[str] = set()
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise LoadError(f"{path}: empty file (no header)") from None
        expected = [c.name for c in schema.columns]
        if header != expected:
            raise LoadError(f"{path}: header {header} does not match schema columns {expected}")
        kinds = [c.kind for c in schema.columns]
        is_event = {"item_id", "ts", "value"} <= set(expected)
        for lineno, raw in enumerate(reader, start=2):
            context = f"{path.name}:{lineno}"
            if len(raw) != len(expected):
                raise LoadError(f"{context}: expected {len(expected)} fields, got {len(raw)}")
            row = {}
            for name, kind, cell in zip(expected, kinds, raw):
                row[name] = _parse_cell(cell, kind, context)
            pk = row[schema.primary_key]
            if pk is None:
                raise LoadError(f"{context}: empty primary key")
            if pk in seen_pk:
                raise LoadError(f"{context}: duplicate primary key {pk!r}")
            seen_pk.add(pk)
            if is_event and (row["ts"] is None or row["value"] is None):
                raise LoadError(f"{context}: event row lacks timestamp or value")
            rows.append(row)
    return rows


def _check_foreign_keys(manifest: Manifest, tables: dict[str, list[dict]]):
    pk_sets = {
        name: {row[schema.primary_key] for row in tables[name]}
        for name, schema in manifest.entities.items()
    }
    for name, schema in manifest.entities.items():
        for fk in schema.foreign_keys:
            targets = pk_sets[fk.references]
            for i, row in enumerate(tables[name], start=2):
                value = row.get(fk.column)
                if value is None:
                    raise LoadError(f"{name}.csv:{i}: missing foreign key {fk.column}")
                if value not in targets:
                    raise LoadError(
                        f"{name}.csv:{i}: dangling foreign key {fk.column}={value!r} "
                        f"(no such {fk.references} row)"
                    )


def save_dataset(dataset: Dataset, directory: Path | str):
    """Write the dataset back out as CSVs + schema.json (round-trip support)."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    manifest = dataset.manifest
    (directory / "schema.json").write_text(manifest_to_json(manifest), encoding="utf-8")
    for name, schema in manifest.entities.items():
        with open(directory / f"{name}.csv", "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            cols = [c.name for c in schema.columns]
            kinds = {c.name: c.kind for c in schema.columns}
            writer.writerow(cols)
            for row in dataset.rows(name):
                writer.writerow([_format_cell(row[c], kinds[c]) for c in cols])


def _format_cell(value, kind: str) -> str:
    if value is None:
        return ""
    if kind == "timestamp":
        return format_timestamp(value)
    if kind == "numeric":
        return repr(value)
    return str(value)


def manifest_to_json(manifest: Manifest) -> str:
    payload = {
        "target_entity": manifest.target_entity,
        "label_columns": list(manifest.label_columns),
        "event_windows": {k: list(v) for k, v in manifest.event_windows.items()},
        "entities": [
            {
                "entity_name": s.entity_name,
                "primary_key": s.primary_key,
                "columns": [{"name": c.name, "kind": c.kind} for c in s.columns],
                "foreign_keys": [{"column": f.column, "references": f.references} for f in s.foreign_keys],
            }
            for s in manifest.entities.values()
        ],
    }
    return json.dumps(payload, indent=2) + "\n"
