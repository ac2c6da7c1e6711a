"""Deterministic synthetic EHR generator with planted risk signal and anomalies.

The generator writes a dataset loadable by the store (six CSV tables plus
schema.json). Complication labels are drawn from a logistic link over
standardized realized feature values, so a model trained downstream can
recover the planted effects. A fraction of patients receive an out-of-range
vital-sign segment whose exact interval is recorded in a ledger, giving the
influence engine ground truth.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, asdict
from datetime import datetime, timedelta, timezone
from pathlib import Path

import numpy as np

from . import store
from .features import (
    AggregationKind,
    WINDOW_IN_SURGERY,
    WINDOW_PRE_SURGERY_24H,
    aggregate,
)

TARGET_LABELS = ("L", "C", "A", "I", "O")
LABEL_COLUMNS = tuple(f"complication_{t}" for t in TARGET_LABELS)

_BASE_TIME = datetime(2024, 3, 1, 8, 0, 0, tzinfo=timezone.utc)

# item -> (mean, patient offset sd, walk step sd, clip lo, clip hi, unit)
VITAL_ITEMS = {
    "Pulse": (125.0, 4.0, 1.0, 40.0, 230.0, "bpm"),
    "OxygenSaturation": (97.0, 0.8, 0.25, 40.0, 100.0, "%"),
    "SystolicBP": (95.0, 4.0, 0.9, 40.0, 200.0, "mmHg"),
    "EtCO2": (38.0, 1.5, 0.45, 10.0, 80.0, "mmHg"),
}
# item -> (mean, patient offset sd, noise sd, unit)
LAB_ITEMS = {
    "Lactate": (1.8, 0.5, 0.25, "mmol/L"),
    "Glucose": (105.0, 12.0, 7.0, "mg/dL"),
    "ALT": (26.0, 7.0, 3.0, "U/L"),
    "COHb": (1.3, 0.3, 0.15, "%"),
    "RDW": (13.8, 1.0, 0.3, "%"),
}
CHART_ITEMS = {
    "Temperature": (36.9, 0.3, 0.15, "degC"),
    "UrineOutput": (32.0, 7.0, 4.0, "mL/h"),
}

# item -> anomaly step size (added with the drawn direction sign)
ANOMALY_DELTAS = {"Pulse": 42.0, "OxygenSaturation": 12.0, "SystolicBP": 30.0, "EtCO2": 14.0}


@dataclass(frozen=True)
class PlantedEffect:
    """One term of the label logit: a feature recipe and its weight."""

    entity: str
    name: str  # column (static) or item id (dynamic)
    weight: float
    aggregation: str | None = None
    window: str | None = None

    @property
    def key(self) -> str:
        if self.aggregation is None:
            return f"{self.entity}.{self.name}"
        return f"{self.entity}.{self.name}.{self.aggregation}.{self.window}"


def default_planted_effects() -> dict[str, list[PlantedEffect]]:
    mean, insurg = AggregationKind.MEAN.value, WINDOW_IN_SURGERY
    return {
        "L": [
            PlantedEffect("vitalsigns", "OxygenSaturation", -1.4, mean, insurg),
            PlantedEffect("labtests", "Lactate", 0.9, mean, insurg),
            PlantedEffect("surgeries", "surgery_minutes", 0.6),
        ],
        "C": [
            PlantedEffect("vitalsigns", "Pulse", 1.7, mean, insurg),
            PlantedEffect("surgeries", "cpb_minutes", 1.2),
            PlantedEffect("labtests", "Lactate", 1.0, mean, insurg),
            PlantedEffect("surgeries", "surgery_minutes", 0.8),
        ],
        "A": [
            PlantedEffect("vitalsigns", "Pulse", 1.2, AggregationKind.SD.value, insurg),
            PlantedEffect("vitalsigns", "SystolicBP", -1.0, mean, insurg),
        ],
        "I": [
            PlantedEffect("chartevents", "Temperature", 1.3, mean, insurg),
            PlantedEffect("labtests", "Glucose", 0.8, mean, insurg),
        ],
        "O": [
            PlantedEffect("patients", "age_months", -0.8),
            PlantedEffect("labtests", "RDW", 1.1, mean, WINDOW_PRE_SURGERY_24H),
        ],
    }


@dataclass
class SynthConfig:
    seed: int = 42
    n_patients: int = 100
    target_prevalence: dict = field(default_factory=lambda: {t: 0.25 for t in TARGET_LABELS})
    planted_effects: dict = field(default_factory=default_planted_effects)
    anomaly_rate: float = 0.1
    series_length_range: tuple[int, int] = (120, 240)
    label_noise: float = 0.5

    def validate(self):
        if self.n_patients < 0:
            raise ValueError("n_patients must be >= 0")
        if not 0.0 <= self.anomaly_rate <= 1.0:
            raise ValueError("anomaly_rate must be in [0, 1]")
        lo, hi = self.series_length_range
        if lo < 2 or hi < lo:
            raise ValueError("series_length_range must satisfy 2 <= min <= max")
        for label, p in self.target_prevalence.items():
            if label not in TARGET_LABELS:
                raise ValueError(f"unknown complication label {label!r}")
            if not 0.0 < p < 1.0:
                raise ValueError(f"prevalence for {label} must be in (0, 1)")

    @classmethod
    def from_json(cls, path: Path | str) -> "SynthConfig":
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
        cfg = cls()
        if "seed" in raw:
            cfg.seed = int(raw["seed"])
        if "n_patients" in raw:
            cfg.n_patients = int(raw["n_patients"])
        if "target_prevalence" in raw:
            tp = raw["target_prevalence"]
            if isinstance(tp, dict):
                cfg.target_prevalence = {**cfg.target_prevalence, **{k: float(v) for k, v in tp.items()}}
            else:
                cfg.target_prevalence = {t: float(tp) for t in TARGET_LABELS}
        if "anomaly_rate" in raw:
            cfg.anomaly_rate = float(raw["anomaly_rate"])
        if "series_length_range" in raw:
            lo, hi = raw["series_length_range"]
            cfg.series_length_range = (int(lo), int(hi))
        if "label_noise" in raw:
            cfg.label_noise = float(raw["label_noise"])
        if "planted_effects" in raw:
            cfg.planted_effects = {
                label: [PlantedEffect(**e) for e in effects]
                for label, effects in raw["planted_effects"].items()
            }
        return cfg


@dataclass
class PlantedAnomaly:
    patient_id: str
    item_id: str
    direction: str  # "up" | "down"
    start_index: int
    end_index: int
    start_ts: str
    end_ts: str
    delta: float


@dataclass
class GenerationReport:
    table_counts: dict
    realized_prevalence: dict
    any_complication_prevalence: float
    anomalies: list[PlantedAnomaly]

    def to_dict(self) -> dict:
        return {
            "table_counts": self.table_counts,
            "realized_prevalence": self.realized_prevalence,
            "any_complication_prevalence": self.any_complication_prevalence,
            "planted_anomalies": [asdict(a) for a in self.anomalies],
        }


def build_manifest() -> store.Manifest:
    C, F = store.ColumnSpec, store.ForeignKey

    def event_schema(name: str, prefix: str) -> store.TableSchema:
        return store.TableSchema(
            entity_name=name,
            primary_key="event_id",
            columns=(
                C("event_id", "identifier"),
                C("patient_id", "identifier"),
                C("item_id", "categorical"),
                C("ts", "timestamp"),
                C("value", "numeric"),
                C("unit", "text"),
            ),
            foreign_keys=(F("patient_id", "patients"),),
        )

    entities = {
        "patients": store.TableSchema(
            entity_name="patients",
            primary_key="patient_id",
            columns=(
                C("patient_id", "identifier"),
                C("gender", "categorical"),
                C("age_months", "numeric"),
                C("weight_kg", "numeric"),
                C("height_cm", "numeric"),
            ),
        ),
        "admissions": store.TableSchema(
            entity_name="admissions",
            primary_key="admission_id",
            columns=(
                C("admission_id", "identifier"),
                C("patient_id", "identifier"),
                C("admit_time", "timestamp"),
                C("discharge_time", "timestamp"),
                C("icu_type", "categorical"),
                C("diagnosis", "categorical"),
            ),
            foreign_keys=(F("patient_id", "patients"),),
        ),
        "surgeries": store.TableSchema(
            entity_name="surgeries",
            primary_key="surgery_id",
            columns=(
                C("surgery_id", "identifier"),
                C("admission_id", "identifier"),
                C("patient_id", "identifier"),
                C("surgery_type", "categorical"),
                C("start_time", "timestamp"),
                C("end_time", "timestamp"),
                C("surgery_minutes", "numeric"),
                C("cpb_minutes", "numeric"),
                *[C(col, "numeric") for col in LABEL_COLUMNS],
            ),
            foreign_keys=(F("admission_id", "admissions"), F("patient_id", "patients")),
        ),
        "labtests": event_schema("labtests", "L"),
        "chartevents": event_schema("chartevents", "C"),
        "vitalsigns": event_schema("vitalsigns", "V"),
    }
    return store.Manifest(
        entities=entities,
        target_entity="surgeries",
        label_columns=LABEL_COLUMNS,
        event_windows={
            "vitalsigns": (WINDOW_IN_SURGERY,),
            "labtests": (WINDOW_IN_SURGERY, WINDOW_PRE_SURGERY_24H),
            "chartevents": (WINDOW_IN_SURGERY, WINDOW_PRE_SURGERY_24H),
        },
    )


def _ts(dt: datetime) -> str:
    return store.format_timestamp(dt)


def _walk(rng, n, mean, offset_sd, step_sd, lo, hi):
    """Mean-reverting (AR(1)) walk around the item mean plus a patient offset."""
    from scipy.signal import lfilter

    center = mean + rng.normal(0.0, offset_sd)
    noise = rng.normal(0.0, step_sd, size=n)
    wiggle = lfilter([1.0], [1.0, -0.85], noise)
    return np.clip(center + wiggle, lo, hi)


def _sigmoid(z):
    return 1.0 / (1.0 + np.exp(-np.clip(z, -60, 60)))


def _calibrate_intercept(logits: np.ndarray, target: float) -> float:
    """Bisection on the intercept so mean(sigmoid(b + logits)) == target."""
    lo, hi = -30.0, 30.0
    for _ in range(80):
        mid = (lo + hi) / 2.0
        if float(_sigmoid(mid + logits).mean()) < target:
            lo = mid
        else:
            hi = mid
    return (lo + hi) / 2.0


def generate(config: SynthConfig, output_directory: Path | str) -> GenerationReport:
    """Generate the dataset; identical config yields byte-identical files."""
    config.validate()
    out = Path(output_directory)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ValueError(f"unwritable output directory {out}: {exc}") from exc

    rng = np.random.default_rng(config.seed)
    n = config.n_patients

    patients, admissions, surgeries = [], [], []
    events: dict[str, list[dict]] = {"labtests": [], "chartevents": [], "vitalsigns": []}
    counters = {"labtests": 0, "chartevents": 0, "vitalsigns": 0}
    anomalies: list[PlantedAnomaly] = []
    surgery_meta = []  # per patient: rows + realized dynamic aggregates

    for i in range(n):
        pid = f"P{i + 1:05d}"
        age_months = float(int(np.clip(np.exp(rng.normal(math.log(18.0), 1.0)), 1, 215)))
        gender = "F" if rng.random() < 0.5 else "M"
        weight = round(3.2 + 0.55 * age_months ** 0.75 + rng.normal(0, 0.8), 1)
        height = round(48.0 + 2.2 * age_months ** 0.62 + rng.normal(0, 2.0), 1)
        patients.append(
            {"patient_id": pid, "gender": gender, "age_months": age_months,
             "weight_kg": weight, "height_cm": height}
        )

        admit = _BASE_TIME + timedelta(days=i, minutes=int(rng.integers(0, 360)))
        surg_start = admit + timedelta(minutes=int(rng.integers(18 * 60, 30 * 60)))
        surgery_minutes = float(int(np.clip(rng.normal(180, 45), 60, 420)))
        surg_end = surg_start + timedelta(minutes=surgery_minutes)
        cpb_minutes = float(int(surgery_minutes * rng.uniform(0.35, 0.6)))
        discharge = surg_end + timedelta(hours=int(rng.integers(72, 240)))
        aid, sid = f"A{i + 1:05d}", f"S{i + 1:05d}"
        icu = ["CICU", "PICU", "NICU"][int(rng.choice(3, p=[0.7, 0.2, 0.1]))]
        diagnosis = ["VSD", "ASD", "TOF", "PDA", "CoA"][int(rng.choice(5, p=[0.35, 0.25, 0.18, 0.12, 0.1]))]
        surgery_type = ["repair", "shunt", "valvuloplasty"][int(rng.choice(3, p=[0.6, 0.25, 0.15]))]
        admissions.append(
            {"admission_id": aid, "patient_id": pid, "admit_time": _ts(admit),
             "discharge_time": _ts(discharge), "icu_type": icu, "diagnosis": diagnosis}
        )
        surgery_row = {
            "surgery_id": sid, "admission_id": aid, "patient_id": pid,
            "surgery_type": surgery_type, "start_time": _ts(surg_start), "end_time": _ts(surg_end),
            "surgery_minutes": surgery_minutes, "cpb_minutes": cpb_minutes,
        }

        realized: dict[str, float] = {
            "patients.age_months": age_months,
            "surgeries.surgery_minutes": surgery_minutes,
            "surgeries.cpb_minutes": cpb_minutes,
        }

        # vital signs: one in-surgery series per item, optional planted anomaly
        has_anomaly = rng.random() < config.anomaly_rate
        anomaly_item = None
        if has_anomaly:
            anomaly_item = list(VITAL_ITEMS)[int(rng.integers(0, len(VITAL_ITEMS)))]
        surg_seconds = (surg_end - surg_start).total_seconds()
        for item, (mean, offset_sd, step_sd, lo, hi, unit) in VITAL_ITEMS.items():
            n_points = int(rng.integers(config.series_length_range[0], config.series_length_range[1] + 1))
            dt = surg_seconds / (n_points + 1)
            times = [surg_start + timedelta(seconds=int((j + 1) * dt)) for j in range(n_points)]
            values = _walk(rng, n_points, mean, offset_sd, step_sd, lo, hi)
            if item == anomaly_item:
                direction = "down" if item == "OxygenSaturation" else ("up" if rng.random() < 0.5 else "down")
                # short relative to the series: the dynamic threshold assumes
                # exceptional values are a small fraction of the array
                seg_len = max(5, int(n_points * rng.uniform(0.05, 0.12)))
                seg_start = int(rng.integers(1, max(2, n_points - seg_len)))
                seg_end = min(n_points - 1, seg_start + seg_len - 1)
                delta = ANOMALY_DELTAS[item] * (1.0 if direction == "up" else -1.0)
                values[seg_start:seg_end + 1] = np.clip(values[seg_start:seg_end + 1] + delta, lo, hi)
                anomalies.append(
                    PlantedAnomaly(
                        patient_id=pid, item_id=item, direction=direction,
                        start_index=seg_start, end_index=seg_end,
                        start_ts=_ts(times[seg_start]), end_ts=_ts(times[seg_end]),
                        delta=delta,
                    )
                )
            hours = [(t - surg_start).total_seconds() / 3600.0 for t in times]
            rounded = [round(float(v), 2) for v in values]
            for t, v in zip(times, rounded):
                counters["vitalsigns"] += 1
                events["vitalsigns"].append(
                    {"event_id": f"V{counters['vitalsigns']:07d}", "patient_id": pid,
                     "item_id": item, "ts": _ts(t), "value": v, "unit": unit}
                )
            for agg in (AggregationKind.MEAN, AggregationKind.SD):
                key = f"vitalsigns.{item}.{agg.value}.{WINDOW_IN_SURGERY}"
                realized[key] = aggregate(agg, hours, rounded)

        # lab tests and chart events: sparse draws across the admission
        for entity, item_table in (("labtests", LAB_ITEMS), ("chartevents", CHART_ITEMS)):
            prefix = "L" if entity == "labtests" else "C"
            for item, (mean, offset_sd, noise_sd, unit) in item_table.items():
                center = mean + rng.normal(0.0, offset_sd)
                n_events = int(rng.integers(6, 15))
                recs = []
                for _ in range(n_events):
                    u = rng.random()
                    if u < 0.35:  # pre-surgery 24h
                        t = surg_start - timedelta(seconds=int(rng.uniform(60, 24 * 3600 - 60)))
                        t = max(t, admit + timedelta(seconds=60))
                    elif u < 0.80:  # in surgery
                        t = surg_start + timedelta(seconds=int(rng.uniform(60, max(120, surg_seconds - 60))))
                    else:  # post surgery
                        post = (discharge - surg_end).total_seconds()
                        t = surg_end + timedelta(seconds=int(rng.uniform(60, max(120, post - 60))))
                    value = round(float(center + rng.normal(0.0, noise_sd)), 2)
                    recs.append((t, value))
                recs.sort(key=lambda r: r[0])
                for t, v in recs:
                    counters[entity] += 1
                    events[entity].append(
                        {"event_id": f"{prefix}{counters[entity]:07d}", "patient_id": pid,
                         "item_id": item, "ts": _ts(t), "value": v, "unit": unit}
                    )
                in_surg = [(t, v) for t, v in recs if surg_start <= t < surg_end]
                pre = [(t, v) for t, v in recs if surg_start - timedelta(hours=24) <= t < surg_start]
                for window, rows in ((WINDOW_IN_SURGERY, in_surg), (WINDOW_PRE_SURGERY_24H, pre)):
                    key = f"{entity}.{item}.mean.{window}"
                    realized[key] = aggregate(AggregationKind.MEAN, [0.0] * len(rows), [v for _, v in rows])

        surgery_meta.append((surgery_row, realized))

    # labels: logistic link over standardized realized planted features
    realized_prevalence = {}
    if n > 0:
        effect_keys = sorted({e.key for effects in config.planted_effects.values() for e in effects})
        z_scores: dict[str, np.ndarray] = {}
        for key in effect_keys:
            col = np.array(
                [m[1].get(key) if m[1].get(key) is not None else np.nan for m in surgery_meta], dtype=float
            )
            mean = float(np.nanmean(col)) if np.isfinite(col).any() else 0.0
            col = np.where(np.isnan(col), mean, col)
            sd = float(col.std())
            z_scores[key] = (col - mean) / sd if sd > 0 else np.zeros(n)
        for label in TARGET_LABELS:
            effects = config.planted_effects.get(label, [])
            logits = np.zeros(n)
            for e in effects:
                logits += e.weight * z_scores[e.key]
            logits += config.label_noise * rng.standard_normal(n)
            b0 = _calibrate_intercept(logits, config.target_prevalence.get(label, 0.25))
            draws = rng.random(n)
            outcome = (draws < _sigmoid(b0 + logits)).astype(float)
            for (row, _), y in zip(surgery_meta, outcome):
                row[f"complication_{label}"] = y
            realized_prevalence[label] = float(outcome.mean())
        any_mask = np.zeros(n, dtype=bool)
        for label in TARGET_LABELS:
            any_mask |= np.array([m[0][f"complication_{label}"] for m in surgery_meta]) > 0
        any_prev = float(any_mask.mean())
    else:
        for label in TARGET_LABELS:
            realized_prevalence[label] = 0.0
        any_prev = 0.0

    surgeries = [row for row, _ in surgery_meta]
    for row in surgeries:
        for col in LABEL_COLUMNS:
            row.setdefault(col, 0.0)

    manifest = build_manifest()
    (out / "schema.json").write_text(store.manifest_to_json(manifest), encoding="utf-8")
    _write_csv(out / "patients.csv", manifest.entities["patients"], patients)
    _write_csv(out / "admissions.csv", manifest.entities["admissions"], admissions)
    _write_csv(out / "surgeries.csv", manifest.entities["surgeries"], surgeries)
    for entity in ("labtests", "chartevents", "vitalsigns"):
        _write_csv(out / f"{entity}.csv", manifest.entities[entity], events[entity])

    ledger_payload = [asdict(a) for a in anomalies]
    (out / "planted_anomalies.json").write_text(json.dumps(ledger_payload, indent=2) + "\n", encoding="utf-8")

    report = GenerationReport(
        table_counts={
            "patients": len(patients), "admissions": len(admissions), "surgeries": len(surgeries),
            "labtests": len(events["labtests"]), "chartevents": len(events["chartevents"]),
            "vitalsigns": len(events["vitalsigns"]),
        },
        realized_prevalence=realized_prevalence,
        any_complication_prevalence=any_prev,
        anomalies=anomalies,
    )
    return report


def _write_csv(path: Path, schema: store.TableSchema, rows: list[dict]):
    import csv as _csv

    cols = [c.name for c in schema.columns]
    kinds = {c.name: c.kind for c in schema.columns}
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = _csv.writer(fh, lineterminator="\n")
        writer.writerow(cols)
        for row in rows:
            out_row = []
            for c in cols:
                v = row.get(c)
                if v is None:
                    out_row.append("")
                elif kinds[c] == "numeric":
                    out_row.append(repr(float(v)))
                else:
                    out_row.append(str(v))
            writer.writerow(out_row)


def load_anomaly_ledger(directory: Path | str) -> list[PlantedAnomaly]:
    raw = json.loads((Path(directory) / "planted_anomalies.json").read_text(encoding="utf-8"))
    return [PlantedAnomaly(**entry) for entry in raw]
