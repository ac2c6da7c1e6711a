"""Hand-built datasets and record series for unit tests."""

from datetime import datetime, timedelta, timezone

from riskscope.features import AggregationKind, FeatureDescriptor, LineageQuery
from riskscope.store import Dataset, RecordEvent, RecordSeries, TimeWindow
from riskscope.synth import build_manifest

T0 = datetime(2024, 3, 1, 10, 0, 0, tzinfo=timezone.utc)  # surgery start
SURGERY_MINUTES = 240.0
ADMIT = T0 - timedelta(hours=22)
DISCHARGE = T0 + timedelta(days=4)


def make_series(values, minutes_apart=1.0, patient_id="P1", item_id="Pulse", start=T0):
    points = tuple(
        RecordEvent(patient_id, "vitalsigns", item_id,
                    start + timedelta(minutes=i * minutes_apart), float(v))
        for i, v in enumerate(values)
    )
    window = TimeWindow(start, start + timedelta(minutes=len(values) * minutes_apart))
    return RecordSeries(patient_id, item_id, points, window)


def make_descriptor(agg: AggregationKind, item="Pulse", window="in-surgery", entity="vitalsigns"):
    return FeatureDescriptor(
        feature_id=f"{entity}.{item}.{agg.value}.{window}",
        display_name=f"{item} {agg.value}",
        kind="dynamic",
        source_entity=entity,
        item_id=item,
        aggregation=agg,
        window=window,
        hierarchy_path=("in-surgery" if window == "in-surgery" else "pre-surgery", item, agg.value),
        lineage=LineageQuery(entity, item_id=item, window=window),
    )


def micro_dataset(event_rows=None, n_patients=2, label_positives=()):
    """A dataset with one admission+surgery per patient and custom events.

    event_rows: list of (entity, patient_id, item_id, minutes_from_surgery_start, value)
    """
    manifest = build_manifest()
    patients, admissions, surgeries = [], [], []
    for i in range(n_patients):
        pid = f"P{i + 1}"
        patients.append({
            "patient_id": pid, "gender": "F" if i % 2 == 0 else "M",
            "age_months": 10.0 + i, "weight_kg": 7.0 + i, "height_cm": 66.0 + i,
        })
        admissions.append({
            "admission_id": f"A{i + 1}", "patient_id": pid,
            "admit_time": ADMIT, "discharge_time": DISCHARGE,
            "icu_type": "CICU", "diagnosis": "VSD",
        })
        row = {
            "surgery_id": f"S{i + 1}", "admission_id": f"A{i + 1}", "patient_id": pid,
            "surgery_type": "repair", "start_time": T0,
            "end_time": T0 + timedelta(minutes=SURGERY_MINUTES),
            "surgery_minutes": SURGERY_MINUTES, "cpb_minutes": 90.0,
        }
        for t in "LCAIO":
            row[f"complication_{t}"] = 1.0 if (pid, t) in label_positives else 0.0
        surgeries.append(row)
    tables = {
        "patients": patients, "admissions": admissions, "surgeries": surgeries,
        "labtests": [], "chartevents": [], "vitalsigns": [],
    }
    for n, (entity, pid, item, minutes, value) in enumerate(event_rows or []):
        tables[entity].append({
            "event_id": f"E{n + 1}", "patient_id": pid, "item_id": item,
            "ts": T0 + timedelta(minutes=minutes), "value": float(value), "unit": "",
        })
    return Dataset(manifest, tables)
