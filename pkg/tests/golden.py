"""Golden-fixture sweep shared by the regeneration entrypoint and the tests.

Run `python3 tests/golden.py` to (re)write tests/fixtures/api/*.json from the
deterministic seed-42 dataset; the service tests then compare live responses
against the committed files.
"""

import json
import math
import sys
import tempfile
from pathlib import Path

import numpy as np

FIXTURE_DIR = Path(__file__).parent / "fixtures" / "api"
GOLDEN_CONFIG = dict(seed=42, n_patients=48, series_length_range=(60, 100), anomaly_rate=0.15)
AGE_SELECTOR = {
    "predicates": [
        {"entity": "patients", "column": "age_months", "op": "range", "low": 1, "high": 60}
    ]
}


def build_state(data_dir):
    from riskscope.service import AppState, ServiceConfig

    return AppState.build(ServiceConfig(data_dir=str(data_dir)), train_missing=True)


def generate_golden_dataset(directory):
    from riskscope.synth import SynthConfig, generate

    generate(SynthConfig(**GOLDEN_CONFIG), directory)


def find_abnormal_feature(state, cohort):
    """First (patient, descriptor) with a defined range and out-of-range value."""
    from riskscope.cohort import flag
    from riskscope.features import primary_surgery

    for pid in state.dataset.patient_ids:
        surgery = primary_surgery(state.dataset, pid)
        x = state.matrix.vector(surgery["surgery_id"])
        for fid, desc in state.matrix.descriptors.items():
            if desc.value_kind != "numeric":
                continue
            columns = state.matrix.columns_for_descriptor(fid)
            if len(columns) != 1:
                continue
            ref = state.feature_ref(cohort, columns[0])
            value = x[state.matrix.column_index(columns[0])]
            if not np.isnan(value) and ref.defined and flag(float(value), ref) != "within":
                return pid, fid
    raise RuntimeError("no abnormal feature found on the golden dataset")


def run_sweep(client, state) -> dict[str, object]:
    from riskscope.synth import load_anomaly_ledger

    patient = state.dataset.patient_ids[0]
    cohort_resp = client.post("/api/cohort", json=AGE_SELECTOR).json()
    cid = cohort_resp["cohort_id"]
    cohort = state.cohorts.by_id(cid)
    ledger = load_anomaly_ledger(state.config.data_dir)
    anomaly = ledger[0]
    whatif_pid, whatif_fid = find_abnormal_feature(state, cohort)

    sweep = {
        "meta": client.get("/api/meta"),
        "patients": client.get("/api/patients"),
        "cohort": client.post("/api/cohort", json=AGE_SELECTOR),
        "profile": client.get(f"/api/patient/{patient}/profile?cohort={cid}"),
        "features": client.get(
            f"/api/patient/{patient}/features?target=C&cohort={cid}&topk=10"
        ),
        "distribution_numeric": client.get(
            f"/api/patient/{patient}/distribution?feature_id=patients.age_months&cohort={cid}"
        ),
        "distribution_categorical": client.get(
            f"/api/patient/{patient}/distribution?feature_id=admissions.diagnosis&cohort={cid}"
        ),
        "series_plain": client.get(f"/api/patient/{patient}/series/Lactate?cohort={cid}"),
        "series_explain": client.get(
            f"/api/patient/{anomaly.patient_id}/series/{anomaly.item_id}?cohort={cid}"
            f"&explain_feature=vitalsigns.{anomaly.item_id}.mean.in-surgery"
        ),
        "timeline": client.get(f"/api/patient/{patient}/timeline?interval=4h&cohort={cid}"),
        "whatif": client.post(
            f"/api/patient/{whatif_pid}/whatif",
            json={"target": "C", "feature_id": whatif_fid, "cohort_id": cid},
        ),
    }
    payloads = {}
    for name, response in sweep.items():
        assert response.status_code == 200, (name, response.status_code, response.text)
        payloads[name] = response.json()
    return payloads


def compare_json(expected, actual, path="$"):
    """Structural equality with 1e-9 tolerance on floats; returns mismatches."""
    problems = []
    if isinstance(expected, float) or isinstance(actual, float):
        if expected is None or actual is None:
            if expected != actual:
                problems.append(f"{path}: {expected!r} != {actual!r}")
        elif not math.isclose(float(expected), float(actual), rel_tol=1e-9, abs_tol=1e-9):
            problems.append(f"{path}: {expected!r} !~ {actual!r}")
    elif isinstance(expected, dict) and isinstance(actual, dict):
        if set(expected) != set(actual):
            problems.append(f"{path}: key sets differ {sorted(expected)} vs {sorted(actual)}")
        else:
            for key in expected:
                problems.extend(compare_json(expected[key], actual[key], f"{path}.{key}"))
    elif isinstance(expected, list) and isinstance(actual, list):
        if len(expected) != len(actual):
            problems.append(f"{path}: length {len(expected)} != {len(actual)}")
        else:
            for i, (e, a) in enumerate(zip(expected, actual)):
                problems.extend(compare_json(e, a, f"{path}[{i}]"))
    elif expected != actual:
        problems.append(f"{path}: {expected!r} != {actual!r}")
    return problems


def main():
    from fastapi.testclient import TestClient

    from riskscope.service import create_app

    with tempfile.TemporaryDirectory() as tmp:
        generate_golden_dataset(tmp)
        state = build_state(tmp)
        client = TestClient(create_app(state))
        payloads = run_sweep(client, state)
    FIXTURE_DIR.mkdir(parents=True, exist_ok=True)
    for name, payload in payloads.items():
        out = FIXTURE_DIR / f"{name}.json"
        out.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        print(f"wrote {out}")


if __name__ == "__main__":
    sys.exit(main())
