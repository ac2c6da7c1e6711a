import json

import numpy as np
import pytest

from riskscope.store import parse_timestamp
from riskscope.synth import load_anomaly_ledger

import golden


@pytest.fixture(scope="session")
def state(service_state):
    return service_state


@pytest.fixture(scope="session")
def client(service_client):
    return service_client


@pytest.fixture(scope="session")
def cohort_id(client):
    return client.post("/api/cohort", json=golden.AGE_SELECTOR).json()["cohort_id"]


class TestPatients:
    def test_one_entry_per_patient_with_five_flags(self, client, state):
        body = client.get("/api/patients").json()
        assert len(body) == state.dataset.patient_count
        for entry in body:
            assert set(entry["predictions"]) == set("LCAIO")
            for target, flagged in entry["predictions"].items():
                assert flagged == (entry["risks"][target] >= 0.5)

    def test_meta(self, client, state):
        meta = client.get("/api/meta").json()
        assert meta["patient_count"] == state.dataset.patient_count
        assert meta["intervals"] == ["1h", "4h", "8h"]
        assert "Pulse" in meta["items"]["vitalsigns"]


class TestProfile:
    def test_known_patient(self, client, state, cohort_id):
        pid = state.dataset.patient_ids[0]
        body = client.get(f"/api/patient/{pid}/profile?cohort={cohort_id}").json()
        assert body["patient_id"] == pid
        assert "age_months" in body["patients"]
        assert set(body["labels"]) == set("LCAIO")
        surgery_time = body["surgeries"]["surgery_minutes"]
        assert "flag" in surgery_time and surgery_time["flag"] in ("below", "within", "above")

    def test_unknown_patient_404(self, client):
        resp = client.get("/api/patient/NOPE/profile")
        assert resp.status_code == 404
        assert resp.json()["code"] == "unknown_patient"


class TestCohort:
    def test_empty_selector_counts_everyone(self, client, state):
        body = client.post("/api/cohort", json={"predicates": []}).json()
        assert body["size"] == state.dataset.patient_count
        assert body["low_risk_size"] + body["high_risk_size"] == body["size"]

    def test_repeated_post_same_id(self, client):
        a = client.post("/api/cohort", json=golden.AGE_SELECTOR).json()
        b = client.post("/api/cohort", json=golden.AGE_SELECTOR).json()
        assert a == b

    def test_contradictory_selector_400(self, client):
        resp = client.post("/api/cohort", json={"predicates": [
            {"entity": "patients", "column": "age_months", "op": "range", "low": 9, "high": 1}
        ]})
        assert resp.status_code == 400
        assert resp.json()["code"] == "bad_selector"


class TestFeatures:
    def test_additivity_root_plus_base(self, client, state, cohort_id):
        pid = state.dataset.patient_ids[1]
        body = client.get(f"/api/patient/{pid}/features?target=C&cohort={cohort_id}").json()
        gap = abs(body["base_value"] + body["root"]["group_contribution"] - body["prediction"])
        assert gap < 1e-9  # sampled mode redistributes the residual

    def test_topk_limits_leaves(self, client, state, cohort_id):
        pid = state.dataset.patient_ids[0]
        body = client.get(
            f"/api/patient/{pid}/features?target=C&cohort={cohort_id}&topk=5"
        ).json()
        leaves = [
            leaf
            for phase in body["root"]["children"]
            for group in phase["children"]
            for leaf in group["children"]
        ]
        assert len(leaves) <= 5

    def test_leaf_payload_shape(self, client, state, cohort_id):
        pid = state.dataset.patient_ids[0]
        body = client.get(f"/api/patient/{pid}/features?target=C&cohort={cohort_id}").json()
        leaf = body["root"]["children"][0]["children"][0]["children"][0]
        for key in ("feature_id", "contribution", "value", "reference", "flag", "column_ids"):
            assert key in leaf

    def test_group_contribution_is_sum_of_children(self, client, state, cohort_id):
        pid = state.dataset.patient_ids[2]
        body = client.get(f"/api/patient/{pid}/features?target=C&cohort={cohort_id}").json()
        for phase in body["root"]["children"]:
            for group in phase["children"]:
                total = sum(leaf["contribution"] for leaf in group["children"])
                assert group["group_contribution"] == pytest.approx(total, abs=1e-9)

    def test_unknown_cohort_404(self, client, state):
        pid = state.dataset.patient_ids[0]
        resp = client.get(f"/api/patient/{pid}/features?target=C&cohort=deadbeef")
        assert resp.status_code == 404
        assert resp.json()["code"] == "unknown_cohort"

    def test_unknown_target_400(self, client, state, cohort_id):
        pid = state.dataset.patient_ids[0]
        resp = client.get(f"/api/patient/{pid}/features?target=X&cohort={cohort_id}")
        assert resp.status_code == 400

    def test_deterministic_responses(self, client, state, cohort_id):
        pid = state.dataset.patient_ids[0]
        url = f"/api/patient/{pid}/features?target=C&cohort={cohort_id}"
        assert client.get(url).json() == client.get(url).json()


class TestSeries:
    def test_plain_series_band_and_marks(self, client, state, cohort_id):
        pid = state.dataset.patient_ids[0]
        body = client.get(f"/api/patient/{pid}/series/Pulse?cohort={cohort_id}").json()
        assert body["segments"] is None and body["overlay"] is None
        assert body["reference"] is not None
        assert all(p["flag"] in ("below", "within", "above") for p in body["points"])
        stamps = [p["ts"] for p in body["points"]]
        assert stamps == sorted(stamps)

    def test_explain_returns_segments_overlapping_ledger(self, client, state, golden_dir, cohort_id):
        anomaly = load_anomaly_ledger(golden_dir)[0]
        fid = f"vitalsigns.{anomaly.item_id}.mean.in-surgery"
        body = client.get(
            f"/api/patient/{anomaly.patient_id}/series/{anomaly.item_id}"
            f"?cohort={cohort_id}&explain_feature={fid}"
        ).json()
        assert body["segments"] is not None
        a0 = parse_timestamp(anomaly.start_ts).timestamp()
        a1 = parse_timestamp(anomaly.end_ts).timestamp()
        overlap = 0.0
        for seg in body["segments"]["segments"]:
            s = parse_timestamp(seg["start_ts"]).timestamp()
            e = parse_timestamp(seg["end_ts"]).timestamp()
            overlap += max(0.0, min(a1, e) - max(a0, s))
        assert overlap > 0
        assert body["overlay"] is not None
        assert all(iv["multiplicity"] >= 1 for iv in body["overlay"]["intervals"])

    def test_unknown_item_404(self, client, state, cohort_id):
        pid = state.dataset.patient_ids[0]
        resp = client.get(f"/api/patient/{pid}/series/Nonsense?cohort={cohort_id}")
        assert resp.status_code == 404


class TestTimeline:
    def test_row_sums_match_event_totals(self, client, state, cohort_id):
        pid = state.dataset.patient_ids[0]
        body = client.get(f"/api/patient/{pid}/timeline?interval=4h&cohort={cohort_id}").json()
        for row in body["rows"]:
            total = sum(c["count"] for c in row["cells"])
            assert total == len(state.dataset.patient_events(row["source"], pid))

    def test_invalid_interval_400(self, client, state, cohort_id):
        pid = state.dataset.patient_ids[0]
        resp = client.get(f"/api/patient/{pid}/timeline?interval=2h&cohort={cohort_id}")
        assert resp.status_code == 400
        assert resp.json()["code"] == "bad_interval"

    def test_cohortless_400(self, client, state):
        pid = state.dataset.patient_ids[0]
        resp = client.get(f"/api/patient/{pid}/timeline?interval=4h")
        assert resp.status_code == 400
        assert resp.json()["code"] == "cohort_required"


class TestWhatIf:
    def test_abnormal_feature_returns_deltas(self, client, state, cohort_id):
        cohort = state.cohorts.by_id(cohort_id)
        pid, fid = golden.find_abnormal_feature(state, cohort)
        resp = client.post(f"/api/patient/{pid}/whatif",
                           json={"target": "C", "feature_id": fid, "cohort_id": cohort_id})
        assert resp.status_code == 200
        body = resp.json()
        assert body["clamped_value"] != body["original_value"]
        assert "prediction_delta" in body and "contribution_delta" in body
        assert body["modified"]["contributions"]

    def test_within_range_409(self, client, state, cohort_id):
        from riskscope.cohort import flag
        from riskscope.features import primary_surgery

        cohort = state.cohorts.by_id(cohort_id)
        pid = state.dataset.patient_ids[0]
        surgery = primary_surgery(state.dataset, pid)
        x = state.matrix.vector(surgery["surgery_id"])
        fid = None
        for candidate, desc in state.matrix.descriptors.items():
            cols = state.matrix.columns_for_descriptor(candidate)
            if desc.value_kind != "numeric" or len(cols) != 1:
                continue
            ref = state.feature_ref(cohort, cols[0])
            value = x[state.matrix.column_index(cols[0])]
            if not np.isnan(value) and ref.defined and flag(float(value), ref) == "within":
                fid = candidate
                break
        resp = client.post(f"/api/patient/{pid}/whatif",
                           json={"target": "C", "feature_id": fid, "cohort_id": cohort_id})
        assert resp.status_code == 409
        assert resp.json()["code"] == "not_abnormal"

    def test_categorical_feature_409(self, client, state, cohort_id):
        pid = state.dataset.patient_ids[0]
        resp = client.post(f"/api/patient/{pid}/whatif",
                           json={"target": "C", "feature_id": "patients.gender",
                                 "cohort_id": cohort_id})
        assert resp.status_code == 409
        assert resp.json()["code"] == "no_reference"

    def test_unknown_feature_404(self, client, state, cohort_id):
        pid = state.dataset.patient_ids[0]
        resp = client.post(f"/api/patient/{pid}/whatif",
                           json={"target": "C", "feature_id": "ghost.feature",
                                 "cohort_id": cohort_id})
        assert resp.status_code == 404


class TestGoldenFixtures:
    def test_endpoint_sweep_matches_committed_fixtures(self, client, state):
        fixture_dir = golden.FIXTURE_DIR
        if not fixture_dir.exists():
            pytest.fail("fixtures missing; run `python3 tests/golden.py` and commit the output")
        payloads = golden.run_sweep(client, state)
        problems = []
        for name, actual in payloads.items():
            expected = json.loads((fixture_dir / f"{name}.json").read_text())
            problems.extend(p for p in golden.compare_json(expected, actual, path=name))
        assert not problems, "\n".join(problems[:40])
