"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line.

Run with `pytest tests/test_acceptance.py -s` to see the per-criterion lines.
The whole suite is pure backend: no UI build is involved.
"""

import json
import time

import numpy as np
import pytest

from riskscope.cohort import CohortSelector, feature_reference, flag, reference_from_values, select_cohort
from riskscope.features import AggregationKind, FeatureSynthesizer, compute_feature, primary_surgery, resolve_lineage, resolve_window, surgeries_sorted
from riskscope.influence import DEFAULT_Z_GRID, dynamic_threshold, influential_segments, occlusion_influence
from riskscope.predictor import LogisticRiskModel, auc_score, cross_validate, logistic_loss_and_gradient
from riskscope.shapley import shap_exact, shap_sampled
from riskscope.store import Dataset, load_dataset, parse_timestamp
from riskscope.synth import SynthConfig, generate, load_anomaly_ledger
from riskscope.whatif import NotAbnormalError, whatif

import golden
from conftest import random_linear_model
from test_influence import reference_occlusion, reference_threshold
from test_predictor import brute_force_auc
from test_shapley import brute_force_permutations
from util import make_descriptor, make_series


def report(name: str, ok: bool, detail: str = ""):
    line = f"{'PASS' if ok else 'FAIL'}: {name}"
    if detail:
        line += f"  [{detail}]"
    print(line)
    assert ok, line


def _restricted_models(planted_dataset, planted_matrix, m=14):
    """Five targets trained on the first m single-column numeric features."""
    columns = []
    for fid, desc in planted_matrix.descriptors.items():
        cols = planted_matrix.columns_for_descriptor(fid)
        if desc.value_kind == "numeric" and len(cols) == 1:
            columns.append(cols[0])
        if len(columns) == m:
            break
    idx = [planted_matrix.column_index(c) for c in columns]
    X = planted_matrix.values[:, idx]
    rows = surgeries_sorted(planted_dataset)
    models = {}
    for target in "LCAIO":
        y = np.array([r[f"complication_{target}"] for r in rows])
        models[target] = LogisticRiskModel().fit(X, y, feature_ids=columns, target_label=target)
    return X, columns, models


def test_shapley_efficiency(planted_dataset, planted_matrix):
    """Exact gap < 1e-6 and sampled gap < 1e-9 on 100 patients x 5 targets in < 30 s."""
    X, columns, models = _restricted_models(planted_dataset, planted_matrix)
    rng = np.random.default_rng(0)
    patients = rng.choice(X.shape[0], size=100, replace=False)
    background = X[np.linspace(0, X.shape[0] - 1, 64).astype(int)]
    start = time.perf_counter()
    worst_exact, worst_sampled = 0.0, 0.0
    for row in patients:
        for target, model in models.items():
            exact = shap_exact(model, X[row], background, exact_limit=14)
            worst_exact = max(worst_exact, exact.additivity_gap())
            sampled = shap_sampled(model, X[row], background, n_samples=30, seed=1)
            worst_sampled = max(worst_sampled, sampled.additivity_gap())
    elapsed = time.perf_counter() - start
    ok = worst_exact < 1e-6 and worst_sampled < 1e-9 and elapsed < 30.0
    report("Shapley efficiency (exact<1e-6, sampled<1e-9, <30s)", ok,
           f"exact {worst_exact:.2e}, sampled {worst_sampled:.2e}, {elapsed:.1f}s")


def test_shapley_oracles():
    """Enumeration vs permutation brute force (1e-10); logit closed form (1e-8)."""
    rng = np.random.default_rng(1)
    worst_perm = 0.0
    for m in (2, 3, 4, 5, 6):
        model = random_linear_model(rng, m)
        x = rng.normal(0, 1.5, m)
        background = rng.normal(0, 1, (6, m))
        mine = np.array(list(shap_exact(model, x, background).contributions.values()))
        oracle = brute_force_permutations(model, x, background)
        worst_perm = max(worst_perm, float(np.max(np.abs(mine - oracle))))
    worst_closed = 0.0
    for _ in range(20):
        m = int(rng.integers(2, 10))
        model = random_linear_model(rng, m)
        x = rng.normal(0, 1, m)
        background = rng.normal(0, 1, (8, m))
        mine = np.array(list(shap_exact(model, x, background, output="logit").contributions.values()))
        closed = (model.coef_ / model.feature_scales_) * (x - background.mean(axis=0))
        worst_closed = max(worst_closed, float(np.max(np.abs(mine - closed))))
    ok = worst_perm < 1e-10 and worst_closed < 1e-8
    report("Shapley oracle (perm brute force 1e-10; logit closed form 1e-8)", ok,
           f"perm {worst_perm:.2e}, closed {worst_closed:.2e}")


def test_influence_zero_identity():
    """Affine series of lengths 10..500: max |v| < 1e-9 for MEAN/TREND/MIN/MAX."""
    rng = np.random.default_rng(2)
    worst = 0.0
    for length in (10, 25, 60, 120, 250, 500):
        a, b = float(rng.normal(10, 5)), float(rng.normal(0, 2))
        series = make_series([a + b * i for i in range(length)])
        for agg in (AggregationKind.MEAN, AggregationKind.TREND,
                    AggregationKind.MIN, AggregationKind.MAX):
            k = int(rng.integers(1, min(length, 12) + 1))
            v = occlusion_influence(series, make_descriptor(agg), k).values
            worst = max(worst, float(np.max(np.abs(v))))
    report("Influence zero-identity on affine series (<1e-9)", worst < 1e-9, f"max {worst:.2e}")


def test_influence_per_window_oracle():
    """1,000 random (series, feature, k) triples match naive recomputation to 1e-9."""
    rng = np.random.default_rng(3)
    aggs = (AggregationKind.MEAN, AggregationKind.SD, AggregationKind.MIN,
            AggregationKind.MAX, AggregationKind.TREND)
    worst = 0.0
    for _ in range(1000):
        T = int(rng.integers(4, 50))
        series = make_series(rng.normal(60, 15, T), minutes_apart=float(rng.uniform(0.5, 4)))
        agg = aggs[int(rng.integers(len(aggs)))]
        k = int(rng.integers(1, T + 1))
        mine = occlusion_influence(series, make_descriptor(agg), k).values
        oracle = reference_occlusion(series, agg, k)
        worst = max(worst, float(np.max(np.abs(mine - oracle))))
    report("Per-window influence oracle on 1,000 random triples (<1e-9)", worst < 1e-9,
           f"max {worst:.2e}")


def test_threshold_oracle():
    """dynamic_threshold equals the exhaustive scorer on 1,000 random arrays."""
    rng = np.random.default_rng(4)
    mismatches = 0
    exercised = 0
    for trial in range(1000):
        n = int(rng.integers(3, 150))
        style = trial % 3
        if style == 0:
            v = rng.normal(0, 1, n)
        elif style == 1:
            v = rng.exponential(1.0, n)
            v[int(rng.integers(n))] += float(rng.uniform(3, 40))
        else:
            v = np.round(rng.normal(0, 1, n), 1)
        mine = dynamic_threshold(v, DEFAULT_Z_GRID)
        oracle = reference_threshold(v, DEFAULT_Z_GRID)
        if (mine is None) != (oracle is None):
            mismatches += 1
        elif mine is not None:
            exercised += 1
            if mine[0] != oracle[0] or mine[1] != oracle[1]:
                mismatches += 1
    ok = mismatches == 0 and exercised > 100
    report("Dynamic-threshold brute-force agreement on 1,000 arrays", ok,
           f"{mismatches} mismatches, {exercised} non-degenerate")


@pytest.fixture(scope="module")
def anomaly_data(tmp_path_factory):
    directory = tmp_path_factory.mktemp("anomaly_data")
    generate(SynthConfig(seed=20, n_patients=170, anomaly_rate=0.35), directory)
    dataset = load_dataset(directory)
    matrix = FeatureSynthesizer().fit_transform(dataset)
    return directory, dataset, matrix


def test_planted_anomaly_recovery(anomaly_data):
    """>= 90% of 50 ledgered anomalies recovered at interval Jaccard >= 0.5, < 10 s."""
    directory, dataset, matrix = anomaly_data
    cohort = select_cohort(dataset, CohortSelector())
    ledger = load_anomaly_ledger(directory)
    assert len(ledger) >= 50
    start = time.perf_counter()
    hits = 0
    jaccards = []
    for anomaly in ledger[:50]:
        surgery = primary_surgery(dataset, anomaly.patient_id)
        fid = f"vitalsigns.{anomaly.item_id}.mean.in-surgery"
        descriptor = matrix.descriptors[fid]
        series = dataset.get_series(
            anomaly.patient_id, anomaly.item_id, resolve_window(dataset, surgery, "in-surgery")
        )
        value = compute_feature(descriptor, dataset, surgery["surgery_id"])
        reference = feature_reference(matrix, cohort.low_risk, fid)
        segments = influential_segments(series, descriptor, value, reference)
        a0 = parse_timestamp(anomaly.start_ts).timestamp()
        a1 = parse_timestamp(anomaly.end_ts).timestamp()
        intersection = 0.0
        total = a1 - a0
        for seg in segments.segments:
            s, e = seg.start_ts.timestamp(), seg.end_ts.timestamp()
            intersection += max(0.0, min(a1, e) - max(a0, s))
            total += e - s
        union = total - intersection
        j = intersection / union if union > 0 else 0.0
        jaccards.append(j)
        hits += j >= 0.5
    elapsed = time.perf_counter() - start
    ok = hits >= 45 and elapsed < 10.0
    report("Planted-anomaly recovery (Jaccard>=0.5 in >=90% of 50, <10s)", ok,
           f"{hits}/50 recovered, mean J {np.mean(jaccards):.2f}, {elapsed:.1f}s")


def test_reference_range_exactness():
    """Statistics-oracle agreement to 1e-12; the {0,2} example to 1e-4."""
    import statistics

    rng = np.random.default_rng(5)
    worst = 0.0
    for _ in range(300):
        values = rng.normal(50, 20, int(rng.integers(2, 60))).tolist()
        ref = reference_from_values(values)
        mean = statistics.fmean(values)
        sd = statistics.stdev(values)
        worst = max(worst, abs(ref.mean - mean), abs(ref.sd - sd),
                    abs(ref.low - (mean - 1.96 * sd)), abs(ref.high - (mean + 1.96 * sd)))
    example = reference_from_values([0.0, 2.0])
    example_ok = abs(example.low + 1.7718) < 1e-4 and abs(example.high - 3.7718) < 1e-4
    ok = worst < 1e-12 and example_ok
    report("Reference-range exactness (oracle 1e-12; {0,2} example 1e-4)", ok,
           f"max dev {worst:.2e}, example [{example.low:.4f}, {example.high:.4f}]")


def test_predictor_gate(planted_dataset, planted_matrix):
    """Gradient vs FD (1e-6 rel); AUC equals all-pairs oracle; CV AUC >= 0.85 in < 60 s."""
    rng = np.random.default_rng(6)
    grad_ok = True
    for _ in range(5):
        n, m = 25, 4
        X = rng.normal(0, 1, (n, m))
        y = rng.integers(0, 2, n).astype(float)
        if len(np.unique(y)) < 2:
            continue
        w, b = rng.normal(0, 1, m), float(rng.normal())
        _, grad_w, grad_b = logistic_loss_and_gradient(w, b, X, y, 0.03)
        eps = 1e-6
        for j in range(m):
            wp, wm = w.copy(), w.copy()
            wp[j] += eps
            wm[j] -= eps
            lp, *_ = logistic_loss_and_gradient(wp, b, X, y, 0.03)
            lm, *_ = logistic_loss_and_gradient(wm, b, X, y, 0.03)
            fd = (lp - lm) / (2 * eps)
            if abs(grad_w[j] - fd) > 1e-6 * max(1.0, abs(fd)):
                grad_ok = False

    auc_ok = True
    for trial in range(25):
        n = int(rng.integers(5, 200))
        y = rng.integers(0, 2, n).astype(float)
        if len(np.unique(y)) < 2:
            continue
        scores = rng.integers(0, 6, n) / 5.0 if trial % 2 else rng.normal(0, 1, n)
        if auc_score(y, scores) != brute_force_auc(y, scores):
            auc_ok = False

    rows = surgeries_sorted(planted_dataset)
    y = np.array([r["complication_C"] for r in rows])
    start = time.perf_counter()
    cv = cross_validate(planted_matrix.values, y, n_folds=10, seed=0)
    elapsed = time.perf_counter() - start
    ok = grad_ok and auc_ok and cv.mean_auc >= 0.85 and elapsed < 60.0
    report("Predictor (gradient 1e-6; AUC oracle exact; 10-fold CV AUC >= 0.85, <60s)", ok,
           f"cv {cv.mean_auc:.4f}, {elapsed:.1f}s")


def test_synthetic_fidelity(tmp_path):
    """Default prevalences realized to ±0.03 at n=2,000; byte-identical regen."""
    report_big = generate(SynthConfig(seed=7, n_patients=2000), tmp_path / "big")
    prev_c = report_big.realized_prevalence["C"]
    prev_ok = all(abs(p - 0.25) <= 0.03 for p in report_big.realized_prevalence.values())

    import hashlib

    def tree_hash(d):
        h = hashlib.sha256()
        from pathlib import Path

        for p in sorted(Path(d).rglob("*")):
            if p.is_file():
                h.update(p.name.encode())
                h.update(p.read_bytes())
        return h.hexdigest()

    cfg = dict(seed=13, n_patients=10, series_length_range=(20, 30))
    generate(SynthConfig(**cfg), tmp_path / "r1")
    generate(SynthConfig(**cfg), tmp_path / "r2")
    identical = tree_hash(tmp_path / "r1") == tree_hash(tmp_path / "r2")
    ok = prev_ok and identical
    report("Synthetic fidelity (prevalence 0.25±0.03 at n=2000; byte-identical regen)", ok,
           f"C prevalence {prev_c:.3f}, identical={identical}")


def test_whatif_consistency():
    """100 random abnormal features: nearest-bound clamp, exact predict match,
    efficiency of the recomputed contribution set."""
    rng = np.random.default_rng(8)
    checked = 0
    ok = True
    while checked < 100:
        m = int(rng.integers(3, 10))
        model = random_linear_model(rng, m)
        feature_ids = [f"f{i}" for i in range(m)]
        x = rng.normal(0, 2, m)
        background = rng.normal(0, 1, (8, m))
        ref = reference_from_values(rng.normal(0, 0.6, int(rng.integers(2, 12))).tolist())
        j = int(rng.integers(m))
        if not ref.defined or flag(float(x[j]), ref) == "within":
            continue
        result = whatif(model, x, feature_ids, feature_ids[j], ref, background,
                        method="sampled", n_samples=25, seed=checked)
        nearest = ref.high if x[j] > ref.high else ref.low
        modified = x.copy()
        modified[j] = nearest
        if result.clamped_value != nearest:
            ok = False
        if result.new_prediction != float(model.predict_risk(modified)):
            ok = False
        if result.new_contributions.additivity_gap() >= 1e-9:
            ok = False
        try:
            whatif(model, modified, feature_ids, feature_ids[j], ref, background)
            ok = False  # clamped vector must no longer be abnormal
        except NotAbnormalError:
            pass
        checked += 1
    report("What-if consistency on 100 random abnormal features", ok)


def test_lineage_gate(tiny_dataset):
    """50 random dynamic features: non-lineage perturbations bit-identical,
    lineage perturbations change MEAN/SD/TREND."""
    rng = np.random.default_rng(9)
    descriptors = [
        d for d in FeatureSynthesizer().fit(tiny_dataset).descriptors_
        if d.kind == "dynamic" and d.aggregation in
        (AggregationKind.MEAN, AggregationKind.SD, AggregationKind.TREND)
    ]
    sids = [r["surgery_id"] for r in tiny_dataset.rows("surgeries")]

    def perturbed(entity, event_id, delta):
        tables = {k: [dict(r) for r in v] for k, v in tiny_dataset.tables.items()}
        for row in tables[entity]:
            if row["event_id"] == event_id:
                row["value"] += delta
                break
        return Dataset(tiny_dataset.manifest, tables)

    checked, ok = 0, True
    while checked < 50:
        desc = descriptors[int(rng.integers(len(descriptors)))]
        sid = sids[int(rng.integers(len(sids)))]
        lineage = resolve_lineage(desc, tiny_dataset, sid)
        if len(lineage) < 2:
            continue
        baseline = compute_feature(desc, tiny_dataset, sid)
        target = lineage[int(rng.integers(len(lineage)))]
        changed = compute_feature(desc, perturbed(desc.source_entity, target.event_id, 11.0), sid)
        if changed == baseline:
            ok = False
        lineage_ids = {r.event_id for r in lineage}
        others = [r for r in tiny_dataset.tables[desc.source_entity] if r["event_id"] not in lineage_ids]
        if others:
            other = others[int(rng.integers(len(others)))]
            same = compute_feature(desc, perturbed(desc.source_entity, other["event_id"], 123.0), sid)
            if same != baseline:
                ok = False
        checked += 1
    report("Lineage completeness on 50 random dynamic features", ok)


def test_api_golden_fixtures(service_state, service_client):
    """Endpoint sweep equals committed fixtures (floats to 1e-9); no UI involved."""
    fixture_dir = golden.FIXTURE_DIR
    assert fixture_dir.exists(), "run `python3 tests/golden.py` and commit its output"
    payloads = golden.run_sweep(service_client, service_state)
    problems = []
    for name, actual in payloads.items():
        expected = json.loads((fixture_dir / f"{name}.json").read_text())
        problems.extend(golden.compare_json(expected, actual, path=name))
    report("API golden fixtures byte-for-byte (floats 1e-9)", not problems,
           "; ".join(problems[:3]) if problems else f"{len(payloads)} endpoints")
