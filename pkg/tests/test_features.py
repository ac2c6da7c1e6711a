import copy
import numpy as np
import pytest

from riskscope.features import (
    AggregationKind,
    FeatureSynthesizer,
    aggregate,
    build_matrix,
    compute_feature,
    resolve_lineage,
    synthesize_descriptors,
)
from riskscope.store import Dataset, DatasetError

from util import micro_dataset


class TestAggregate:
    def test_mean(self):
        assert aggregate(AggregationKind.MEAN, [0, 1, 2], [1, 2, 3]) == 2.0

    def test_trend_exact_line(self):
        assert aggregate(AggregationKind.TREND, [0, 1, 2], [0, 1, 2]) == pytest.approx(1.0, rel=1e-12)

    def test_sd_constant(self):
        assert aggregate(AggregationKind.SD, [0, 1, 2], [5, 5, 5]) == 0.0

    def test_count_empty(self):
        assert aggregate(AggregationKind.COUNT, [], []) == 0.0

    def test_undefined_cases(self):
        assert aggregate(AggregationKind.MEAN, [], []) is None
        assert aggregate(AggregationKind.SD, [0], [1.0]) is None
        assert aggregate(AggregationKind.TREND, [0], [1.0]) is None
        assert aggregate(AggregationKind.TREND, [2, 2], [1.0, 3.0]) is None  # no time spread

    def test_against_numpy_oracle(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            n = int(rng.integers(2, 40))
            t = np.sort(rng.uniform(0, 10, n))
            v = rng.normal(0, 5, n)
            assert aggregate(AggregationKind.MEAN, t, v) == pytest.approx(np.mean(v), rel=1e-12)
            assert aggregate(AggregationKind.SD, t, v) == pytest.approx(np.std(v, ddof=1), rel=1e-12)
            assert aggregate(AggregationKind.MIN, t, v) == np.min(v)
            assert aggregate(AggregationKind.MAX, t, v) == np.max(v)
            slope = np.polyfit(t, v, 1)[0]
            assert aggregate(AggregationKind.TREND, t, v) == pytest.approx(slope, rel=1e-8, abs=1e-10)

    def test_trend_affine_relative_tolerance(self):
        rng = np.random.default_rng(1)
        for _ in range(50):
            n = int(rng.integers(2, 100))
            t = np.sort(rng.uniform(0, 24, n))
            if len(set(t)) < 2:
                continue
            a, b = rng.normal(0, 10), rng.normal(0, 4)
            v = a + b * t
            assert aggregate(AggregationKind.TREND, t, v) == pytest.approx(b, rel=1e-9, abs=1e-12)


class TestDescriptors:
    def test_dynamic_combinatorics(self, tiny_dataset):
        descriptors = synthesize_descriptors(tiny_dataset)
        vitals = [d for d in descriptors if d.source_entity == "vitalsigns"]
        # vitals declare the in-surgery window only: items x 6 aggregations
        n_items = len(tiny_dataset.item_ids("vitalsigns"))
        assert len(vitals) == n_items * 6
        labs = [d for d in descriptors if d.source_entity == "labtests"]
        assert len(labs) == len(tiny_dataset.item_ids("labtests")) * 6 * 2  # two windows

    def test_static_age_hierarchy(self, tiny_dataset):
        descriptors = synthesize_descriptors(tiny_dataset)
        age = next(d for d in descriptors if d.feature_id == "patients.age_months")
        assert age.kind == "static"
        assert age.hierarchy_path == ("pre-surgery", "demographics", "age_months")

    def test_labels_and_keys_excluded(self, tiny_dataset):
        descriptors = synthesize_descriptors(tiny_dataset)
        ids = {d.feature_id for d in descriptors}
        assert not any("complication" in fid for fid in ids)
        assert "surgeries.surgery_id" not in ids
        assert "surgeries.admission_id" not in ids

    def test_missing_target_entity_errors(self, tiny_dataset):
        with pytest.raises(DatasetError, match="absent from schema"):
            synthesize_descriptors(tiny_dataset, target_entity="nonexistent")

    def test_deterministic_order(self, tiny_dataset):
        a = [d.feature_id for d in synthesize_descriptors(tiny_dataset)]
        b = [d.feature_id for d in synthesize_descriptors(tiny_dataset)]
        assert a == b

    def test_aggregation_gate(self, tiny_dataset):
        fx = FeatureSynthesizer(aggregations=("mean", "sd", "trend")).fit(tiny_dataset)
        dyn = [d for d in fx.descriptors_ if d.kind == "dynamic"]
        assert {d.aggregation.value for d in dyn} == {"mean", "sd", "trend"}


class TestComputeAndMatrix:
    def test_compute_feature_examples(self):
        ds = micro_dataset([
            ("vitalsigns", "P1", "Pulse", 0.0, 1.0),
            ("vitalsigns", "P1", "Pulse", 60.0, 2.0),
            ("vitalsigns", "P1", "Pulse", 120.0, 3.0),
        ])
        descriptors = {d.feature_id: d for d in synthesize_descriptors(ds)}
        mean = descriptors["vitalsigns.Pulse.mean.in-surgery"]
        trend = descriptors["vitalsigns.Pulse.trend.in-surgery"]
        count = descriptors["vitalsigns.Pulse.count.in-surgery"]
        assert compute_feature(mean, ds, "S1") == 2.0
        assert compute_feature(trend, ds, "S1") == pytest.approx(1.0, rel=1e-12)  # per hour
        assert compute_feature(count, ds, "S1") == 3.0
        # patient 2 has no events: missing for MEAN, 0 for COUNT
        assert compute_feature(mean, ds, "S2") is None
        assert compute_feature(count, ds, "S2") == 0.0

    def test_matrix_shape_and_missing(self, tiny_dataset, tiny_matrix):
        n_rows = len(tiny_dataset.rows("surgeries"))
        assert tiny_matrix.shape[0] == n_rows
        assert tiny_matrix.shape[1] == len(tiny_matrix.column_ids)
        assert np.isnan(tiny_matrix.values).any()  # trend over sparse labs is missing somewhere

    def test_matrix_missing_is_nan_not_zero(self):
        ds = micro_dataset([("labtests", "P1", "Lactate", 10.0, 2.0),
                            ("labtests", "P1", "Lactate", 20.0, 2.4)])
        matrix = build_matrix(ds, synthesize_descriptors(ds))
        col = matrix.column("labtests.Lactate.mean.in-surgery")
        row2 = matrix.row_for_surgery("S2")
        assert np.isnan(col[row2])
        count_col = matrix.column("labtests.Lactate.count.in-surgery")
        assert count_col[row2] == 0.0

    def test_matrix_deterministic(self, tiny_dataset):
        fx = FeatureSynthesizer()
        a = fx.fit_transform(tiny_dataset)
        b = FeatureSynthesizer().fit_transform(tiny_dataset)
        assert a.column_ids == b.column_ids
        assert np.array_equal(a.values, b.values, equal_nan=True)

    def test_one_hot_expansion(self, tiny_matrix):
        gender_cols = tiny_matrix.columns_for_descriptor("patients.gender")
        assert sorted(gender_cols) == ["patients.gender=F", "patients.gender=M"]
        vals = tiny_matrix.column("patients.gender=F") + tiny_matrix.column("patients.gender=M")
        assert np.allclose(vals, 1.0)

    def test_matrix_row_matches_compute_feature(self, tiny_dataset, tiny_matrix):
        sid = tiny_matrix.surgery_ids[0]
        for fid, desc in list(tiny_matrix.descriptors.items())[:30]:
            if desc.value_kind != "numeric":
                continue
            value = compute_feature(desc, tiny_dataset, sid)
            cell = tiny_matrix.column(fid)[tiny_matrix.row_for_surgery(sid)]
            if value is None:
                assert np.isnan(cell)
            else:
                assert cell == value


class TestLineage:
    def test_dynamic_lineage_matches_series(self):
        ds = micro_dataset([
            ("vitalsigns", "P1", "Pulse", m, 100.0 + m) for m in (5.0, 10.0, 15.0)
        ])
        desc = {d.feature_id: d for d in synthesize_descriptors(ds)}["vitalsigns.Pulse.mean.in-surgery"]
        refs = resolve_lineage(desc, ds, "S1")
        assert [r.value for r in refs] == [105.0, 110.0, 115.0]

    def test_static_lineage_single_cell(self, tiny_dataset):
        descriptors = {d.feature_id: d for d in synthesize_descriptors(tiny_dataset)}
        refs = resolve_lineage(descriptors["patients.age_months"], tiny_dataset, "S00001")
        assert len(refs) == 1
        assert refs[0].entity == "patients"
        assert refs[0].column == "age_months"

    def _perturbed(self, dataset, entity, event_id, delta):
        tables = {k: [dict(r) for r in v] for k, v in dataset.tables.items()}
        for row in tables[entity]:
            if row["event_id"] == event_id:
                row["value"] += delta
                break
        return Dataset(dataset.manifest, tables)

    def test_lineage_completeness_randomized(self, tiny_dataset):
        """Perturbing non-lineage records never changes the feature; perturbing
        lineage records changes MEAN/SD/TREND (documented MIN/MAX exceptions)."""
        rng = np.random.default_rng(7)
        descriptors = [d for d in synthesize_descriptors(tiny_dataset)
                       if d.kind == "dynamic" and d.aggregation in
                       (AggregationKind.MEAN, AggregationKind.SD, AggregationKind.TREND)]
        sids = [r["surgery_id"] for r in tiny_dataset.rows("surgeries")]
        checked = 0
        for _ in range(60):
            desc = descriptors[int(rng.integers(len(descriptors)))]
            sid = sids[int(rng.integers(len(sids)))]
            lineage = resolve_lineage(desc, tiny_dataset, sid)
            if len(lineage) < 2:
                continue
            baseline = compute_feature(desc, tiny_dataset, sid)
            # perturb one lineage record: value must change
            target = lineage[int(rng.integers(len(lineage)))]
            changed = compute_feature(desc, self._perturbed(tiny_dataset, desc.source_entity, target.event_id, 7.5), sid)
            assert changed != baseline, (desc.feature_id, sid)
            # perturb one non-lineage record of the same entity: bit-identical
            lineage_ids = {r.event_id for r in lineage}
            others = [r for r in tiny_dataset.tables[desc.source_entity]
                      if r["event_id"] not in lineage_ids]
            if others:
                other = others[int(rng.integers(len(others)))]
                same = compute_feature(desc, self._perturbed(tiny_dataset, desc.source_entity, other["event_id"], 99.0), sid)
                assert same == baseline
            checked += 1
        assert checked >= 30
