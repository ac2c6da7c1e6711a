"""Command-line interface: synth, ingest, train, explain, influence, serve."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import features as features_mod
from .cohort import CohortSelector, feature_reference, select_cohort
from .influence import influential_segments
from .predictor import LogisticRiskModel, cross_validate
from .service import AppState, ServiceConfig, create_app
from .shapley import build_hierarchy, group_rollup
from .store import load_dataset
from .synth import SynthConfig, TARGET_LABELS, generate


def _cmd_synth(args):
    config = SynthConfig.from_json(args.config) if args.config else SynthConfig()
    if args.seed is not None:
        config.seed = args.seed
    if args.patients is not None:
        config.n_patients = args.patients
    report = generate(config, args.out)
    print(json.dumps(report.to_dict(), indent=2))


def _cmd_ingest(args):
    dataset = load_dataset(args.data)
    matrix = features_mod.FeatureSynthesizer().fit_transform(dataset)
    summary = {
        "patients": dataset.patient_count,
        "tables": {name: len(rows) for name, rows in dataset.tables.items()},
        "descriptors": len(matrix.descriptors),
        "matrix_shape": list(matrix.shape),
        "missing_fraction": float(np.isnan(matrix.values).mean()) if matrix.values.size else 0.0,
    }
    if args.matrix:
        features_mod.export_matrix(matrix, args.matrix, args.descriptors)
        summary["matrix_csv"] = args.matrix
        if args.descriptors:
            summary["descriptors_json"] = args.descriptors
    print(json.dumps(summary, indent=2))


def _target_labels(dataset, target):
    rows = features_mod.surgeries_sorted(dataset)
    return np.array([r.get(f"complication_{target}") or 0.0 for r in rows])


def _cmd_train(args):
    dataset = load_dataset(args.data)
    matrix = features_mod.FeatureSynthesizer().fit_transform(dataset)
    y = _target_labels(dataset, args.target)
    model = LogisticRiskModel(l2_strength=args.l2, seed=args.seed)
    cv = cross_validate(matrix.values, y, n_folds=args.folds, seed=args.seed, model=model)
    print(f"target {args.target}: {args.folds}-fold stratified CV")
    for i, auc in enumerate(cv.fold_aucs):
        print(f"  fold {i + 1:2d}: AUC {auc:.4f}")
    print(f"  mean AUC {cv.mean_auc:.4f}")
    model.fit(matrix.values, y, feature_ids=matrix.column_ids, target_label=args.target)
    model.save(args.out)
    print(f"model written to {args.out}")


def _state_for(args) -> AppState:
    config = ServiceConfig(data_dir=args.data, model_dir=getattr(args, "models", None))
    return AppState.build(config, train_missing=getattr(args, "models", None) is None)


def _cmd_explain(args):
    state = _state_for(args)
    cohort = state.cohorts.get(CohortSelector())
    explanation = state.explanation(args.patient, args.target, cohort)
    root = group_rollup(build_hierarchy(state.matrix), explanation.contributions)
    payload = explanation.to_dict()
    payload["hierarchy"] = root.to_dict()
    print(json.dumps(payload, indent=2))


def _cmd_influence(args):
    dataset = load_dataset(args.data)
    matrix = features_mod.FeatureSynthesizer().fit_transform(dataset)
    descriptor = matrix.descriptors.get(args.feature)
    if descriptor is None or descriptor.kind != "dynamic":
        sys.exit(f"unknown dynamic feature {args.feature!r}")
    surgery = features_mod.primary_surgery(dataset, args.patient)
    if surgery is None:
        sys.exit(f"no surgery for patient {args.patient!r}")
    window = features_mod.resolve_window(dataset, surgery, descriptor.window)
    series = dataset.get_series(args.patient, descriptor.item_id, window)
    value = features_mod.compute_feature(descriptor, dataset, surgery["surgery_id"])
    if value is None or len(series) < 2:
        sys.exit("feature undefined on this patient's records")
    cohort = select_cohort(dataset, CohortSelector())
    reference = feature_reference(matrix, cohort.low_risk, args.feature)
    segments = influential_segments(series, descriptor, value, reference, k=args.k)
    print(json.dumps(segments.to_dict(), indent=2))


def _cmd_serve(args):
    if args.config:
        config = ServiceConfig.from_json(args.config)
    else:
        config = ServiceConfig(data_dir=args.data)
    if args.data:
        config.data_dir = args.data
    if args.models:
        config.model_dir = args.models
    if args.port:
        config.port = args.port
    if args.static:
        config.static_dir = args.static
    config.apply_env_overrides()
    state = AppState.build(config, train_missing=config.model_dir is None)
    app = create_app(state)
    import uvicorn

    uvicorn.run(app, host=args.host, port=config.port, log_level="info")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="riskscope", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--config", help="SynthConfig JSON file")
    p.add_argument("--out", required=True, help="output dataset directory")
    p.add_argument("--seed", type=int)
    p.add_argument("--patients", type=int)
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("ingest", help="load, validate, and summarize a dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--matrix", help="export the feature matrix CSV here")
    p.add_argument("--descriptors", help="export the descriptor sidecar JSON here")
    p.set_defaults(func=_cmd_ingest)

    p = sub.add_parser("train", help="cross-validate and train one target model")
    p.add_argument("--data", required=True)
    p.add_argument("--target", choices=TARGET_LABELS, default="C")
    p.add_argument("--out", required=True)
    p.add_argument("--folds", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--l2", type=float, default=1e-2)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("explain", help="print a patient's contribution set as JSON")
    p.add_argument("--data", required=True)
    p.add_argument("--models", help="directory of model_<target>.json files (trains in-process if omitted)")
    p.add_argument("--patient", required=True)
    p.add_argument("--target", choices=TARGET_LABELS, default="C")
    p.set_defaults(func=_cmd_explain)

    p = sub.add_parser("influence", help="print influential segments for one dynamic feature")
    p.add_argument("--data", required=True)
    p.add_argument("--patient", required=True)
    p.add_argument("--feature", required=True, help="dynamic feature id, e.g. vitalsigns.Pulse.mean.in-surgery")
    p.add_argument("--k", type=int, default=None, help="occlusion window size (default: ~5 min of sampling)")
    p.set_defaults(func=_cmd_influence)

    p = sub.add_parser("serve", help="serve the HTTP API (and UI assets when built)")
    p.add_argument("--config", help="ServiceConfig JSON file")
    p.add_argument("--data")
    p.add_argument("--models")
    p.add_argument("--port", type=int)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--static", help="directory of built UI assets")
    p.set_defaults(func=_cmd_serve)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    args.func(args)


if __name__ == "__main__":
    main()
