"""HTTP facade binding store, features, models, and explainers together.

The app is stateless over an immutable AppState built once at startup;
request handling only ever inserts into the cohort/explanation caches.
Every error response carries a machine-readable {code, message} body.
"""

from __future__ import annotations

import json
import os
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from fastapi import FastAPI, HTTPException, Query, Request
from fastapi.responses import JSONResponse

from . import cohort as cohort_mod
from . import features as features_mod
from .cohort import CohortCache, CohortSelector, ReferenceRange, flag
from .influence import DEFAULT_Z_GRID, influential_segments, merge_overlays
from .predictor import LogisticRiskModel
from .shapley import build_hierarchy, group_rollup, shap_exact, shap_sampled, sort_filter
from .store import Dataset, format_timestamp, load_dataset
from .synth import TARGET_LABELS
from .whatif import NotAbnormalError, UndefinedRangeError, whatif

INTERVAL_CHOICES = {"1h": 1, "4h": 4, "8h": 8}


@dataclass
class ServiceConfig:
    data_dir: str
    model_dir: Optional[str] = None
    port: int = 8000
    z_grid: tuple = tuple(DEFAULT_Z_GRID)
    window_k: Optional[int] = None  # None: per-series default
    exact_limit: int = 14
    seed: int = 0
    n_samples: int = 300
    background_limit: int = 64
    static_dir: Optional[str] = None

    @classmethod
    def from_json(cls, path: Path | str) -> "ServiceConfig":
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
        cfg = cls(data_dir=raw["data_dir"])
        for key in ("model_dir", "port", "window_k", "exact_limit", "seed",
                    "n_samples", "background_limit", "static_dir"):
            if key in raw:
                setattr(cfg, key, raw[key])
        if "z_grid" in raw:
            cfg.z_grid = tuple(float(z) for z in raw["z_grid"])
        return cfg

    def apply_env_overrides(self):
        if os.environ.get("RISKSCOPE_PORT"):
            self.port = int(os.environ["RISKSCOPE_PORT"])
        if os.environ.get("RISKSCOPE_DATA_DIR"):
            self.data_dir = os.environ["RISKSCOPE_DATA_DIR"]
        return self


class ApiError(HTTPException):
    def __init__(self, status_code: int, code: str, message: str):
        super().__init__(status_code=status_code, detail={"code": code, "message": message})


class AppState:
    """Immutable dataset/matrix/models plus idempotent caches."""

    def __init__(self, dataset: Dataset, matrix, models: dict[str, LogisticRiskModel],
                 config: ServiceConfig):
        self.dataset = dataset
        self.matrix = matrix
        self.models = models
        self.config = config
        self.cohorts = CohortCache(dataset)
        self._explanations: dict[tuple, object] = {}
        self._record_refs: dict[tuple, ReferenceRange] = {}
        self._lock = threading.Lock()
        # default cohort (everyone) is the fallback evidence base
        self.default_cohort = self.cohorts.get(CohortSelector())

    @classmethod
    def build(cls, config: ServiceConfig, train_missing: bool = False) -> "AppState":
        dataset = load_dataset(config.data_dir)
        matrix = features_mod.FeatureSynthesizer().fit_transform(dataset)
        models: dict[str, LogisticRiskModel] = {}
        if config.model_dir:
            for target in TARGET_LABELS:
                path = Path(config.model_dir) / f"model_{target}.json"
                if path.exists():
                    models[target] = LogisticRiskModel.load(path)
        if not models and train_missing:
            rows = features_mod.surgeries_sorted(dataset)
            for target in TARGET_LABELS:
                y = np.array([r.get(f"complication_{target}") or 0.0 for r in rows])
                if len(np.unique(y)) < 2:
                    continue
                models[target] = LogisticRiskModel(seed=config.seed).fit(
                    matrix.values, y, feature_ids=matrix.column_ids, target_label=target
                )
        if not models:
            raise ValueError("no models available; run the train command first")
        return cls(dataset, matrix, models, config)

    # -- helpers ---------------------------------------------------------------

    def surgery_for(self, patient_id: str) -> dict:
        if not self.dataset.has_patient(patient_id):
            raise ApiError(404, "unknown_patient", f"no patient {patient_id!r}")
        surgery = features_mod.primary_surgery(self.dataset, patient_id)
        if surgery is None:
            raise ApiError(404, "no_surgery", f"patient {patient_id!r} has no surgery")
        return surgery

    def model_for(self, target: str) -> LogisticRiskModel:
        model = self.models.get(target)
        if model is None:
            raise ApiError(400, "unknown_target", f"no model for target {target!r}")
        return model

    def cohort_for(self, cohort_id: Optional[str], required: bool = False):
        if cohort_id is None:
            if required:
                raise ApiError(400, "cohort_required", "this endpoint needs a cohort id")
            return self.default_cohort
        cohort = self.cohorts.by_id(cohort_id)
        if cohort is None and cohort_id == self.default_cohort.cohort_id:
            cohort = self.default_cohort
        if cohort is None:
            raise ApiError(404, "unknown_cohort", f"no cohort {cohort_id!r}; POST /api/cohort first")
        return cohort

    def background_rows(self, cohort) -> np.ndarray:
        """Low-risk cohort rows (deterministically capped); falls back to the
        whole cohort, then the full matrix, so the background is never empty."""
        for group in (cohort.low_risk, cohort.patient_ids, self.matrix.patient_ids):
            rows = [self.matrix.row_for_patient(p) for p in group]
            rows = sorted({r for r in rows if r is not None})
            if rows:
                break
        limit = self.config.background_limit
        if len(rows) > limit:
            picks = np.linspace(0, len(rows) - 1, limit).round().astype(int)
            rows = [rows[i] for i in sorted(set(picks.tolist()))]
        return self.matrix.values[rows]

    def explanation(self, patient_id: str, target: str, cohort):
        key = (patient_id, target, cohort.cohort_id)
        cached = self._explanations.get(key)
        if cached is not None:
            return cached
        surgery = self.surgery_for(patient_id)
        model = self.model_for(target)
        x = self.matrix.vector(surgery["surgery_id"])
        background = self.background_rows(cohort)
        m = len(x)
        if m <= self.config.exact_limit:
            result = shap_exact(
                model, x, background, feature_ids=self.matrix.column_ids,
                exact_limit=self.config.exact_limit,
                instance_id=patient_id, target_label=target,
            )
        else:
            result = shap_sampled(
                model, x, background, n_samples=self.config.n_samples,
                seed=self.config.seed, feature_ids=self.matrix.column_ids,
                instance_id=patient_id, target_label=target,
            )
        with self._lock:
            self._explanations.setdefault(key, result)
        return self._explanations[key]

    def record_ref(self, cohort, item_id: str) -> ReferenceRange:
        key = (cohort.cohort_id, item_id)
        ref = self._record_refs.get(key)
        if ref is None:
            ref = cohort_mod.record_reference(self.dataset, cohort.low_risk, item_id)
            with self._lock:
                self._record_refs.setdefault(key, ref)
        return self._record_refs[key]

    def feature_ref(self, cohort, column_id: str) -> ReferenceRange:
        return cohort_mod.feature_reference(self.matrix, cohort.low_risk, column_id)


def _leaf_payload(state: AppState, node, surgery, cohort) -> dict:
    desc = state.matrix.descriptors[node.feature_id]
    value = features_mod.compute_feature(desc, state.dataset, surgery["surgery_id"])
    payload = {
        "label": node.label,
        "feature_id": node.feature_id,
        "display_name": desc.display_name,
        "kind": desc.kind,
        "value_kind": desc.value_kind,
        "source_entity": desc.source_entity,
        "item_id": desc.item_id,
        "aggregation": desc.aggregation.value if desc.aggregation else None,
        "window": desc.window,
        "column_ids": node.column_ids,
        "contribution": node.contribution,
        "value": value,
        "reference": None,
        "flag": None,
    }
    if desc.value_kind == "numeric" and len(node.column_ids) == 1:
        ref = state.feature_ref(cohort, node.column_ids[0])
        payload["reference"] = ref.to_dict()
        payload["flag"] = flag(value, ref)
        payload["has_reference"] = ref.defined
    return payload


def _hierarchy_payload(state, root, surgery, cohort,
                       sort_key: str, top_k: Optional[int], min_abs: float) -> dict:
    leaves = root.leaves()
    kept = {id(leaf) for leaf in sort_filter(leaves, sort_key, min_abs=min_abs, top_k=top_k)}

    def render(node):
        if node.is_leaf:
            if id(node) not in kept:
                return None
            return _leaf_payload(state, node, surgery, cohort)
        children = [render(c) for c in sort_filter(node.children, sort_key)]
        children = [c for c in children if c is not None]
        if not children:
            return None
        return {"label": node.label, "group_contribution": node.contribution, "children": children}

    children = [render(c) for c in sort_filter(root.children, sort_key)]
    return {
        "label": "root",
        "group_contribution": root.contribution,
        "children": [c for c in children if c is not None],
    }


def create_app(state: AppState) -> FastAPI:
    app = FastAPI(title="riskscope", version="0.1.0")

    @app.exception_handler(HTTPException)
    async def handle_http_error(request: Request, exc: HTTPException):
        detail = exc.detail if isinstance(exc.detail, dict) else {"code": "error", "message": str(exc.detail)}
        return JSONResponse(status_code=exc.status_code, content=detail)

    @app.get("/api/meta")
    def meta():
        return {
            "patient_count": state.dataset.patient_count,
            "targets": sorted(state.models),
            "feature_columns": len(state.matrix.column_ids),
            "intervals": sorted(INTERVAL_CHOICES),
            "default_cohort_id": state.default_cohort.cohort_id,
            "items": {
                entity: state.dataset.item_ids(entity)
                for entity in state.dataset.manifest.event_entities
            },
            "threshold": 0.5,
        }

    @app.get("/api/patients")
    def patients():
        out = []
        for pid in state.dataset.patient_ids:
            surgery = features_mod.primary_surgery(state.dataset, pid)
            if surgery is None:
                continue
            x = state.matrix.vector(surgery["surgery_id"])
            risks, flags_ = {}, {}
            for target, model in sorted(state.models.items()):
                risk = float(model.predict_risk(x))
                risks[target] = risk
                flags_[target] = bool(risk >= model.threshold)
            out.append({"patient_id": pid, "surgery_id": surgery["surgery_id"],
                        "risks": risks, "predictions": flags_})
        return out

    @app.get("/api/patient/{patient_id}/profile")
    def profile(patient_id: str, cohort: Optional[str] = None):
        surgery = state.surgery_for(patient_id)
        selected = state.cohort_for(cohort)
        payload = {"patient_id": patient_id}
        for entity in ("patients", "admissions", "surgeries"):
            row = features_mod._resolve_path_row(state.dataset, surgery, entity)
            schema = state.dataset.manifest.entities[entity]
            fields = {}
            for col in schema.columns:
                if col.name in state.dataset.manifest.label_columns:
                    continue
                value = row.get(col.name)
                entry = {"value": format_timestamp(value) if col.kind == "timestamp" and value else value}
                fid = f"{entity}.{col.name}"
                if col.kind == "numeric" and fid in state.matrix.descriptors:
                    ref = state.feature_ref(selected, fid)
                    entry["reference"] = ref.to_dict()
                    entry["flag"] = flag(value, ref)
                fields[col.name] = entry
            payload[entity] = fields
        labels = {
            t: bool((surgery.get(f"complication_{t}") or 0) > 0) for t in TARGET_LABELS
        }
        payload["labels"] = labels
        return payload

    @app.post("/api/cohort")
    def make_cohort(selector: dict):
        try:
            parsed = CohortSelector.from_dict(selector)
            cohort = state.cohorts.get(parsed)
        except (ValueError, KeyError) as exc:
            raise ApiError(400, "bad_selector", str(exc))
        return {
            "cohort_id": cohort.cohort_id,
            "size": cohort.size,
            "low_risk_size": len(cohort.low_risk),
            "high_risk_size": len(cohort.high_risk),
        }

    @app.get("/api/patient/{patient_id}/features")
    def features(
        patient_id: str,
        target: str = Query("C"),
        cohort: Optional[str] = None,
        sort: str = Query("abs_contribution"),
        topk: Optional[int] = Query(None, ge=1),
        min_abs: float = Query(0.0, ge=0.0),
    ):
        surgery = state.surgery_for(patient_id)
        selected = state.cohort_for(cohort)
        explanation = state.explanation(patient_id, target, selected)
        template = build_hierarchy(state.matrix)
        try:
            rolled = group_rollup(template, explanation.contributions)
            tree = _hierarchy_payload(
                state, rolled, surgery, selected,
                sort_key=sort, top_k=topk, min_abs=min_abs,
            )
        except ValueError as exc:
            raise ApiError(400, "bad_query", str(exc))
        return {
            "patient_id": patient_id,
            "target": target,
            "cohort_id": selected.cohort_id,
            "prediction": explanation.prediction,
            "base_value": explanation.base_value,
            "method": explanation.method,
            "root": tree,
        }

    @app.get("/api/patient/{patient_id}/distribution")
    def feature_distribution(patient_id: str, feature_id: str, cohort: Optional[str] = None):
        surgery = state.surgery_for(patient_id)
        selected = state.cohort_for(cohort)
        desc = state.matrix.descriptors.get(feature_id)
        if desc is None:
            raise ApiError(404, "unknown_feature", f"no feature {feature_id!r}")
        value = features_mod.compute_feature(desc, state.dataset, surgery["surgery_id"])
        low_rows = [state.matrix.row_for_patient(p) for p in selected.low_risk]
        high_rows = [state.matrix.row_for_patient(p) for p in selected.high_risk]
        low_rows = [r for r in low_rows if r is not None]
        high_rows = [r for r in high_rows if r is not None]
        if desc.value_kind == "categorical":
            low_vals = [features_mod.compute_feature(desc, state.dataset, state.matrix.surgery_ids[r]) for r in low_rows]
            high_vals = [features_mod.compute_feature(desc, state.dataset, state.matrix.surgery_ids[r]) for r in high_rows]
            dist = cohort_mod.distribution(low_vals, high_vals, "categorical", patient_value=value)
        else:
            col = state.matrix.column(feature_id)
            dist = cohort_mod.distribution(col[low_rows], col[high_rows], "numeric", patient_value=value)
        return {"patient_id": patient_id, "feature_id": feature_id,
                "cohort_id": selected.cohort_id, "distribution": dist.to_dict()}

    @app.get("/api/patient/{patient_id}/series/{item_id}")
    def series(patient_id: str, item_id: str, cohort: Optional[str] = None,
               explain_feature: Optional[str] = None):
        surgery = state.surgery_for(patient_id)
        selected = state.cohort_for(cohort)
        entity = state.dataset.item_entity(item_id)
        if entity is None:
            raise ApiError(404, "unknown_item", f"no records for item {item_id!r}")
        window = features_mod.admission_window(state.dataset, surgery)
        full = state.dataset.get_series(patient_id, item_id, window)
        ref = state.record_ref(selected, item_id)
        points = [
            {"ts": format_timestamp(p.ts), "value": p.value, "flag": flag(p.value, ref)}
            for p in full.points
        ]
        payload = {
            "patient_id": patient_id,
            "item_id": item_id,
            "entity": entity,
            "unit": full.points[0].unit if full.points else "",
            "window": {"start": format_timestamp(window.start), "end": format_timestamp(window.end)},
            "surgery_window": {
                "start": format_timestamp(surgery["start_time"]),
                "end": format_timestamp(surgery["end_time"]),
            },
            "reference": ref.to_dict(),
            "points": points,
            "segments": None,
            "overlay": None,
        }
        if explain_feature is not None:
            desc = state.matrix.descriptors.get(explain_feature)
            if desc is None or desc.kind != "dynamic" or desc.item_id != item_id:
                raise ApiError(404, "unknown_feature",
                               f"{explain_feature!r} is not a dynamic feature of item {item_id!r}")
            feature_window = features_mod.resolve_window(state.dataset, surgery, desc.window)
            lineage_series = state.dataset.get_series(patient_id, item_id, feature_window)
            if len(lineage_series) >= 2:
                k = state.config.window_k
                feature_ref = state.feature_ref(selected, desc.feature_id) if desc.value_kind == "numeric" else None
                value = features_mod.compute_feature(desc, state.dataset, surgery["surgery_id"])
                sets = []
                for sibling in state.matrix.descriptors.values():
                    if (sibling.kind != "dynamic" or sibling.item_id != item_id
                            or sibling.window != desc.window):
                        continue
                    sib_value = features_mod.compute_feature(sibling, state.dataset, surgery["surgery_id"])
                    if sib_value is None:
                        continue
                    sib_ref = state.feature_ref(selected, sibling.feature_id)
                    sets.append(
                        influential_segments(
                            lineage_series, sibling, sib_value, sib_ref,
                            k=k, z_grid=state.config.z_grid,
                        )
                    )
                    if sibling.feature_id == desc.feature_id:
                        payload["segments"] = sets[-1].to_dict()
                payload["overlay"] = merge_overlays(sets, lineage_series).to_dict()
        return payload

    @app.get("/api/patient/{patient_id}/timeline")
    def timeline(patient_id: str, interval: str = Query("4h"), cohort: Optional[str] = None):
        if interval not in INTERVAL_CHOICES:
            raise ApiError(400, "bad_interval", f"interval must be one of {sorted(INTERVAL_CHOICES)}")
        if cohort is None:
            raise ApiError(400, "cohort_required", "timeline needs a cohort for reference ranges")
        selected = state.cohort_for(cohort)
        state.surgery_for(patient_id)
        references = {}
        for entity in state.dataset.manifest.event_entities:
            for item in state.dataset.item_ids(entity):
                references[item] = state.record_ref(selected, item)
        rows = cohort_mod.timeline_summary(
            state.dataset, patient_id, INTERVAL_CHOICES[interval], references
        )
        return {
            "patient_id": patient_id,
            "interval_hours": INTERVAL_CHOICES[interval],
            "cohort_id": selected.cohort_id,
            "rows": [
                {"source": source, "cells": [c.to_dict() for c in cells]}
                for source, cells in rows.items()
            ],
        }

    @app.post("/api/patient/{patient_id}/whatif")
    def whatif_endpoint(patient_id: str, body: dict):
        target = body.get("target", "C")
        feature_id = body.get("feature_id")
        if not feature_id:
            raise ApiError(400, "bad_request", "feature_id is required")
        surgery = state.surgery_for(patient_id)
        selected = state.cohort_for(body.get("cohort_id"))
        model = state.model_for(target)
        if feature_id in state.matrix.descriptors:
            column_ids = state.matrix.columns_for_descriptor(feature_id)
        elif feature_id in state.matrix.column_ids:
            column_ids = [feature_id]
        else:
            raise ApiError(404, "unknown_feature", f"no feature {feature_id!r}")
        desc = state.matrix.descriptors.get(feature_id)
        if len(column_ids) != 1 or (desc is not None and desc.value_kind != "numeric"):
            raise ApiError(409, "no_reference", f"{feature_id!r} has no single numeric reference range")
        column_id = column_ids[0]
        ref = state.feature_ref(selected, column_id)
        if not ref.defined:
            raise ApiError(409, "no_reference", f"no reference range for {feature_id!r}")
        x = state.matrix.vector(surgery["surgery_id"])
        original = state.explanation(patient_id, target, selected)
        background = state.background_rows(selected)
        method = original.method["name"]
        try:
            result = whatif(
                model, x, state.matrix.column_ids, column_id, ref, background,
                original=original, method=method,
                n_samples=state.config.n_samples, seed=state.config.seed,
                exact_limit=state.config.exact_limit,
            )
        except NotAbnormalError as exc:
            raise ApiError(409, "not_abnormal", str(exc))
        except UndefinedRangeError as exc:
            raise ApiError(409, "no_reference", str(exc))
        return {"patient_id": patient_id, "target": target,
                "cohort_id": selected.cohort_id, **result.to_dict()}

    if state.config.static_dir and Path(state.config.static_dir).is_dir():
        from fastapi.staticfiles import StaticFiles

        app.mount("/", StaticFiles(directory=state.config.static_dir, html=True), name="ui")

    return app
