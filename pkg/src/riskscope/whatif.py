"""Reference-clamped what-if analysis for a single abnormal feature.

The abnormal coordinate is moved the minimum distance into its reference
range (to the nearest bound); the prediction and the full contribution set
are recomputed on the modified vector with the same method, seed, and
background as the original explanation.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .cohort import ReferenceRange, flag
from .shapley import ContributionSet, shap_exact, shap_sampled


class NotAbnormalError(ValueError):
    """The feature is already within its reference range."""


class UndefinedRangeError(ValueError):
    """No reference range exists for the feature."""


@dataclass
class WhatIfResult:
    feature_id: str
    original_value: float
    clamped_value: float
    original_prediction: float
    new_prediction: float
    original_contributions: ContributionSet
    new_contributions: ContributionSet

    @property
    def prediction_delta(self) -> float:
        return self.new_prediction - self.original_prediction

    @property
    def contribution_delta(self) -> float:
        return (
            self.new_contributions.contributions[self.feature_id]
            - self.original_contributions.contributions[self.feature_id]
        )

    def to_dict(self) -> dict:
        return {
            "feature_id": self.feature_id,
            "original_value": self.original_value,
            "clamped_value": self.clamped_value,
            "original_prediction": self.original_prediction,
            "new_prediction": self.new_prediction,
            "prediction_delta": self.prediction_delta,
            "contribution_delta": self.contribution_delta,
            "original": self.original_contributions.to_dict(),
            "modified": self.new_contributions.to_dict(),
        }


def whatif(
    model,
    x: np.ndarray,
    feature_ids: list[str],
    feature_id: str,
    reference_range: Optional[ReferenceRange],
    background: np.ndarray,
    original: Optional[ContributionSet] = None,
    method: str = "exact",
    n_samples: int = 2000,
    seed: int = 0,
    exact_limit: int = 14,
) -> WhatIfResult:
    """Clamp one out-of-range coordinate to the nearest bound and re-explain."""
    if reference_range is None or not reference_range.defined:
        raise UndefinedRangeError(f"no reference range for {feature_id!r}")
    x = np.asarray(x, dtype=float).reshape(-1)
    idx = feature_ids.index(feature_id)
    value = x[idx]
    if np.isnan(value):
        raise NotAbnormalError(f"feature {feature_id!r} is missing for this patient")
    side = flag(float(value), reference_range)
    if side == "within":
        raise NotAbnormalError(f"feature {feature_id!r} not abnormal")
    clamped = reference_range.high if side == "above" else reference_range.low

    def explain(vector, instance_suffix):
        if method == "exact":
            return shap_exact(
                model, vector, background, feature_ids=feature_ids,
                exact_limit=exact_limit, instance_id=instance_suffix,
            )
        return shap_sampled(
            model, vector, background, n_samples=n_samples, seed=seed,
            feature_ids=feature_ids, instance_id=instance_suffix,
        )

    if original is None:
        original = explain(x, None)
    modified = x.copy()
    modified[idx] = clamped
    new_set = explain(modified, None)
    return WhatIfResult(
        feature_id=feature_id,
        original_value=float(value),
        clamped_value=float(clamped),
        original_prediction=float(model.predict_risk(x)),
        new_prediction=float(model.predict_risk(modified)),
        original_contributions=original,
        new_contributions=new_set,
    )
