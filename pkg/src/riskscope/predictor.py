"""Binary complication-risk classifier: L2 logistic regression trained by
gradient descent, with train-mean imputation and per-feature standardization.

One model is trained per complication target; the Shapley and what-if layers
treat it as a black box through `predict_risk`.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy.special import expit
from sklearn.base import BaseEstimator

from .validation import check_matrix, check_labels, check_vector


def logistic_loss_and_gradient(weights: np.ndarray, bias: float, X: np.ndarray, y: np.ndarray, l2: float):
    """Mean logistic loss with L2 penalty on weights (bias unpenalized)."""
    z = X @ weights + bias
    # log(1 + e^z) - y z, computed stably
    loss = float(np.mean(np.logaddexp(0.0, z) - y * z) + 0.5 * l2 * float(weights @ weights))
    p = expit(z)
    residual = (p - y) / len(y)
    grad_w = X.T @ residual + l2 * weights
    grad_b = float(residual.sum())
    return loss, grad_w, grad_b


class LogisticRiskModel(BaseEstimator):
    """L2-regularized logistic regression over a (possibly missing-valued) matrix.

    Missing entries are NaN; they are imputed to the training mean, which
    standardizes to zero and therefore contributes nothing to the logit.
    Zero-variance columns are dropped (weight pinned at 0) and recorded.
    """

    def __init__(self, l2_strength=1e-2, learning_rate=1.0, max_epochs=3000,
                 tol=1e-10, seed=0, threshold=0.5):
        self.l2_strength = l2_strength
        self.learning_rate = learning_rate
        self.max_epochs = max_epochs
        self.tol = tol
        self.seed = seed
        self.threshold = threshold

    # -- fitting -------------------------------------------------------------

    def fit(self, X, y, feature_ids: Optional[Sequence[str]] = None, target_label: Optional[str] = None):
        X = check_matrix(X)
        y = check_labels(y, X.shape[0])
        if X.shape[0] == 0 or X.shape[1] == 0:
            raise ValueError("empty matrix")
        if len(np.unique(y)) < 2:
            raise ValueError("degenerate labels: need both classes to train")

        n, m = X.shape
        means = np.zeros(m)
        scales = np.ones(m)
        dropped = []
        for j in range(m):
            col = X[:, j]
            finite = col[~np.isnan(col)]
            if finite.size >= 1:
                means[j] = float(finite.mean())
            sd = float(finite.std(ddof=1)) if finite.size >= 2 else 0.0
            if sd > 0.0:
                scales[j] = sd
            else:
                dropped.append(j)

        Xs = self._standardize(X, means, scales)
        keep = np.ones(m, dtype=bool)
        keep[dropped] = False
        Xs[:, ~keep] = 0.0

        w = np.zeros(m)
        b = 0.0
        lr = float(self.learning_rate)
        loss, grad_w, grad_b = logistic_loss_and_gradient(w, b, Xs, y, self.l2_strength)
        epochs = 0
        for _ in range(int(self.max_epochs)):
            grad_w[~keep] = 0.0
            w_new = w - lr * grad_w
            b_new = b - lr * grad_b
            new_loss, new_grad_w, new_grad_b = logistic_loss_and_gradient(
                w_new, b_new, Xs, y, self.l2_strength
            )
            if new_loss > loss and lr > 1e-8:
                lr *= 0.5  # overshoot: retry the step at half the rate
                continue
            epochs += 1
            improved = loss - new_loss
            w, b, loss = w_new, b_new, new_loss
            grad_w, grad_b = new_grad_w, new_grad_b
            if 0.0 <= improved < self.tol * max(1.0, abs(loss)):
                break

        self.coef_ = w
        self.intercept_ = b
        self.feature_means_ = means
        self.feature_scales_ = scales
        self.dropped_features_ = dropped
        self.n_epochs_ = epochs
        self.final_loss_ = loss
        self.classes_ = np.array([0, 1])
        self.n_features_in_ = m
        self.feature_ids_ = list(feature_ids) if feature_ids is not None else None
        self.target_label_ = target_label
        return self

    @staticmethod
    def _standardize(X, means, scales):
        X = np.where(np.isnan(X), means, X)
        return (X - means) / scales

    def _check_fitted(self):
        if not hasattr(self, "coef_"):
            raise RuntimeError("model is not fitted")

    # -- prediction ------------------------------------------------------------

    def predict_risk(self, X) -> np.ndarray:
        """Risk probability in (0, 1) per row; accepts a single vector too."""
        self._check_fitted()
        X = np.asarray(X, dtype=float)
        single = X.ndim == 1
        if single:
            X = X.reshape(1, -1)
        X = check_vector(X, self.n_features_in_)
        Xs = self._standardize(X, self.feature_means_, self.feature_scales_)
        risk = expit(Xs @ self.coef_ + self.intercept_)
        return float(risk[0]) if single else risk

    def predict_proba(self, X) -> np.ndarray:
        risk = np.atleast_1d(self.predict_risk(X))
        return np.column_stack([1.0 - risk, risk])

    def predict(self, X) -> np.ndarray:
        risk = np.atleast_1d(self.predict_risk(X))
        return (risk >= self.threshold).astype(int)

    def decision_function(self, X) -> np.ndarray:
        """Logit of the risk probability per row."""
        self._check_fitted()
        X = np.asarray(X, dtype=float)
        single = X.ndim == 1
        if single:
            X = X.reshape(1, -1)
        Xs = self._standardize(X, self.feature_means_, self.feature_scales_)
        z = Xs @ self.coef_ + self.intercept_
        return float(z[0]) if single else z

    def logit_terms(self, x: np.ndarray) -> tuple[np.ndarray, float]:
        """Per-feature additive logit terms for one vector, plus the intercept.

        The logit decomposes exactly as sum(terms) + intercept; missing values
        produce zero terms by the imputation rule.
        """
        self._check_fitted()
        x = np.asarray(x, dtype=float).reshape(-1)
        xs = self._standardize(x.reshape(1, -1), self.feature_means_, self.feature_scales_)[0]
        return xs * self.coef_, float(self.intercept_)

    def logit_terms_matrix(self, X) -> np.ndarray:
        """Row-wise per-feature logit terms (no intercept)."""
        self._check_fitted()
        X = np.asarray(X, dtype=float)
        Xs = self._standardize(X, self.feature_means_, self.feature_scales_)
        return Xs * self.coef_

    # -- serialization ---------------------------------------------------------

    def to_dict(self) -> dict:
        self._check_fitted()
        return {
            "target_label": self.target_label_,
            "feature_ids": self.feature_ids_,
            "weights": self.coef_.tolist(),
            "bias": self.intercept_,
            "standardization": {
                "means": self.feature_means_.tolist(),
                "scales": self.feature_scales_.tolist(),
            },
            "imputation": self.feature_means_.tolist(),
            "dropped_features": self.dropped_features_,
            "threshold": self.threshold,
            "train_config": self.get_params(),
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "LogisticRiskModel":
        model = cls(**payload.get("train_config", {}))
        model.coef_ = np.asarray(payload["weights"], dtype=float)
        model.intercept_ = float(payload["bias"])
        model.feature_means_ = np.asarray(payload["standardization"]["means"], dtype=float)
        model.feature_scales_ = np.asarray(payload["standardization"]["scales"], dtype=float)
        model.dropped_features_ = list(payload.get("dropped_features", []))
        model.classes_ = np.array([0, 1])
        model.n_features_in_ = len(model.coef_)
        model.feature_ids_ = payload.get("feature_ids")
        model.target_label_ = payload.get("target_label")
        model.threshold = payload.get("threshold", model.threshold)
        return model

    def save(self, path: Path | str):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: Path | str) -> "LogisticRiskModel":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def auc_score(y_true, scores) -> float:
    """ROC AUC via the rank-statistic formulation; ties contribute 1/2."""
    y = np.asarray(y_true, dtype=float)
    s = np.asarray(scores, dtype=float)
    n_pos = int((y == 1).sum())
    n_neg = int((y == 0).sum())
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC needs both classes")
    order = np.argsort(s, kind="mergesort")
    ranks = np.empty(len(s))
    i = 0
    while i < len(s):
        j = i
        while j + 1 < len(s) and s[order[j + 1]] == s[order[i]]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0  # average 1-based rank
        i = j + 1
    u = ranks[y == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def stratified_folds(y, n_folds: int, seed: int) -> list[np.ndarray]:
    """Deterministic stratified fold assignment (round-robin after shuffle)."""
    y = np.asarray(y)
    if n_folds < 2:
        raise ValueError("cv_folds must be >= 2")
    rng = np.random.default_rng(seed)
    folds: list[list[int]] = [[] for _ in range(n_folds)]
    for cls in (1, 0):
        idx = np.flatnonzero(y == cls)
        if len(idx) < n_folds:
            raise ValueError(
                f"class {cls} has {len(idx)} rows; stratified {n_folds}-fold CV needs at least {n_folds}"
            )
        rng.shuffle(idx)
        for i, row in enumerate(idx):
            folds[i % n_folds].append(int(row))
    return [np.sort(np.array(f, dtype=int)) for f in folds]


@dataclass
class CVResult:
    mean_auc: float
    fold_aucs: list[float]

    def to_dict(self) -> dict:
        return {"mean_auc": self.mean_auc, "fold_aucs": self.fold_aucs}


def cross_validate(X, y, n_folds: int = 10, seed: int = 0, model: Optional[LogisticRiskModel] = None) -> CVResult:
    """Stratified k-fold CV reporting per-fold and mean ROC AUC."""
    X = check_matrix(X)
    y = check_labels(y, X.shape[0])
    base = model if model is not None else LogisticRiskModel(seed=seed)
    folds = stratified_folds(y, n_folds, seed)
    aucs = []
    for fold in folds:
        mask = np.ones(len(y), dtype=bool)
        mask[fold] = False
        est = LogisticRiskModel(**base.get_params())
        est.fit(X[mask], y[mask])
        scores = est.predict_risk(X[fold])
        aucs.append(auc_score(y[fold], scores))
    return CVResult(mean_auc=float(np.mean(aucs)), fold_aucs=aucs)
