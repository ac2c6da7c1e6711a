"""Per-prediction Shapley contributions and hierarchy rollups.

The value function is interventional: v(S) is the mean prediction over
background rows with the explained vector substituted on the coordinates in
S. Exact mode enumerates all subsets (feasible up to `exact_limit` features);
sampled mode uses permutation sampling with a residual-redistribution step so
the additive identity base + sum(phi) = prediction always reconciles.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .validation import check_matrix

DEFAULT_EXACT_LIMIT = 14


@dataclass
class ContributionSet:
    instance_id: Optional[str]
    target_label: Optional[str]
    base_value: float
    prediction: float
    contributions: dict[str, float]
    method: dict

    @property
    def phi_total(self) -> float:
        return float(sum(self.contributions.values()))

    def additivity_gap(self) -> float:
        return abs(self.base_value + self.phi_total - self.prediction)

    def to_dict(self) -> dict:
        return {
            "instance_id": self.instance_id,
            "target_label": self.target_label,
            "base_value": self.base_value,
            "prediction": self.prediction,
            "method": self.method,
            "contributions": [
                {"feature_id": k, "phi": v} for k, v in self.contributions.items()
            ],
        }


def _score_fn(model, output: str):
    if output == "probability":
        return lambda X: np.atleast_1d(model.predict_risk(X))
    if output == "logit":
        return lambda X: np.atleast_1d(model.decision_function(X))
    raise ValueError(f"unknown value-function output {output!r}")


def _subset_bits(m: int) -> tuple[np.ndarray, np.ndarray]:
    masks = np.arange(2 ** m, dtype=np.int64)
    bits = ((masks[:, None] >> np.arange(m)) & 1).astype(np.float64)
    return bits, bits.sum(axis=1).astype(int)


def _shapley_weights(m: int) -> np.ndarray:
    # weight of a marginal contribution on top of a subset of size s
    fact = [math.factorial(k) for k in range(m + 1)]
    return np.array([fact[s] * fact[m - s - 1] / fact[m] for s in range(m)])


def _subset_values_linear(model, x, background, bits, output: str) -> np.ndarray:
    terms_x, intercept = model.logit_terms(x)
    R = model.logit_terms_matrix(background)
    full_bg_logit = R.sum(axis=1) + intercept
    L = bits @ (terms_x[None, :] - R).T + full_bg_logit[None, :]
    if output == "logit":
        return L.mean(axis=1)
    from scipy.special import expit

    return expit(L).mean(axis=1)


def _subset_values_blackbox(model, x, background, bits, output: str) -> np.ndarray:
    score = _score_fn(model, output)
    n_subsets, m = bits.shape
    B = background.shape[0]
    v = np.empty(n_subsets)
    chunk = max(1, 262144 // max(1, B))
    mask_bool = bits.astype(bool)
    for start in range(0, n_subsets, chunk):
        sl = slice(start, min(start + chunk, n_subsets))
        composed = np.where(mask_bool[sl][:, None, :], x[None, None, :], background[None, :, :])
        scores = score(composed.reshape(-1, m)).reshape(-1, B)
        v[sl] = scores.mean(axis=1)
    return v


def shap_exact(
    model,
    x,
    background,
    feature_ids: Optional[Sequence[str]] = None,
    exact_limit: int = DEFAULT_EXACT_LIMIT,
    output: str = "probability",
    backend: str = "auto",
    instance_id: Optional[str] = None,
    target_label: Optional[str] = None,
) -> ContributionSet:
    """Exact Shapley values by full subset enumeration.

    `backend="linear"` exploits the model's additive logit decomposition and
    is the default for the built-in classifier; `backend="blackbox"` composes
    rows explicitly and only calls the model's prediction surface. Both give
    the same values. `output="logit"` runs the value function on the logit
    scale (verification mode for the linear closed form).
    """
    x = np.asarray(x, dtype=float).reshape(-1)
    background = check_matrix(background)
    m = len(x)
    if background.shape[0] == 0:
        raise ValueError("background must be nonempty")
    if background.shape[1] != m:
        raise ValueError("background width does not match vector length")
    if m > exact_limit:
        raise ValueError(
            f"{m} features exceeds exact_limit={exact_limit}; use shap_sampled"
        )

    bits, sizes = _subset_bits(m)
    if backend == "auto":
        backend = "linear" if hasattr(model, "logit_terms_matrix") else "blackbox"
    if backend == "linear":
        v = _subset_values_linear(model, x, background, bits, output)
    elif backend == "blackbox":
        v = _subset_values_blackbox(model, x, background, bits, output)
    else:
        raise ValueError(f"unknown backend {backend!r}")

    weights = _shapley_weights(m)
    masks = np.arange(2 ** m, dtype=np.int64)
    phi = np.empty(m)
    for i in range(m):
        without = masks[(masks >> i) & 1 == 0]
        gains = v[without + (1 << i)] - v[without]
        phi[i] = float(weights[sizes[without]] @ gains)

    ids = _feature_keys(feature_ids, m)
    return ContributionSet(
        instance_id=instance_id,
        target_label=target_label,
        base_value=float(v[0]),
        prediction=float(v[-1]),
        contributions={k: float(p) for k, p in zip(ids, phi)},
        method={"name": "exact", "output": output, "backend": backend},
    )


def shap_sampled(
    model,
    x,
    background,
    n_samples: int = 2000,
    seed: int = 0,
    feature_ids: Optional[Sequence[str]] = None,
    output: str = "probability",
    instance_id: Optional[str] = None,
    target_label: Optional[str] = None,
) -> ContributionSet:
    """Permutation-sampling Shapley estimate, deterministic under the seed.

    The additivity residual left by sampling noise is redistributed across
    features proportionally to |phi| and recorded in the method metadata, so
    base + sum(phi) equals the prediction to float precision.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    x = np.asarray(x, dtype=float).reshape(-1)
    background = check_matrix(background)
    if background.shape[0] == 0:
        raise ValueError("background must be nonempty")
    m = len(x)
    score = _score_fn(model, output)
    rng = np.random.default_rng(seed)
    phi = np.zeros(m)
    rows = np.empty((m + 1, m))
    for _ in range(int(n_samples)):
        perm = rng.permutation(m)
        b = background[int(rng.integers(background.shape[0]))]
        rows[0] = b
        cur = b.copy()
        for j, idx in enumerate(perm):
            cur[idx] = x[idx]
            rows[j + 1] = cur
        scores = score(rows)
        phi[perm] += np.diff(scores)
    phi /= n_samples

    base = float(score(background).mean())
    prediction = float(score(x.reshape(1, -1))[0])
    residual = prediction - base - float(phi.sum())
    total = float(np.abs(phi).sum())
    if total > 0.0:
        phi = phi + residual * np.abs(phi) / total
    elif residual != 0.0:
        phi = phi + residual / m

    ids = _feature_keys(feature_ids, m)
    return ContributionSet(
        instance_id=instance_id,
        target_label=target_label,
        base_value=base,
        prediction=prediction,
        contributions={k: float(p) for k, p in zip(ids, phi)},
        method={
            "name": "sampled",
            "n_samples": int(n_samples),
            "seed": int(seed),
            "output": output,
            "residual": residual,
        },
    )


def _feature_keys(feature_ids, m: int) -> list[str]:
    if feature_ids is None:
        return [f"f{i}" for i in range(m)]
    ids = list(feature_ids)
    if len(ids) != m:
        raise ValueError("feature_ids length does not match vector length")
    return ids


# -- hierarchy ------------------------------------------------------------------


@dataclass
class HierarchyNode:
    label: str
    feature_id: Optional[str] = None  # set on leaves
    column_ids: list[str] = field(default_factory=list)
    children: list["HierarchyNode"] = field(default_factory=list)
    contribution: float = 0.0

    @property
    def is_leaf(self) -> bool:
        return self.feature_id is not None

    def leaves(self) -> list["HierarchyNode"]:
        if self.is_leaf:
            return [self]
        out = []
        for child in self.children:
            out.extend(child.leaves())
        return out

    def to_dict(self) -> dict:
        payload = {"label": self.label, "group_contribution": self.contribution}
        if self.is_leaf:
            payload["feature_id"] = self.feature_id
            payload["column_ids"] = list(self.column_ids)
        else:
            payload["children"] = [c.to_dict() for c in self.children]
        return payload


def build_hierarchy(matrix) -> HierarchyNode:
    """Three-level display tree (phase / group / leaf) from matrix descriptors.

    A leaf is one display feature; a categorical leaf owns every one-hot
    column expanded from it.
    """
    root = HierarchyNode(label="root")
    index: dict[tuple, HierarchyNode] = {}
    for fid, desc in matrix.descriptors.items():
        phase, group, leaf_label = desc.hierarchy_path
        phase_node = index.get((phase,))
        if phase_node is None:
            phase_node = HierarchyNode(label=phase)
            index[(phase,)] = phase_node
            root.children.append(phase_node)
        group_node = index.get((phase, group))
        if group_node is None:
            group_node = HierarchyNode(label=group)
            index[(phase, group)] = group_node
            phase_node.children.append(group_node)
        group_node.children.append(
            HierarchyNode(
                label=leaf_label,
                feature_id=fid,
                column_ids=matrix.columns_for_descriptor(fid),
            )
        )
    return root


def group_rollup(root: HierarchyNode, contributions: dict[str, float]) -> HierarchyNode:
    """Annotate every node with the exact sum of its descendant contributions."""
    known = set()
    for leaf in root.leaves():
        known.update(leaf.column_ids)
    orphans = set(contributions) - known
    if orphans:
        raise ValueError(f"orphan feature ids not present in any leaf: {sorted(orphans)}")

    def roll(node: HierarchyNode) -> float:
        if node.is_leaf:
            node.contribution = float(sum(contributions.get(c, 0.0) for c in node.column_ids))
        else:
            node.contribution = float(sum(roll(child) for child in node.children))
        return node.contribution

    roll(root)
    return root


def sort_filter(
    nodes: Sequence[HierarchyNode],
    sort_key: str = "abs_contribution",
    min_abs: float = 0.0,
    top_k: Optional[int] = None,
) -> list[HierarchyNode]:
    """Stable sort + filter of one display level."""
    kept = [n for n in nodes if abs(n.contribution) >= min_abs]
    if sort_key == "contribution":
        kept = sorted(kept, key=lambda n: -n.contribution)
    elif sort_key == "abs_contribution":
        kept = sorted(kept, key=lambda n: -abs(n.contribution))
    elif sort_key == "name":
        kept = sorted(kept, key=lambda n: n.label)
    else:
        raise ValueError(f"unknown sort key {sort_key!r}")
    if top_k is not None:
        kept = kept[:top_k]
    return kept
