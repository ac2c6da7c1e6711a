"""Occlusion-based record influence and influential-segment extraction.

For a dynamic feature over a record series, each sliding window is snapped
onto the series' least-squares line and the feature recomputed; the relative
change is accumulated onto the occluded indices. A non-parametric dynamic
threshold then extracts the runs of exceptionally influential records,
filtered by the direction that pushed the feature away from its reference
range.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .features import AggregationKind, FeatureDescriptor, aggregate
from .store import RecordSeries

RELATIVE_EPS = 1e-9
# influence below this is float residue (e.g. affine series), not signal
NOISE_FLOOR = 1e-10
DEFAULT_Z_GRID = tuple(np.arange(2.0, 10.0 + 1e-9, 0.5))


@dataclass
class InfluenceArray:
    values: np.ndarray  # aligned with the series points
    window_size: int
    feature_id: str
    feature_value: float


@dataclass
class Segment:
    start: int  # inclusive point indices
    end: int
    start_ts: object
    end_ts: object
    mean_influence: float

    def to_dict(self) -> dict:
        from .store import format_timestamp

        return {
            "start": self.start,
            "end": self.end,
            "start_ts": format_timestamp(self.start_ts),
            "end_ts": format_timestamp(self.end_ts),
            "mean_influence": self.mean_influence,
        }


@dataclass
class SegmentSet:
    feature_id: str
    patient_id: str
    item_id: str
    direction: str  # side of the reference range the feature fell on
    theta: Optional[float]
    z: Optional[float]
    segments: list[Segment] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "feature_id": self.feature_id,
            "patient_id": self.patient_id,
            "item_id": self.item_id,
            "direction": self.direction,
            "theta": self.theta,
            "z": self.z,
            "segments": [s.to_dict() for s in self.segments],
        }


@dataclass
class OverlayInterval:
    start: int
    end: int
    multiplicity: int
    start_ts: object = None
    end_ts: object = None

    def to_dict(self) -> dict:
        from .store import format_timestamp

        return {
            "start": self.start,
            "end": self.end,
            "multiplicity": self.multiplicity,
            "start_ts": format_timestamp(self.start_ts) if self.start_ts else None,
            "end_ts": format_timestamp(self.end_ts) if self.end_ts else None,
        }


@dataclass
class MergedOverlay:
    patient_id: str
    item_id: str
    intervals: list[OverlayInterval] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "patient_id": self.patient_id,
            "item_id": self.item_id,
            "intervals": [iv.to_dict() for iv in self.intervals],
        }


def linear_fit_window(times: np.ndarray, values: np.ndarray) -> np.ndarray:
    """Least-squares line through the given points, evaluated at their times.

    Degenerate input (one point, or identical timestamps) falls back to the
    mean, which is the least-squares constant.
    """
    tc = times - times.mean()
    denom = float(tc @ tc)
    mean = values.mean()
    if denom == 0.0:
        return np.full_like(values, mean)
    slope = float(tc @ (values - mean)) / denom
    return mean + slope * tc


def default_window_size(series: RecordSeries, target_minutes: float = 5.0, minimum: int = 3) -> int:
    """Window spanning ~`target_minutes` of the series' median sampling interval."""
    n = len(series)
    if n < 2:
        return minimum
    hours = np.asarray(series.hours_since_start())
    gaps = np.diff(hours)
    median_gap_minutes = float(np.median(gaps)) * 60.0
    if median_gap_minutes <= 0:
        return minimum
    k = int(round(target_minutes / median_gap_minutes))
    return max(minimum, min(n, k))


def occlusion_influence(
    series: RecordSeries, descriptor: FeatureDescriptor, k: int, fill_mode: str = "line"
) -> InfluenceArray:
    """Relative feature change attributed to each record by window occlusion.

    Every window of k consecutive points (stride 1) is snapped onto the
    least-squares line of the whole series (which removes the window's local
    structure while staying smooth), the feature is recomputed on the
    modified series, and (x - x') / |x| is added to the window's indices
    (absolute change when |x| < 1e-9). Interior indices therefore accumulate
    up to k increments. A window-local fit would be a no-op for MEAN and
    TREND -- its residuals sum to zero and are orthogonal to time -- so the
    fill line must come from outside the window alone.

    fill_mode="mean" (series-mean fill) exists only for sensitivity
    comparison in tests; production callers use the default line fill.
    """
    if descriptor.kind != "dynamic":
        raise ValueError(f"{descriptor.feature_id}: occlusion requires a dynamic feature")
    T = len(series)
    if T < 2:
        raise ValueError("series must have at least 2 points")
    if not 1 <= k <= T:
        raise ValueError(f"window size k={k} outside [1, {T}]")

    times = np.asarray(series.hours_since_start(), dtype=float)
    values = np.asarray(series.values(), dtype=float)
    x = aggregate(descriptor.aggregation, times, values)
    if x is None:
        raise ValueError(f"{descriptor.feature_id}: feature undefined on this series")

    if fill_mode == "line":
        fill = linear_fit_window(times, values)
    elif fill_mode == "mean":
        fill = np.full_like(values, values.mean())
    else:
        raise ValueError(f"unknown fill mode {fill_mode!r}")
    v = np.zeros(T)
    scratch = values.copy()
    for t in range(0, T - k + 1):
        window = slice(t, t + k)
        scratch[window] = fill[window]
        x_prime = aggregate(descriptor.aggregation, times, scratch)
        scratch[window] = values[window]
        delta = x - x_prime
        if abs(x) >= RELATIVE_EPS:
            delta /= abs(x)
        v[window] += delta
    return InfluenceArray(values=v, window_size=k, feature_id=descriptor.feature_id, feature_value=float(x))


def _runs(above: np.ndarray) -> list[tuple[int, int]]:
    runs = []
    start = None
    for i, flag in enumerate(above):
        if flag and start is None:
            start = i
        elif not flag and start is not None:
            runs.append((start, i - 1))
            start = None
    if start is not None:
        runs.append((start, len(above) - 1))
    return runs


def dynamic_threshold(v_input, z_grid: Sequence[float] = DEFAULT_Z_GRID) -> Optional[tuple[float, float]]:
    """Pick theta = mu + z*sigma maximizing the percent drop in mean and SD
    per removed point/segment; ties break toward larger z.

    Returns (theta, z), or None when sigma is zero or no candidate threshold
    keeps any point above it.
    """
    v = np.asarray(v_input, dtype=float)
    if v.size == 0:
        raise ValueError("empty influence array")
    mu = float(v.mean())
    sigma = float(v.std())
    if sigma == 0.0:
        return None

    best = None
    for z in sorted(z_grid):
        theta = mu + z * sigma
        above = v > theta
        n_above = int(above.sum())
        if n_above == 0:
            continue
        kept = v[~above]
        delta_mu = mu - float(kept.mean())
        delta_sigma = sigma - float(kept.std())
        denom = n_above + len(_runs(above)) ** 2
        try:
            score = (delta_mu / mu + delta_sigma / sigma) / denom
        except ZeroDivisionError:  # mu exactly 0: percent decrease undefined
            continue
        if not np.isfinite(score):
            continue
        if best is None or score >= best[0]:
            best = (score, theta, float(z))
    if best is None:
        return None
    return best[1], best[2]


def influential_segments(
    series: RecordSeries,
    descriptor: FeatureDescriptor,
    feature_value: float,
    reference_range,
    k: Optional[int] = None,
    z_grid: Sequence[float] = DEFAULT_Z_GRID,
) -> SegmentSet:
    """Extract the record segments that pushed the feature away from its range.

    Above-range features threshold the influence array as-is (what raised
    them), below-range features threshold its negation, in-range (or
    range-less) features threshold the absolute influence.
    """
    if k is None:
        k = default_window_size(series)
    influence = occlusion_influence(series, descriptor, k)
    v = influence.values

    direction = "within"
    if reference_range is not None and getattr(reference_range, "defined", True):
        if feature_value > reference_range.high:
            direction = "above"
        elif feature_value < reference_range.low:
            direction = "below"
    if direction == "above":
        working = v
    elif direction == "below":
        working = -v
    else:
        working = np.abs(v)

    result = SegmentSet(
        feature_id=descriptor.feature_id,
        patient_id=series.patient_id,
        item_id=series.item_id,
        direction=direction,
        theta=None,
        z=None,
    )
    if float(np.max(np.abs(working))) <= NOISE_FLOOR:
        return result
    choice = dynamic_threshold(working, z_grid)
    if choice is None:
        return result
    theta, z = choice
    result.theta = theta
    result.z = z
    points = series.points
    for start, end in _runs(working > theta):
        result.segments.append(
            Segment(
                start=start,
                end=end,
                start_ts=points[start].ts,
                end_ts=points[end].ts,
                mean_influence=float(working[start:end + 1].mean()),
            )
        )
    return result


def merge_overlays(segment_sets: Sequence[SegmentSet], series: RecordSeries) -> MergedOverlay:
    """Partition the union of sibling features' segments, counting coverage.

    All sets must come from the same (patient, item) series; interval
    boundaries are point indices, and each output interval carries how many
    input features' segments cover it.
    """
    if not segment_sets:
        return MergedOverlay(patient_id=series.patient_id, item_id=series.item_id)
    for s in segment_sets:
        if (s.patient_id, s.item_id) != (series.patient_id, series.item_id):
            raise ValueError(
                f"segment set for ({s.patient_id}, {s.item_id}) does not match "
                f"series ({series.patient_id}, {series.item_id})"
            )
    delta: dict[int, int] = {}
    for s in segment_sets:
        for seg in s.segments:
            delta[seg.start] = delta.get(seg.start, 0) + 1
            delta[seg.end + 1] = delta.get(seg.end + 1, 0) - 1
    overlay = MergedOverlay(patient_id=series.patient_id, item_id=series.item_id)
    if not delta:
        return overlay
    boundaries = sorted(delta)
    depth = 0
    points = series.points
    for idx, boundary in enumerate(boundaries[:-1]):
        depth += delta[boundary]
        if depth > 0:
            start, end = boundary, boundaries[idx + 1] - 1
            previous = overlay.intervals[-1] if overlay.intervals else None
            if previous is not None and previous.multiplicity == depth and previous.end + 1 == start:
                previous.end = end
                previous.end_ts = points[end].ts if end < len(points) else None
            else:
                overlay.intervals.append(
                    OverlayInterval(
                        start=start,
                        end=end,
                        multiplicity=depth,
                        start_ts=points[start].ts if start < len(points) else None,
                        end_ts=points[end].ts if end < len(points) else None,
                    )
                )
    return overlay
