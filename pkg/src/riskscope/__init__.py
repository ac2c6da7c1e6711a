"""Explainable post-surgical complication risk engine.

Pipeline: load (or synthesize) a relational EHR-style dataset, synthesize
lineage-tracked features, train per-complication logistic risk models, and
explain predictions with Shapley contributions, cohort reference evidence,
and occlusion-based record influence -- all served over an HTTP API.
"""

from .store import (
    Dataset,
    DatasetError,
    LoadError,
    Manifest,
    RecordEvent,
    RecordSeries,
    SchemaError,
    TableSchema,
    TimeWindow,
    UnknownPatientError,
    load_dataset,
    save_dataset,
)
from .synth import GenerationReport, PlantedEffect, SynthConfig, generate
from .features import (
    AggregationKind,
    FeatureDescriptor,
    FeatureMatrix,
    FeatureSynthesizer,
    aggregate,
    build_matrix,
    compute_feature,
    resolve_lineage,
    synthesize_descriptors,
)
from .predictor import LogisticRiskModel, auc_score, cross_validate
from .shapley import (
    ContributionSet,
    HierarchyNode,
    build_hierarchy,
    group_rollup,
    shap_exact,
    shap_sampled,
    sort_filter,
)
from .influence import (
    InfluenceArray,
    MergedOverlay,
    Segment,
    SegmentSet,
    dynamic_threshold,
    influential_segments,
    merge_overlays,
    occlusion_influence,
)
from .cohort import (
    Cohort,
    CohortSelector,
    Predicate,
    ReferenceRange,
    distribution,
    feature_reference,
    flag,
    record_reference,
    select_cohort,
    split_risk,
    timeline_summary,
)
from .whatif import NotAbnormalError, UndefinedRangeError, WhatIfResult, whatif

__version__ = "0.1.0"
