/** Typed client for the risk-explanation HTTP API. The UI derives every
 * number from these payloads and computes no statistics of its own. */

export type Flag = "below" | "within" | "above";

export interface Meta {
  patient_count: number;
  targets: string[];
  feature_columns: number;
  intervals: string[];
  default_cohort_id: string;
  items: Record<string, string[]>;
  threshold: number;
}

export interface PatientEntry {
  patient_id: string;
  surgery_id: string;
  risks: Record<string, number>;
  predictions: Record<string, boolean>;
}

export interface ReferenceRange {
  mean: number;
  sd: number;
  low: number;
  high: number;
  n: number;
}

export interface ProfileField {
  value: number | string | null;
  reference?: ReferenceRange | null;
  flag?: Flag;
}

export interface Profile {
  patient_id: string;
  patients: Record<string, ProfileField>;
  admissions: Record<string, ProfileField>;
  surgeries: Record<string, ProfileField>;
  labels: Record<string, boolean>;
}

export interface CohortSummary {
  cohort_id: string;
  size: number;
  low_risk_size: number;
  high_risk_size: number;
}

export interface FeatureLeaf {
  label: string;
  feature_id: string;
  display_name: string;
  kind: "static" | "dynamic";
  value_kind: "numeric" | "categorical";
  source_entity: string;
  item_id: string | null;
  aggregation: string | null;
  window: string | null;
  column_ids: string[];
  contribution: number;
  value: number | string | null;
  reference: ReferenceRange | null;
  flag: Flag | null;
  has_reference?: boolean;
}

export interface FeatureGroup {
  label: string;
  group_contribution: number;
  children: FeatureNode[];
}

export type FeatureNode = FeatureGroup | FeatureLeaf;

export function isLeaf(node: FeatureNode): node is FeatureLeaf {
  return (node as FeatureLeaf).feature_id !== undefined;
}

export interface FeaturesPayload {
  patient_id: string;
  target: string;
  cohort_id: string;
  prediction: number;
  base_value: number;
  method: Record<string, unknown>;
  root: FeatureGroup;
}

export interface Distribution {
  kind: "numeric" | "categorical";
  patient_value: number | string | null;
  low_counts: number[];
  high_counts: number[];
  bin_edges?: number[];
  categories?: string[];
}

export interface DistributionPayload {
  patient_id: string;
  feature_id: string;
  cohort_id: string;
  distribution: Distribution;
}

export interface SeriesPoint {
  ts: string;
  value: number;
  flag: Flag;
}

export interface Segment {
  start: number;
  end: number;
  start_ts: string;
  end_ts: string;
  mean_influence: number;
}

export interface SegmentSet {
  feature_id: string;
  patient_id: string;
  item_id: string;
  direction: string;
  theta: number | null;
  z: number | null;
  segments: Segment[];
}

export interface OverlayInterval {
  start: number;
  end: number;
  multiplicity: number;
  start_ts: string | null;
  end_ts: string | null;
}

export interface MergedOverlay {
  patient_id: string;
  item_id: string;
  intervals: OverlayInterval[];
}

export interface SeriesPayload {
  patient_id: string;
  item_id: string;
  entity: string;
  unit: string;
  window: { start: string; end: string };
  surgery_window: { start: string; end: string };
  reference: ReferenceRange | null;
  points: SeriesPoint[];
  segments: SegmentSet | null;
  overlay: MergedOverlay | null;
}

export interface TimelineCell {
  start: string;
  end: string;
  count: number;
  abnormal_fraction: number;
}

export interface TimelineRow {
  source: string;
  cells: TimelineCell[];
}

export interface TimelinePayload {
  patient_id: string;
  interval_hours: number;
  cohort_id: string;
  rows: TimelineRow[];
}

export interface ContributionEntry {
  feature_id: string;
  phi: number;
}

export interface ContributionSetPayload {
  instance_id: string | null;
  target_label: string | null;
  base_value: number;
  prediction: number;
  method: Record<string, unknown>;
  contributions: ContributionEntry[];
}

export interface WhatIfPayload {
  patient_id: string;
  target: string;
  cohort_id: string;
  feature_id: string;
  original_value: number;
  clamped_value: number;
  original_prediction: number;
  new_prediction: number;
  prediction_delta: number;
  contribution_delta: number;
  original: ContributionSetPayload;
  modified: ContributionSetPayload;
}

export interface ApiErrorBody {
  code: string;
  message: string;
}

export class ApiError extends Error {
  constructor(readonly status: number, readonly body: ApiErrorBody) {
    super(`${body.code}: ${body.message}`);
  }
}

export type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export class ApiClient {
  constructor(
    private readonly fetcher: FetchLike = (input, init) => fetch(input, init),
    private readonly base = "/api",
  ) {}

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const response = await this.fetcher(`${this.base}${path}`, init);
    if (!response.ok) {
      let body: ApiErrorBody;
      try {
        body = (await response.json()) as ApiErrorBody;
      } catch {
        body = { code: "error", message: response.statusText };
      }
      throw new ApiError(response.status, body);
    }
    return (await response.json()) as T;
  }

  meta(): Promise<Meta> {
    return this.request<Meta>("/meta");
  }

  patients(): Promise<PatientEntry[]> {
    return this.request<PatientEntry[]>("/patients");
  }

  profile(patientId: string, cohortId?: string): Promise<Profile> {
    const suffix = cohortId ? `?cohort=${encodeURIComponent(cohortId)}` : "";
    return this.request<Profile>(`/patient/${encodeURIComponent(patientId)}/profile${suffix}`);
  }

  cohort(selector: object): Promise<CohortSummary> {
    return this.request<CohortSummary>("/cohort", {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(selector),
    });
  }

  features(
    patientId: string,
    target: string,
    cohortId: string,
    options: { sort?: string; topk?: number; minAbs?: number } = {},
  ): Promise<FeaturesPayload> {
    const params = new URLSearchParams({ target, cohort: cohortId });
    if (options.sort) params.set("sort", options.sort);
    if (options.topk !== undefined) params.set("topk", String(options.topk));
    if (options.minAbs !== undefined) params.set("min_abs", String(options.minAbs));
    return this.request<FeaturesPayload>(
      `/patient/${encodeURIComponent(patientId)}/features?${params.toString()}`,
    );
  }

  distribution(patientId: string, featureId: string, cohortId: string): Promise<DistributionPayload> {
    const params = new URLSearchParams({ feature_id: featureId, cohort: cohortId });
    return this.request<DistributionPayload>(
      `/patient/${encodeURIComponent(patientId)}/distribution?${params.toString()}`,
    );
  }

  series(
    patientId: string,
    itemId: string,
    cohortId: string,
    explainFeature?: string,
  ): Promise<SeriesPayload> {
    const params = new URLSearchParams({ cohort: cohortId });
    if (explainFeature) params.set("explain_feature", explainFeature);
    return this.request<SeriesPayload>(
      `/patient/${encodeURIComponent(patientId)}/series/${encodeURIComponent(itemId)}?${params.toString()}`,
    );
  }

  timeline(patientId: string, interval: string, cohortId: string): Promise<TimelinePayload> {
    const params = new URLSearchParams({ interval, cohort: cohortId });
    return this.request<TimelinePayload>(
      `/patient/${encodeURIComponent(patientId)}/timeline?${params.toString()}`,
    );
  }

  whatif(patientId: string, target: string, featureId: string, cohortId: string): Promise<WhatIfPayload> {
    return this.request<WhatIfPayload>(`/patient/${encodeURIComponent(patientId)}/whatif`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ target, feature_id: featureId, cohort_id: cohortId }),
    });
  }
}
