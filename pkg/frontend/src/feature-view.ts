/** Hierarchical feature list: signed contribution bars, reference arrows,
 * expandable distributions, and reference-clamped what-if analysis. */

import {
  ApiClient,
  Distribution,
  FeatureGroup,
  FeatureLeaf,
  FeatureNode,
  FeaturesPayload,
  WhatIfPayload,
  isLeaf,
} from "./api.js";
import { clear, el, formatNumber, linearScale, sourceColor, svg } from "./dom.js";
import { Store } from "./state.js";

const BAR_MAX_PX = 120;

export function flagArrow(flag: string | null | undefined): string {
  if (flag === "above") return "▲"; // up-pointing triangle
  if (flag === "below") return "▼";
  return "";
}

function maxAbsContribution(node: FeatureNode): number {
  if (isLeaf(node)) return Math.abs(node.contribution);
  let best = Math.abs(node.group_contribution);
  for (const child of node.children) best = Math.max(best, maxAbsContribution(child));
  return best;
}

export function contributionBar(phi: number, maxAbs: number, extraClass = ""): HTMLElement {
  const width = maxAbs > 0 ? (Math.abs(phi) / maxAbs) * BAR_MAX_PX : 0;
  const sign = phi >= 0 ? "positive" : "negative";
  const bar = el("div", {
    class: `contribution-bar ${sign} ${extraClass}`.trim(),
    "data-phi": String(phi),
    style: `width:${width.toFixed(1)}px`,
    title: `contribution ${phi.toFixed(4)}`,
  });
  return bar;
}

export function renderDistribution(dist: Distribution): SVGElement {
  const width = 220;
  const height = 70;
  const chart = svg("svg", {
    class: "distribution",
    width,
    height,
    viewBox: `0 0 ${width} ${height}`,
  });
  const maxCount = Math.max(1, ...dist.low_counts, ...dist.high_counts);
  const y = linearScale(0, maxCount, height - 12, 4);
  if (dist.kind === "numeric" && dist.bin_edges) {
    const edges = dist.bin_edges;
    const x = linearScale(edges[0], edges[edges.length - 1], 4, width - 4);
    const area = (counts: number[], cls: string) => {
      const parts: string[] = [`M ${x(edges[0])} ${y(0)}`];
      counts.forEach((count, i) => {
        parts.push(`L ${x(edges[i])} ${y(count)}`, `L ${x(edges[i + 1])} ${y(count)}`);
      });
      parts.push(`L ${x(edges[edges.length - 1])} ${y(0)} Z`);
      return svg("path", { class: `dist-area ${cls}`, d: parts.join(" ") });
    };
    chart.append(area(dist.low_counts, "low-risk"), area(dist.high_counts, "high-risk"));
    if (typeof dist.patient_value === "number") {
      const px = x(dist.patient_value);
      chart.append(
        svg("line", {
          class: "patient-position",
          x1: px, x2: px, y1: 2, y2: height - 10,
        }),
      );
    }
  } else if (dist.categories) {
    const n = dist.categories.length;
    const band = (width - 8) / Math.max(1, n);
    dist.categories.forEach((category, i) => {
      const x0 = 4 + i * band;
      const lowH = (height - 14) * (dist.low_counts[i] / maxCount);
      const highH = (height - 14) * (dist.high_counts[i] / maxCount);
      const highlight = category === dist.patient_value ? " patient-category" : "";
      chart.append(
        svg("rect", {
          class: `dist-bar low-risk${highlight}`,
          x: x0, y: height - 12 - lowH, width: band * 0.38, height: lowH,
        }),
        svg("rect", {
          class: `dist-bar high-risk${highlight}`,
          x: x0 + band * 0.42, y: height - 12 - highH, width: band * 0.38, height: highH,
        }),
      );
    });
  }
  return chart;
}

/** Old (dashed outline) and new (solid) contributions of the clamped feature,
 * plus the prediction movement. */
export function renderWhatIf(payload: WhatIfPayload): HTMLElement {
  const phiOf = (entries: { feature_id: string; phi: number }[]) => {
    const hit = entries.find((c) => c.feature_id === payload.feature_id);
    return hit ? hit.phi : 0;
  };
  const oldPhi = phiOf(payload.original.contributions);
  const newPhi = phiOf(payload.modified.contributions);
  const maxAbs = Math.max(Math.abs(oldPhi), Math.abs(newPhi), 1e-12);
  const container = el(
    "div",
    { class: "whatif-result" },
    el("div", { class: "whatif-row" },
      el("span", { class: "whatif-label" }, "original"),
      contributionBar(oldPhi, maxAbs, "whatif-bar original"),
      el("span", { class: "whatif-value" }, formatNumber(oldPhi))),
    el("div", { class: "whatif-row" },
      el("span", { class: "whatif-label" }, "clamped"),
      contributionBar(newPhi, maxAbs, "whatif-bar modified"),
      el("span", { class: "whatif-value" }, formatNumber(newPhi))),
    el("div", { class: "whatif-prediction" },
      `value ${formatNumber(payload.original_value)} → ${formatNumber(payload.clamped_value)}, ` +
      `prediction ${payload.original_prediction.toFixed(3)} → ${payload.new_prediction.toFixed(3)}`),
  );
  return container;
}

export interface FeatureViewHooks {
  onSeriesRequested?: (itemId: string, featureId: string) => void;
}

export class FeatureView {
  readonly root: HTMLElement;
  private payload: FeaturesPayload | null = null;

  constructor(
    private readonly api: ApiClient,
    private readonly store: Store,
    private readonly hooks: FeatureViewHooks = {},
  ) {
    this.root = el("section", { class: "feature-view", id: "feature-view" });
  }

  async refresh(): Promise<void> {
    const state = this.store.get();
    if (!state.patientId || !state.cohortId) return;
    const seq = this.store.nextSeq("features");
    const payload = await this.api.features(state.patientId, state.target, state.cohortId, {
      sort: state.sort,
      topk: state.topk ?? undefined,
      minAbs: state.minAbs || undefined,
    });
    if (!this.store.isCurrent("features", seq)) return; // stale response
    this.payload = payload;
    this.render();
  }

  render() {
    clear(this.root);
    if (!this.payload) return;
    const state = this.store.get();
    const header = el(
      "header",
      { class: "feature-header" },
      el("span", { class: "view-title" }, "Feature View"),
      el("label", { class: "focus-switch" },
        el("input", {
          type: "checkbox",
          id: "focus-switch",
          ...(state.focusMode ? { checked: "checked" } : {}),
          onchange: () => this.store.update({ focusMode: !this.store.get().focusMode }),
        }),
        "focus"),
      el("span", { class: "prediction-summary" },
        `risk ${(this.payload.prediction * 100).toFixed(1)}% (base ${(this.payload.base_value * 100).toFixed(1)}%)`),
    );
    const maxAbs = maxAbsContribution(this.payload.root);
    const list = el("div", { class: "feature-tree" });
    for (const phase of this.payload.root.children) {
      const rendered = this.renderNode(phase, maxAbs, 0);
      if (rendered) list.append(rendered);
    }
    this.root.append(header, list);
  }

  private leafVisible(leaf: FeatureLeaf): boolean {
    const state = this.store.get();
    if (!state.focusMode || state.pinnedItems.size === 0) return true;
    return leaf.item_id !== null && state.pinnedItems.has(leaf.item_id);
  }

  private renderNode(node: FeatureNode, maxAbs: number, depth: number): HTMLElement | null {
    if (isLeaf(node)) {
      if (!this.leafVisible(node)) return null;
      return this.renderLeaf(node, maxAbs, depth);
    }
    const children = node.children
      .map((child) => this.renderNode(child, maxAbs, depth + 1))
      .filter((c): c is HTMLElement => c !== null);
    if (children.length === 0 && this.store.get().focusMode) return null;
    const key = `${depth}:${node.label}`;
    const expanded = this.store.get().expanded.has(key);
    const row = el(
      "div",
      {
        class: `feature-row group depth-${depth}`,
        "data-label": node.label,
        "data-contribution": String(node.group_contribution),
      },
      el("button", {
        class: "expander",
        onclick: () => {
          const expandedSet = new Set(this.store.get().expanded);
          if (expandedSet.has(key)) expandedSet.delete(key);
          else expandedSet.add(key);
          this.store.update({ expanded: expandedSet });
        },
      }, expanded ? "−" : "+"),
      el("span", { class: "feature-label" }, node.label),
      contributionBar(node.group_contribution, maxAbs, "group-bar"),
    );
    const block = el("div", { class: "feature-group-block" }, row);
    if (expanded) {
      const childContainer = el("div", { class: "feature-children" }, ...children);
      block.append(childContainer);
    }
    return block;
  }

  private renderLeaf(leaf: FeatureLeaf, maxAbs: number, depth: number): HTMLElement {
    const state = this.store.get();
    const pinned = leaf.item_id !== null && state.pinnedItems.has(leaf.item_id);
    const arrow = flagArrow(leaf.flag);
    const row = el(
      "div",
      {
        class: `feature-row leaf depth-${depth}${pinned ? " pinned-assoc" : ""}`,
        "data-feature-id": leaf.feature_id,
        "data-item-id": leaf.item_id ?? "",
        "data-contribution": String(leaf.contribution),
        style: `border-right:4px solid ${sourceColor(leaf.source_entity)}`,
      },
      el("span", { class: "feature-label", title: leaf.feature_id }, leaf.display_name),
      el("span", {
        class: "feature-value",
        onclick: () => void this.toggleDistribution(row, leaf),
      },
      formatNumber(leaf.value),
      arrow ? el("span", { class: `flag-arrow flag-${leaf.flag}` }, arrow) : null),
      contributionBar(leaf.contribution, maxAbs, pinned ? "thick" : ""),
    );
    if (leaf.kind === "dynamic" && leaf.item_id) {
      row.append(
        el("button", {
          class: "link-series",
          title: "show records in Temporal View",
          onclick: () => {
            this.store.addSeries(leaf.item_id as string, "feature-link");
            this.hooks.onSeriesRequested?.(leaf.item_id as string, leaf.feature_id);
          },
        }, "↗"),
      );
    }
    if (leaf.flag && leaf.flag !== "within" && leaf.value_kind === "numeric") {
      row.append(
        el("button", {
          class: "whatif-trigger",
          title: "what if this value were in range?",
          onclick: () => void this.runWhatIf(row, leaf),
        }, "what-if"),
      );
    }
    return row;
  }

  private async toggleDistribution(row: HTMLElement, leaf: FeatureLeaf) {
    const existing = row.querySelector(".distribution-holder");
    if (existing) {
      existing.remove();
      return;
    }
    const state = this.store.get();
    if (!state.patientId || !state.cohortId) return;
    const payload = await this.api.distribution(state.patientId, leaf.feature_id, state.cohortId);
    const holder = el("div", { class: "distribution-holder" }, renderDistribution(payload.distribution));
    row.append(holder);
  }

  private async runWhatIf(row: HTMLElement, leaf: FeatureLeaf) {
    const state = this.store.get();
    if (!state.patientId || !state.cohortId) return;
    const existing = row.querySelector(".whatif-result");
    if (existing) {
      existing.remove();
      return;
    }
    const payload = await this.api.whatif(state.patientId, state.target, leaf.feature_id, state.cohortId);
    row.append(renderWhatIf(payload));
  }
}
