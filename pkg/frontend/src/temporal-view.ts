/** Temporal view: per-item line charts with the cohort reference band,
 * out-of-range highlighting, a collapsed arrows-only mode for concurrent
 * pattern scanning, and influential-segment overlays (translucent fill plus
 * top/bottom borders; deeper tint where sibling features overlap). */

import { ApiClient, SeriesPayload } from "./api.js";
import { clear, el, linearScale, parseTs, sourceColor, svg } from "./dom.js";
import { ShownSeries, Store } from "./state.js";

const WIDTH = 560;
const HEIGHT = 120;
const COLLAPSED_HEIGHT = 26;
const PAD = { left: 8, right: 8, top: 6, bottom: 14 };

export function renderSeriesChart(payload: SeriesPayload, collapsed: boolean): SVGElement {
  const height = collapsed ? COLLAPSED_HEIGHT : HEIGHT;
  const chart = svg("svg", {
    class: `series-chart${collapsed ? " collapsed" : ""}`,
    width: WIDTH,
    height,
    viewBox: `0 0 ${WIDTH} ${height}`,
    "data-item-id": payload.item_id,
  });
  if (payload.points.length === 0) return chart;

  const t0 = parseTs(payload.points[0].ts);
  const t1 = parseTs(payload.points[payload.points.length - 1].ts);
  const x = linearScale(t0, Math.max(t1, t0 + 1), PAD.left, WIDTH - PAD.right);

  if (collapsed) {
    // space-intensive mode: only out-of-range points, as direction arrows
    for (const point of payload.points) {
      if (point.flag === "within") continue;
      const px = x(parseTs(point.ts));
      const up = point.flag === "above";
      const baseY = up ? COLLAPSED_HEIGHT - 6 : 6;
      const tipY = up ? 6 : COLLAPSED_HEIGHT - 6;
      chart.append(
        svg("path", {
          class: `collapsed-arrow flag-${point.flag}`,
          d: `M ${px - 3} ${baseY} L ${px + 3} ${baseY} L ${px} ${tipY} Z`,
          "data-flag": point.flag,
          "data-ts": point.ts,
        }),
      );
    }
    return chart;
  }

  const values = payload.points.map((p) => p.value);
  let lower = Math.min(...values);
  let upper = Math.max(...values);
  if (payload.reference) {
    lower = Math.min(lower, payload.reference.low);
    upper = Math.max(upper, payload.reference.high);
  }
  if (lower === upper) {
    lower -= 1;
    upper += 1;
  }
  const y = linearScale(lower, upper, height - PAD.bottom, PAD.top);

  // influential segments first: fills sit under the data line
  if (payload.overlay) {
    for (const interval of payload.overlay.intervals) {
      if (!interval.start_ts || !interval.end_ts) continue;
      const x0 = x(parseTs(interval.start_ts));
      const x1 = Math.max(x(parseTs(interval.end_ts)), x0 + 2);
      const deep = interval.multiplicity > 1;
      chart.append(
        svg("rect", {
          class: `influence-fill${deep ? " overlay-deep" : ""}`,
          x: x0, y: PAD.top, width: x1 - x0, height: height - PAD.top - PAD.bottom,
          "data-multiplicity": interval.multiplicity,
        }),
        svg("line", { class: "influence-border", x1: x0, x2: x1, y1: PAD.top, y2: PAD.top }),
        svg("line", {
          class: "influence-border",
          x1: x0, x2: x1, y1: height - PAD.bottom, y2: height - PAD.bottom,
        }),
      );
    }
  }

  if (payload.reference) {
    const bandTop = y(payload.reference.high);
    const bandBottom = y(payload.reference.low);
    chart.append(
      svg("rect", {
        class: "reference-band",
        x: PAD.left, y: bandTop, width: WIDTH - PAD.left - PAD.right,
        height: Math.max(1, bandBottom - bandTop),
      }),
      svg("line", {
        class: "reference-mean",
        x1: PAD.left, x2: WIDTH - PAD.right,
        y1: y(payload.reference.mean), y2: y(payload.reference.mean),
      }),
    );
  }

  const path = payload.points
    .map((p, i) => `${i === 0 ? "M" : "L"} ${x(parseTs(p.ts)).toFixed(1)} ${y(p.value).toFixed(1)}`)
    .join(" ");
  chart.append(svg("path", { class: "series-line", d: path }));

  // out-of-range records in red; consecutive runs read as red line segments
  let runStart: number | null = null;
  const flushRun = (endIdx: number) => {
    if (runStart === null) return;
    const seg = payload.points.slice(runStart, endIdx);
    if (seg.length > 1) {
      const d = seg
        .map((p, i) => `${i === 0 ? "M" : "L"} ${x(parseTs(p.ts)).toFixed(1)} ${y(p.value).toFixed(1)}`)
        .join(" ");
      chart.append(svg("path", { class: "series-line abnormal-run", d }));
    }
    runStart = null;
  };
  payload.points.forEach((point, i) => {
    if (point.flag === "within") {
      flushRun(i);
      return;
    }
    if (runStart === null) runStart = i;
    chart.append(
      svg("circle", {
        class: `abnormal-dot flag-${point.flag}`,
        cx: x(parseTs(point.ts)).toFixed(1),
        cy: y(point.value).toFixed(1),
        r: 2.2,
        "data-flag": point.flag,
      }),
    );
  });
  flushRun(payload.points.length);
  return chart;
}

export class TemporalView {
  readonly root: HTMLElement;
  private cache = new Map<string, SeriesPayload>();

  constructor(
    private readonly api: ApiClient,
    private readonly store: Store,
    private readonly defaultExplain: (itemId: string) => string | null = () => null,
  ) {
    this.root = el("section", { class: "temporal-view", id: "temporal-view" });
  }

  async refresh(): Promise<void> {
    const state = this.store.get();
    if (!state.patientId || !state.cohortId) {
      clear(this.root);
      return;
    }
    const seq = this.store.nextSeq("temporal");
    const payloads: Array<[ShownSeries, SeriesPayload]> = [];
    for (const shown of state.shownSeries) {
      const key = `${state.patientId}:${state.cohortId}:${shown.itemId}:${shown.explainFeature ?? ""}`;
      let payload = this.cache.get(key);
      if (!payload) {
        payload = await this.api.series(
          state.patientId, shown.itemId, state.cohortId, shown.explainFeature ?? undefined,
        );
        this.cache.set(key, payload);
      }
      payloads.push([shown, payload]);
    }
    if (!this.store.isCurrent("temporal", seq)) return;
    this.render(payloads);
  }

  private render(entries: Array<[ShownSeries, SeriesPayload]>) {
    clear(this.root);
    this.root.append(el("header", {}, el("span", { class: "view-title" }, "Temporal View")));
    for (const [shown, payload] of entries) {
      this.root.append(this.renderCard(shown, payload));
    }
  }

  private renderCard(shown: ShownSeries, payload: SeriesPayload): HTMLElement {
    const state = this.store.get();
    const pinned = state.pinnedItems.has(shown.itemId);
    const explainOn = shown.explainFeature !== null;
    const card = el(
      "div",
      {
        class: `series-card${pinned ? " pinned" : ""}`,
        "data-item-id": shown.itemId,
        "data-origin": shown.origin,
        style: `border-left:4px solid ${sourceColor(payload.entity)}`,
      },
      el("div", { class: "series-card-header" },
        el("button", {
          class: `pin-toggle${pinned ? " active" : ""}`,
          title: "pin this record item",
          onclick: () => this.store.togglePin(shown.itemId),
        }, "\u{1F4CC}"),
        el("span", { class: "series-title" }, `${shown.itemId}${payload.unit ? ` (${payload.unit})` : ""}`),
        el("button", {
          class: `explain-toggle${explainOn ? " active" : ""}`,
          onclick: () => {
            const next = explainOn ? null : this.defaultExplain(shown.itemId);
            this.store.setSeriesExplain(shown.itemId, next);
          },
        }, "explain"),
        el("button", {
          class: "collapse-toggle",
          onclick: () => this.store.setSeriesCollapsed(shown.itemId, !shown.collapsed),
        }, shown.collapsed ? "expand" : "collapse"),
        el("button", {
          class: "remove-series",
          onclick: () => this.store.removeSeries(shown.itemId),
        }, "×"),
      ),
      renderSeriesChart(payload, shown.collapsed),
    );
    return card;
  }
}
