/** Timeline view: a source x interval matrix summarizing the admission.
 * Cell background darkness encodes the event count; the inner box width
 * encodes the fraction of out-of-reference-range events. Brushing cells and
 * clicking "Go Temporal View" adds the brushed sources' record series. */

import { ApiClient, TimelinePayload } from "./api.js";
import { clear, el, parseTs } from "./dom.js";
import { Store } from "./state.js";

const CELL_W = 26;
const CELL_H = 20;

export interface BrushSpan {
  source: string;
  startIdx: number;
  endIdx: number;
}

export class TimelineView {
  readonly root: HTMLElement;
  private payload: TimelinePayload | null = null;
  private brush: BrushSpan | null = null;
  private anchor: { source: string; idx: number } | null = null;

  constructor(
    private readonly api: ApiClient,
    private readonly store: Store,
    /** item ids per source entity, from /api/meta */
    private items: Record<string, string[]> = {},
    /** issue the documented series requests for brushed items */
    private readonly fetchSeries?: (itemId: string) => Promise<unknown>,
  ) {
    this.root = el("section", { class: "timeline-view", id: "timeline-view" });
  }

  setItems(items: Record<string, string[]>) {
    this.items = items;
  }

  async refresh(): Promise<void> {
    const state = this.store.get();
    if (!state.patientId || !state.cohortId) {
      clear(this.root);
      return;
    }
    const seq = this.store.nextSeq("timeline");
    const payload = await this.api.timeline(state.patientId, state.timelineInterval, state.cohortId);
    if (!this.store.isCurrent("timeline", seq)) return;
    this.payload = payload;
    this.brush = null;
    this.render();
  }

  render() {
    clear(this.root);
    if (!this.payload) return;
    const header = el(
      "header",
      {},
      el("span", { class: "view-title" }, "Timeline View"),
      ...["1h", "4h", "8h"].map((interval) =>
        el("button", {
          class: `interval-choice${this.store.get().timelineInterval === interval ? " active" : ""}`,
          onclick: () => {
            this.store.update({ timelineInterval: interval });
            void this.refresh();
          },
        }, interval),
      ),
      el("button", {
        class: "go-temporal",
        id: "go-temporal",
        disabled: this.brush ? undefined : "disabled",
        onclick: () => void this.goTemporal(),
      }, "Go Temporal View"),
    );
    const grid = el("div", { class: "timeline-grid" });
    const maxCount = Math.max(1, ...this.payload.rows.flatMap((r) => r.cells.map((c) => c.count)));
    for (const row of this.payload.rows) {
      const rowEl = el("div", { class: "timeline-row", "data-source": row.source },
        el("span", { class: "timeline-source" }, row.source));
      row.cells.forEach((cell, idx) => {
        const depth = cell.count / maxCount;
        const brushed =
          this.brush !== null &&
          this.brush.source === row.source &&
          idx >= this.brush.startIdx &&
          idx <= this.brush.endIdx;
        const cellEl = el("span", {
          class: `timeline-cell${brushed ? " brushed" : ""}`,
          "data-count": String(cell.count),
          "data-abnormal": String(cell.abnormal_fraction),
          "data-idx": String(idx),
          title: `${cell.count} events, ${(cell.abnormal_fraction * 100).toFixed(0)}% abnormal`,
          style: `width:${CELL_W}px;height:${CELL_H}px;background:rgba(43,84,126,${(depth * 0.85).toFixed(3)})`,
          onpointerdown: () => this.beginBrush(row.source, idx),
          onpointerenter: () => this.extendBrush(row.source, idx),
          onpointerup: () => this.endBrush(),
        });
        if (cell.count > 0 && cell.abnormal_fraction > 0) {
          cellEl.append(el("span", {
            class: "abnormal-box",
            style: `width:${(cell.abnormal_fraction * (CELL_W - 6)).toFixed(1)}px`,
          }));
        }
        rowEl.append(cellEl);
      });
      grid.append(rowEl);
    }
    this.root.append(header, grid);
  }

  beginBrush(source: string, idx: number) {
    this.anchor = { source, idx };
    this.brush = { source, startIdx: idx, endIdx: idx };
    this.render();
  }

  extendBrush(source: string, idx: number) {
    if (!this.anchor || this.anchor.source !== source) return;
    this.brush = {
      source,
      startIdx: Math.min(this.anchor.idx, idx),
      endIdx: Math.max(this.anchor.idx, idx),
    };
    this.render();
  }

  endBrush() {
    this.anchor = null;
    this.render();
  }

  /** All of the brushed source's items with at least one event in the brushed
   * span get their series added; each one is fetched through the documented
   * series endpoint. */
  async goTemporal(): Promise<string[]> {
    if (!this.brush || !this.payload) return [];
    const row = this.payload.rows.find((r) => r.source === this.brush!.source);
    if (!row) return [];
    const span = {
      start: parseTs(row.cells[this.brush.startIdx].start),
      end: parseTs(row.cells[this.brush.endIdx].end),
    };
    const added: string[] = [];
    for (const itemId of this.items[this.brush.source] ?? []) {
      const payload = (await this.fetchSeries?.(itemId)) as
        | { points?: Array<{ ts: string }> }
        | undefined;
      const points = payload?.points ?? [];
      const hasEventInSpan = points.some((p) => {
        const t = parseTs(p.ts);
        return t >= span.start && t < span.end;
      });
      if (hasEventInSpan) {
        this.store.addSeries(itemId, "timeline-brush");
        added.push(itemId);
      }
    }
    return added;
  }
}
