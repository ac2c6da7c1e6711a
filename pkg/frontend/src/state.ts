/** Client-side view state: selections, pins, shown series, and explain
 * toggles. All of it is session-local; the service stays stateless. */

export interface ShownSeries {
  itemId: string;
  /** where the series was added from, so every chart has a provenance */
  origin: "feature-link" | "timeline-brush";
  explainFeature: string | null;
  collapsed: boolean;
}

export interface ViewState {
  patientId: string | null;
  target: string;
  cohortId: string | null;
  sort: string;
  topk: number | null;
  minAbs: number;
  expanded: Set<string>;
  pinnedItems: Set<string>;
  focusMode: boolean;
  shownSeries: ShownSeries[];
  timelineInterval: string;
}

export type Listener = (state: ViewState) => void;

export class Store {
  private state: ViewState = {
    patientId: null,
    target: "C",
    cohortId: null,
    sort: "abs_contribution",
    topk: null,
    minAbs: 0,
    expanded: new Set(),
    pinnedItems: new Set(),
    focusMode: false,
    shownSeries: [],
    timelineInterval: "4h",
  };
  private listeners: Listener[] = [];
  private sequences = new Map<string, number>();

  get(): ViewState {
    return this.state;
  }

  subscribe(listener: Listener): () => void {
    this.listeners.push(listener);
    return () => {
      this.listeners = this.listeners.filter((l) => l !== listener);
    };
  }

  update(patch: Partial<ViewState>) {
    this.state = { ...this.state, ...patch };
    for (const listener of this.listeners) listener(this.state);
  }

  /** Per-view request sequencing so stale responses are discarded. */
  nextSeq(view: string): number {
    const next = (this.sequences.get(view) ?? 0) + 1;
    this.sequences.set(view, next);
    return next;
  }

  isCurrent(view: string, seq: number): boolean {
    return this.sequences.get(view) === seq;
  }

  togglePin(itemId: string) {
    const pinned = new Set(this.state.pinnedItems);
    if (pinned.has(itemId)) pinned.delete(itemId);
    else pinned.add(itemId);
    this.update({ pinnedItems: pinned });
  }

  addSeries(itemId: string, origin: ShownSeries["origin"]) {
    if (this.state.shownSeries.some((s) => s.itemId === itemId)) return;
    this.update({
      shownSeries: [
        ...this.state.shownSeries,
        { itemId, origin, explainFeature: null, collapsed: false },
      ],
    });
  }

  removeSeries(itemId: string) {
    this.update({ shownSeries: this.state.shownSeries.filter((s) => s.itemId !== itemId) });
  }

  setSeriesExplain(itemId: string, explainFeature: string | null) {
    this.update({
      shownSeries: this.state.shownSeries.map((s) =>
        s.itemId === itemId ? { ...s, explainFeature } : s,
      ),
    });
  }

  setSeriesCollapsed(itemId: string, collapsed: boolean) {
    this.update({
      shownSeries: this.state.shownSeries.map((s) =>
        s.itemId === itemId ? { ...s, collapsed } : s,
      ),
    });
  }
}
