/** Application shell: top menu (patient + target selection, five prediction
 * icons, cohort size), filter view, and the coordinated views. */

import { ApiClient, Meta, PatientEntry } from "./api.js";
import { clear, el } from "./dom.js";
import { FeatureView } from "./feature-view.js";
import { LinkingLayer } from "./linking.js";
import { ProfileView } from "./profile-view.js";
import { Store } from "./state.js";
import { TemporalView } from "./temporal-view.js";
import { TimelineView } from "./timeline-view.js";

export class App {
  readonly store = new Store();
  readonly root: HTMLElement;
  private readonly topMenu: HTMLElement;
  private readonly filterView: HTMLElement;
  private meta: Meta | null = null;
  private patients: PatientEntry[] = [];
  private cohortSize: { size: number; low: number } | null = null;

  private readonly profileView: ProfileView;
  private readonly featureView: FeatureView;
  private readonly temporalView: TemporalView;
  private readonly timelineView: TimelineView;
  private linking: LinkingLayer | null = null;

  constructor(private readonly api: ApiClient) {
    this.topMenu = el("nav", { class: "top-menu", id: "top-menu" });
    this.filterView = el("section", { class: "filter-view", id: "filter-view" });
    this.profileView = new ProfileView(api, this.store);
    this.featureView = new FeatureView(api, this.store, {
      onSeriesRequested: (itemId, featureId) => {
        this.store.setSeriesExplain(itemId, null);
        void this.temporalView.refresh();
        void featureId;
      },
    });
    this.temporalView = new TemporalView(api, this.store, (itemId) =>
      this.defaultExplainFeature(itemId),
    );
    this.timelineView = new TimelineView(api, this.store, {}, (itemId) => {
      const state = this.store.get();
      return this.api.series(state.patientId as string, itemId, state.cohortId as string);
    });
    this.root = el("main", { class: "app" },
      this.topMenu,
      el("div", { class: "left-column" }, this.filterView, this.profileView.root),
      el("div", { class: "center-column" }, this.featureView.root),
      el("div", { class: "right-column" }, this.timelineView.root, this.temporalView.root),
    );
    this.store.subscribe(() => this.onStateChange());
  }

  /** The explain toggle defaults to the item's in-surgery mean feature. */
  defaultExplainFeature(itemId: string): string | null {
    if (!this.meta) return null;
    for (const [entity, items] of Object.entries(this.meta.items)) {
      if (items.includes(itemId)) {
        return `${entity}.${itemId}.mean.in-surgery`;
      }
    }
    return null;
  }

  async start(): Promise<void> {
    this.meta = await this.api.meta();
    this.timelineView.setItems(this.meta.items);
    this.patients = await this.api.patients();
    const cohort = await this.api.cohort({ predicates: [] });
    this.cohortSize = { size: cohort.size, low: cohort.low_risk_size };
    this.store.update({
      cohortId: cohort.cohort_id,
      patientId: this.patients[0]?.patient_id ?? null,
      target: this.meta.targets[0] ?? "C",
    });
    this.renderTopMenu();
    this.renderFilterView();
    this.linking = new LinkingLayer(this.root);
    await this.refreshAll();
  }

  private onStateChange() {
    this.renderTopMenu();
    this.linking?.redraw();
  }

  async refreshAll(): Promise<void> {
    await Promise.all([
      this.profileView.refresh(),
      this.featureView.refresh(),
      this.timelineView.refresh(),
      this.temporalView.refresh(),
    ]);
    this.linking?.redraw();
  }

  renderTopMenu() {
    clear(this.topMenu);
    const state = this.store.get();
    const patientSelect = el("select", {
      id: "patient-select",
      onchange: () => {
        this.store.update({
          patientId: (patientSelect as HTMLSelectElement).value,
          shownSeries: [],
          pinnedItems: new Set<string>(),
          expanded: new Set<string>(),
        });
        void this.refreshAll();
      },
    });
    for (const patient of this.patients) {
      const option = el("option", { value: patient.patient_id }, patient.patient_id);
      if (patient.patient_id === state.patientId) option.setAttribute("selected", "selected");
      patientSelect.append(option);
    }
    const targetSelect = el("select", {
      id: "target-select",
      onchange: () => {
        this.store.update({ target: (targetSelect as HTMLSelectElement).value });
        void this.refreshAll();
      },
    });
    for (const target of this.meta?.targets ?? []) {
      const option = el("option", { value: target }, target);
      if (target === state.target) option.setAttribute("selected", "selected");
      targetSelect.append(option);
    }
    const current = this.patients.find((p) => p.patient_id === state.patientId);
    const icons = el("span", { class: "prediction-icons" });
    for (const target of this.meta?.targets ?? []) {
      const positive = current?.predictions[target] ?? false;
      icons.append(el("span", {
        class: `prediction-icon ${positive ? "positive" : "negative"}`,
        title: `${target}: ${positive ? "predicted complication" : "no predicted complication"}`,
        "data-target": target,
      }, target));
    }
    this.topMenu.append(
      el("span", { class: "brand" }, "riskscope"),
      el("label", {}, "patient ", patientSelect),
      el("label", {}, "target ", targetSelect),
      icons,
      el("span", { class: "cohort-count", id: "cohort-count" },
        this.cohortSize
          ? `cohort ${this.cohortSize.size} (low-risk ${this.cohortSize.low})`
          : ""),
    );
  }

  renderFilterView() {
    clear(this.filterView);
    const low = el("input", { type: "number", id: "age-low", value: "0", min: "0" });
    const high = el("input", { type: "number", id: "age-high", value: "216", min: "0" });
    this.filterView.append(
      el("header", {}, el("span", { class: "view-title" }, "Filter View")),
      el("label", {}, "age (months) from ", low, " to ", high),
      el("button", {
        id: "apply-cohort",
        onclick: () => void this.applyCohort(
          Number((low as HTMLInputElement).value),
          Number((high as HTMLInputElement).value),
        ),
      }, "apply cohort"),
    );
  }

  async applyCohort(lowMonths: number, highMonths: number): Promise<void> {
    const cohort = await this.api.cohort({
      predicates: [
        { entity: "patients", column: "age_months", op: "range", low: lowMonths, high: highMonths },
      ],
    });
    this.cohortSize = { size: cohort.size, low: cohort.low_risk_size };
    this.store.update({ cohortId: cohort.cohort_id });
    await this.refreshAll();
  }
}
