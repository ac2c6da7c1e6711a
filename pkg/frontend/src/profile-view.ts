/** Profile view: demographics, admission, and surgery attributes with
 * reference flags from the selected cohort. */

import { ApiClient, Profile, ProfileField } from "./api.js";
import { clear, el, formatNumber } from "./dom.js";
import { flagArrow } from "./feature-view.js";
import { Store } from "./state.js";

const SECTIONS: Array<[keyof Pick<Profile, "patients" | "admissions" | "surgeries">, string]> = [
  ["patients", "Demographics"],
  ["admissions", "Admission"],
  ["surgeries", "Surgery"],
];

export function renderProfile(profile: Profile): HTMLElement {
  const view = el("section", { class: "profile-view", id: "profile-view" },
    el("header", {}, el("span", { class: "view-title" }, "Profile View")));
  for (const [key, title] of SECTIONS) {
    const block = el("div", { class: "profile-section" }, el("h4", {}, title));
    const fields = profile[key];
    for (const [name, field] of Object.entries(fields)) {
      block.append(renderField(name, field));
    }
    view.append(block);
  }
  return view;
}

function renderField(name: string, field: ProfileField): HTMLElement {
  const arrow = field.flag ? flagArrow(field.flag) : "";
  return el("div", { class: "profile-field", "data-field": name },
    el("span", { class: "field-name" }, name.replace(/_/g, " ")),
    el("span", { class: "field-value" },
      formatNumber(field.value as number | string | null),
      arrow ? el("span", { class: `flag-arrow flag-${field.flag}` }, arrow) : null),
  );
}

export class ProfileView {
  readonly root: HTMLElement;

  constructor(private readonly api: ApiClient, private readonly store: Store) {
    this.root = el("div", { class: "profile-holder" });
  }

  async refresh(): Promise<void> {
    const state = this.store.get();
    if (!state.patientId) return;
    const seq = this.store.nextSeq("profile");
    const profile = await this.api.profile(state.patientId, state.cohortId ?? undefined);
    if (!this.store.isCurrent("profile", seq)) return;
    clear(this.root);
    this.root.append(renderProfile(profile));
  }
}
