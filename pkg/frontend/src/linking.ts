/** Linking layer: curves connecting feature rows with the record elements
 * they were computed from, re-anchored on scroll, with edge markers when the
 * counterpart is off screen. */

import { clear, svg } from "./dom.js";

export interface LinkPair {
  featureEl: HTMLElement;
  recordEl: HTMLElement;
  color: string;
}

export function collectLinkPairs(rootEl: HTMLElement | Document = document): LinkPair[] {
  const pairs: LinkPair[] = [];
  const cards = Array.from(rootEl.querySelectorAll<HTMLElement>(".series-card[data-item-id]"));
  const byItem = new Map(cards.map((c) => [c.dataset.itemId as string, c]));
  for (const row of Array.from(rootEl.querySelectorAll<HTMLElement>(".feature-row.leaf[data-item-id]"))) {
    const itemId = row.dataset.itemId;
    if (!itemId) continue;
    const card = byItem.get(itemId);
    if (!card) continue;
    const color = row.style.borderRightColor || "#999";
    pairs.push({ featureEl: row, recordEl: card, color });
  }
  return pairs;
}

export class LinkingLayer {
  readonly overlay: SVGElement;

  constructor(private readonly host: HTMLElement) {
    this.overlay = svg("svg", { class: "linking-overlay", id: "linking-overlay" });
    host.append(this.overlay);
    window.addEventListener("scroll", () => this.redraw(), { passive: true });
    window.addEventListener("resize", () => this.redraw(), { passive: true });
  }

  redraw() {
    clear(this.overlay);
    const viewHeight = window.innerHeight || 800;
    for (const pair of collectLinkPairs(document)) {
      const a = pair.featureEl.getBoundingClientRect();
      const b = pair.recordEl.getBoundingClientRect();
      const aVisible = a.bottom > 0 && a.top < viewHeight;
      const bVisible = b.bottom > 0 && b.top < viewHeight;
      if (!aVisible && !bVisible) continue;
      if (aVisible && bVisible) {
        const x0 = a.right;
        const y0 = a.top + a.height / 2;
        const x1 = b.left;
        const y1 = b.top + b.height / 2;
        const mid = (x0 + x1) / 2;
        this.overlay.append(
          svg("path", {
            class: "link-curve",
            d: `M ${x0} ${y0} C ${mid} ${y0}, ${mid} ${y1}, ${x1} ${y1}`,
            stroke: pair.color,
          }),
        );
      } else {
        // counterpart off screen: edge marker at the visible element
        const visible = aVisible ? a : b;
        const other = aVisible ? b : a;
        const y = Math.min(Math.max(other.top, 8), viewHeight - 8);
        this.overlay.append(
          svg("circle", {
            class: "offscreen-marker",
            cx: aVisible ? visible.right + 6 : visible.left - 6,
            cy: y,
            r: 4,
            fill: pair.color,
          }),
        );
      }
    }
  }
}
