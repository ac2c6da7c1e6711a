/** Small DOM/SVG construction helpers; no framework, no dependencies. */

const SVG_NS = "http://www.w3.org/2000/svg";

type Attrs = Record<string, string | number | boolean | EventListener | undefined | null>;
type Child = Node | string | null | undefined;

function assign(node: Element, attrs: Attrs, children: Child[]) {
  for (const [key, value] of Object.entries(attrs)) {
    if (value === undefined || value === null) continue;
    if (key.startsWith("on") && typeof value === "function") {
      node.addEventListener(key.slice(2), value as EventListener);
    } else if (key === "dataset" && typeof value === "object") {
      continue;
    } else {
      node.setAttribute(key, String(value));
    }
  }
  for (const child of children) {
    if (child === null || child === undefined) continue;
    node.append(typeof child === "string" ? document.createTextNode(child) : child);
  }
}

export function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  attrs: Attrs = {},
  ...children: Child[]
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  assign(node, attrs, children);
  return node;
}

export function svg(tag: string, attrs: Attrs = {}, ...children: Child[]): SVGElement {
  const node = document.createElementNS(SVG_NS, tag) as SVGElement;
  assign(node, attrs, children);
  return node;
}

/** Linear scale mapping [d0, d1] onto [r0, r1] (degenerate domains map to r0). */
export function linearScale(d0: number, d1: number, r0: number, r1: number) {
  const span = d1 - d0;
  return (x: number): number => (span === 0 ? r0 : r0 + ((x - d0) / span) * (r1 - r0));
}

export function clear(node: Element) {
  while (node.firstChild) node.removeChild(node.firstChild);
}

export function formatNumber(value: number | string | null): string {
  if (value === null || value === undefined) return "–";
  if (typeof value === "string") return value;
  if (Number.isInteger(value)) return String(value);
  const magnitude = Math.abs(value);
  if (magnitude >= 100) return value.toFixed(1);
  if (magnitude >= 0.01) return value.toFixed(2);
  return value.toExponential(1);
}

export function parseTs(ts: string): number {
  return Date.parse(ts);
}

/** Data-source accent colors used for linking bars and curves. */
export const SOURCE_COLORS: Record<string, string> = {
  vitalsigns: "#c25d9a",
  labtests: "#4d8fd1",
  chartevents: "#5fb07f",
  patients: "#b0883f",
  admissions: "#b0883f",
  surgeries: "#8a6dbb",
};

export function sourceColor(entity: string | null | undefined): string {
  return (entity && SOURCE_COLORS[entity]) || "#999";
}
