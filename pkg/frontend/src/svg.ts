/** Minimal SVG string assembly. */

export function esc(s: string): string {
  return s
    .replaceAll("&", "&amp;")
    .replaceAll("<", "&lt;")
    .replaceAll(">", "&gt;")
    .replaceAll('"', "&quot;");
}

/** Compact numeric attribute formatting (SVG coordinates, 6 significant digits). */
export function fmt(v: number): string {
  if (!Number.isFinite(v)) throw new Error(`non-finite coordinate ${v}`);
  return String(Number(v.toPrecision(6)));
}

export type Attrs = Record<string, string | number>;

function attrs(a: Attrs): string {
  return Object.entries(a)
    .map(([k, v]) => ` ${k}="${typeof v === "number" ? fmt(v) : esc(v)}"`)
    .join("");
}

export function el(tag: string, a: Attrs, body = ""): string {
  return body === "" ? `<${tag}${attrs(a)}/>` : `<${tag}${attrs(a)}>${body}</${tag}>`;
}

export function rect(x: number, y: number, w: number, h: number, a: Attrs = {}): string {
  return el("rect", { x, y, width: w, height: h, ...a });
}

export function line(x1: number, y1: number, x2: number, y2: number, a: Attrs = {}): string {
  return el("line", { x1, y1, x2, y2, ...a });
}

export function polyline(pts: Array<[number, number]>, a: Attrs = {}): string {
  const points = pts.map(([x, y]) => `${fmt(x)},${fmt(y)}`).join(" ");
  return el("polyline", { points, fill: "none", ...a });
}

export function path(d: string, a: Attrs = {}): string {
  return el("path", { d, ...a });
}

export function circle(cx: number, cy: number, r: number, a: Attrs = {}): string {
  return el("circle", { cx, cy, r, ...a });
}

export function text(x: number, y: number, content: string, a: Attrs = {}): string {
  return el("text", { x, y, "font-family": "sans-serif", ...a }, esc(content));
}

export function group(a: Attrs, body: string): string {
  return el("g", a, body);
}

export function svgDocument(width: number, height: number, body: string): string {
  const head =
    `<svg xmlns="http://www.w3.org/2000/svg" width="${fmt(width)}" height="${fmt(height)}"` +
    ` viewBox="0 0 ${fmt(width)} ${fmt(height)}">`;
  const bg = rect(0, 0, width, height, { fill: "#ffffff" });
  return `${head}${bg}${body}</svg>`;
}
