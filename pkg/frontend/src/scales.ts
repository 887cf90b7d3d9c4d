/** Scales, color ramps, and the shared axes frame. */

import { scaleLinear, type ScaleLinear } from "d3-scale";
import { interpolateRdBu, interpolateViridis } from "d3-scale-chromatic";
import { group, line, text } from "./svg.js";

export type LinScale = ScaleLinear<number, number>;

export function linScale(domain: [number, number], range: [number, number]): LinScale {
  const [lo, hi] = domain;
  // degenerate domains (constant fields) still need a usable scale
  return scaleLinear()
    .domain(lo === hi ? [lo - 1, hi + 1] : [lo, hi])
    .range(range);
}

/** Sequential map over [lo, hi] (perceptually uniform, dark-to-bright). */
export function sequentialColor(lo: number, hi: number): (v: number) => string {
  const s = linScale([lo, hi], [0, 1]);
  return (v) => interpolateViridis(Math.max(0, Math.min(1, s(v))));
}

/**
 * Diverging map centered on `center`, covering center ± halfRange
 * (blue below, red above).
 */
export function divergingColor(center: number, halfRange: number): (v: number) => string {
  const span = halfRange > 0 ? halfRange : 1;
  return (v) => {
    const u = Math.max(-1, Math.min(1, (v - center) / span));
    return interpolateRdBu(0.5 - u / 2);
  };
}

export function extent(values: Iterable<number>): [number, number] {
  let lo = Number.POSITIVE_INFINITY;
  let hi = Number.NEGATIVE_INFINITY;
  for (const v of values) {
    if (!Number.isFinite(v)) continue;
    if (v < lo) lo = v;
    if (v > hi) hi = v;
  }
  if (lo > hi) throw new Error("no finite values to scale");
  return [lo, hi];
}

/** Short tick label: fixed-ish precision without trailing noise. */
export function tickLabel(v: number): string {
  if (v === 0) return "0";
  const a = Math.abs(v);
  if (a >= 1e5 || a < 1e-3) return v.toExponential(1);
  return String(Number(v.toPrecision(4)));
}

export interface FrameOpts {
  width: number;
  height: number;
  margin?: { top: number; right: number; bottom: number; left: number };
  xLabel?: string;
  yLabel?: string;
  title?: string;
}

/** A rectangular plotting area with pixel scales and rendered axes. */
export class Frame {
  readonly x: LinScale;
  readonly y: LinScale;
  readonly left: number;
  readonly top: number;
  readonly right: number;
  readonly bottom: number;

  constructor(
    xDomain: [number, number],
    yDomain: [number, number],
    private readonly opts: FrameOpts,
  ) {
    const m = opts.margin ?? { top: opts.title ? 34 : 16, right: 16, bottom: 40, left: 58 };
    this.left = m.left;
    this.top = m.top;
    this.right = opts.width - m.right;
    this.bottom = opts.height - m.bottom;
    this.x = linScale(xDomain, [this.left, this.right]);
    this.y = linScale(yDomain, [this.bottom, this.top]); // pixel y grows downward
  }

  /** Axis lines, ticks, labels, and the optional title. */
  axes(): string {
    const parts: string[] = [];
    const axisStyle = { stroke: "#333333", "stroke-width": 1 };
    parts.push(line(this.left, this.bottom, this.right, this.bottom, axisStyle));
    parts.push(line(this.left, this.top, this.left, this.bottom, axisStyle));
    for (const t of this.x.ticks(6)) {
      const px = this.x(t);
      parts.push(line(px, this.bottom, px, this.bottom + 5, axisStyle));
      parts.push(
        text(px, this.bottom + 18, tickLabel(t), {
          "font-size": 11,
          "text-anchor": "middle",
          class: "xtick",
        }),
      );
    }
    for (const t of this.y.ticks(6)) {
      const py = this.y(t);
      parts.push(line(this.left - 5, py, this.left, py, axisStyle));
      parts.push(
        text(this.left - 8, py + 4, tickLabel(t), {
          "font-size": 11,
          "text-anchor": "end",
          class: "ytick",
        }),
      );
    }
    if (this.opts.xLabel) {
      parts.push(
        text((this.left + this.right) / 2, this.bottom + 34, this.opts.xLabel, {
          "font-size": 12,
          "text-anchor": "middle",
        }),
      );
    }
    if (this.opts.yLabel) {
      const cx = 16;
      const cy = (this.top + this.bottom) / 2;
      parts.push(
        text(cx, cy, this.opts.yLabel, {
          "font-size": 12,
          "text-anchor": "middle",
          transform: `rotate(-90 ${cx} ${cy})`,
        }),
      );
    }
    if (this.opts.title) {
      parts.push(
        text((this.left + this.right) / 2, 20, this.opts.title, {
          "font-size": 14,
          "text-anchor": "middle",
          class: "title",
        }),
      );
    }
    return group({ class: "axes" }, parts.join(""));
  }
}
