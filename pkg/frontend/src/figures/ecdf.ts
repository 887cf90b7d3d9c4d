/** Empirical-CDF staircase overlaid on a Gaussian reference CDF. */

import { Frame } from "../scales.js";
import { group, path, polyline, svgDocument, text } from "../svg.js";

export interface EcdfOpts {
  title?: string;
  /** Reference mean and standard deviation. */
  mu: number;
  sd: number;
}

const W = 480;
const H = 360;

function gaussCdf(x: number, mu: number, sd: number): number {
  // Abramowitz-Stegun style erf approximation, |error| < 1.5e-7:
  // plenty below one pixel at figure scale
  const z = (x - mu) / (sd * Math.SQRT2);
  const t = 1 / (1 + 0.3275911 * Math.abs(z));
  const poly =
    t * (0.254829592 + t * (-0.284496736 + t * (1.421413741 + t * (-1.453152027 + t * 1.061405429))));
  const erf = 1 - poly * Math.exp(-z * z);
  return 0.5 * (1 + Math.sign(z) * erf);
}

/** Staircase through the sorted samples: F(x) jumps by 1/n at each one. */
export function renderEcdf(samples: number[], opts: EcdfOpts): string {
  if (samples.length === 0) throw new Error("ecdf needs at least one sample");
  if (!(opts.sd > 0)) throw new Error("reference sd must be > 0");
  const sorted = [...samples].sort((a, b) => a - b);
  const n = sorted.length;

  const xLo = Math.min(sorted[0]!, opts.mu - 4 * opts.sd);
  const xHi = Math.max(sorted[n - 1]!, opts.mu + 4 * opts.sd);
  const pad = 0.05 * (xHi - xLo || 1);
  const frame = new Frame([xLo - pad, xHi + pad], [0, 1], {
    width: W,
    height: H,
    title: opts.title,
    xLabel: "value",
    yLabel: "cumulative probability",
  });

  // reference curve
  const ref: Array<[number, number]> = [];
  for (let k = 0; k <= 200; k++) {
    const x = xLo - pad + ((xHi - xLo + 2 * pad) * k) / 200;
    ref.push([frame.x(x), frame.y(gaussCdf(x, opts.mu, opts.sd))]);
  }

  // ECDF staircase
  let d = `M ${frame.x(xLo - pad)} ${frame.y(0)}`;
  let prob = 0;
  for (let k = 0; k < n; k++) {
    const px = frame.x(sorted[k]!);
    d += ` H ${px}`;
    prob = (k + 1) / n;
    d += ` V ${frame.y(prob)}`;
  }
  d += ` H ${frame.x(xHi + pad)}`;

  const legendX = frame.left + 10;
  const legend =
    polyline(
      [
        [legendX, 30],
        [legendX + 24, 30],
      ],
      { stroke: "#888888", "stroke-width": 1.5 },
    ) +
    text(legendX + 30, 34, "reference", { "font-size": 11 }) +
    polyline(
      [
        [legendX, 46],
        [legendX + 24, 46],
      ],
      { stroke: "#1f77b4", "stroke-width": 2 },
    ) +
    text(legendX + 30, 50, `ensemble (n=${n})`, { "font-size": 11 });

  const body =
    frame.axes() +
    group(
      { class: "reference" },
      polyline(ref, { stroke: "#888888", "stroke-width": 1.5 }),
    ) +
    group(
      { class: "ecdf" },
      path(d, { fill: "none", stroke: "#1f77b4", "stroke-width": 2 }),
    ) +
    group({ class: "legend" }, legend);
  return svgDocument(W, H, body);
}
