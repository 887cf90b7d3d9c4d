/** Rank histogram bars with the uniform reference line. */

import { Frame } from "../scales.js";
import { group, line, rect, svgDocument } from "../svg.js";

export interface RankHistOpts {
  title?: string;
}

const W = 520;
const H = 340;

/**
 * Bars show relative frequency per rank bin; the dashed horizontal line
 * marks the frequency a perfectly calibrated (uniform) histogram would
 * put in every bin.
 */
export function renderRankHistogram(counts: number[], opts: RankHistOpts = {}): string {
  const nBins = counts.length;
  if (nBins < 2) throw new Error("rank histogram needs at least two bins");
  const total = counts.reduce((a, b) => a + b, 0);
  if (total <= 0) throw new Error("rank histogram has no counts");
  const freqs = counts.map((c) => c / total);
  const uniform = 1 / nBins;
  const yMax = Math.max(...freqs, uniform) * 1.1;

  const frame = new Frame([0, nBins], [0, yMax], {
    width: W,
    height: H,
    title: opts.title,
    xLabel: "rank of truth within ensemble",
    yLabel: "frequency",
  });

  const barW = frame.x(1) - frame.x(0);
  const bars = freqs.map((f, b) =>
    rect(frame.x(b) + 0.5, frame.y(f), Math.max(0.5, barW - 1), frame.y(0) - frame.y(f), {
      fill: "#4c78a8",
      class: "bar",
      "data-bin": b,
    }),
  );

  const refLine = line(frame.x(0), frame.y(uniform), frame.x(nBins), frame.y(uniform), {
    stroke: "#333333",
    "stroke-width": 1.5,
    "stroke-dasharray": "6 4",
    class: "uniform",
  });

  const body = frame.axes() + group({ class: "bars" }, bars.join("")) + refLine;
  return svgDocument(W, H, body);
}
