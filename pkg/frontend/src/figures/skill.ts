/** Metric time series: one line per replicate plus the across-rep mean. */

import type { MetricsTable, Series } from "../csv.js";
import { extent, Frame } from "../scales.js";
import { group, polyline, svgDocument, text } from "../svg.js";

export interface SkillOpts {
  metric: string;
  title?: string;
  /** Log-scale the values (positive metrics spanning decades). */
  logy?: boolean;
  /** Replicate ids to draw; defaults to every replicate of the metric. */
  reps?: number[];
}

const W = 560;
const H = 360;

export function renderSkillSeries(table: MetricsTable, opts: SkillOpts): string {
  const repIds = opts.reps ?? table.reps(opts.metric);
  const series: Series[] = [];
  for (const rep of repIds) {
    const s = table.series(opts.metric, rep);
    if (!s) throw new Error(`metric '${opts.metric}' has no replicate ${rep}`);
    series.push(s);
  }
  if (series.length === 0) {
    throw new Error(`metric '${opts.metric}' not present (have: ${table.metrics().join(", ")})`);
  }

  const tf = (v: number): number => {
    if (!opts.logy) return v;
    if (v <= 0) throw new Error(`log scale needs positive values, got ${v}`);
    return Math.log10(v);
  };

  const allSteps = series.flatMap((s) => s.steps);
  const allVals = series.flatMap((s) => s.values.map(tf));
  const frame = new Frame(extent(allSteps), extent(allVals), {
    width: W,
    height: H,
    title: opts.title ?? opts.metric,
    xLabel: "model step",
    yLabel: opts.logy ? `log10 ${opts.metric}` : opts.metric,
  });

  const lines = series.map((s) =>
    polyline(
      s.steps.map((st, k) => [frame.x(st), frame.y(tf(s.values[k]!))] as [number, number]),
      { stroke: "#9ecae1", "stroke-width": 1, class: `rep rep-${s.rep}` },
    ),
  );

  // across-replicate mean at each step index (replicates share the schedule)
  let mean = "";
  const n0 = series[0]!.steps.length;
  if (series.length > 1 && series.every((s) => s.steps.length === n0)) {
    const pts: Array<[number, number]> = [];
    for (let k = 0; k < n0; k++) {
      const m = series.reduce((acc, s) => acc + s.values[k]!, 0) / series.length;
      pts.push([frame.x(series[0]!.steps[k]!), frame.y(tf(m))]);
    }
    mean = polyline(pts, { stroke: "#08519c", "stroke-width": 2.5, class: "mean" });
  }

  const note =
    series.length > 1
      ? text(frame.right - 4, frame.top + 12, `${series.length} replicates + mean`, {
          "font-size": 11,
          "text-anchor": "end",
        })
      : "";

  const body = frame.axes() + group({ class: "series" }, lines.join("") + mean) + note;
  return svgDocument(W, H, body);
}
