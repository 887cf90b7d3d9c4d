/** Readers for the experiment harness's CSV output schemas. */

import { readFileSync } from "node:fs";
import Papa from "papaparse";

/** Raised when a CSV does not match the expected harness schema. */
export class SchemaError extends Error {
  constructor(
    public readonly file: string,
    public readonly column: string,
    detail: string,
  ) {
    super(`${file}: column '${column}': ${detail}`);
    this.name = "SchemaError";
  }
}

type Row = Record<string, string>;

function parseRows(path: string, expected: string[]): Row[] {
  const text = readFileSync(path, "utf-8");
  const parsed = Papa.parse<Row>(text.trim(), {
    header: true,
    skipEmptyLines: true,
  });
  const got = parsed.meta.fields ?? [];
  for (const col of expected) {
    if (!got.includes(col)) {
      throw new SchemaError(path, col, `missing (header has: ${got.join(", ")})`);
    }
  }
  return parsed.data;
}

function num(path: string, row: Row, col: string): number {
  const raw = row[col];
  const v = Number(raw);
  if (raw === undefined || raw === "" || Number.isNaN(v)) {
    throw new SchemaError(path, col, `non-numeric value ${JSON.stringify(raw)}`);
  }
  return v;
}

/** A dense 2-D field, row-major with index j * nx + i. */
export interface Field {
  nx: number;
  ny: number;
  values: Float64Array;
}

export function fieldAt(f: Field, i: number, j: number): number {
  return f.values[j * f.nx + i]!;
}

/** `i,j,value` rows covering every cell of an (nx, ny) grid exactly once. */
export function readFieldCsv(path: string): Field {
  const rows = parseRows(path, ["i", "j", "value"]);
  if (rows.length === 0) throw new SchemaError(path, "i", "no data rows");
  let nx = 0;
  let ny = 0;
  for (const row of rows) {
    nx = Math.max(nx, num(path, row, "i") + 1);
    ny = Math.max(ny, num(path, row, "j") + 1);
  }
  if (rows.length !== nx * ny) {
    throw new SchemaError(path, "i", `${rows.length} rows do not fill a ${nx}x${ny} grid`);
  }
  const values = new Float64Array(nx * ny).fill(Number.NaN);
  for (const row of rows) {
    values[num(path, row, "j") * nx + num(path, row, "i")] = num(path, row, "value");
  }
  if (values.some(Number.isNaN)) {
    throw new SchemaError(path, "value", "grid has duplicate or missing cells");
  }
  return { nx, ny, values };
}

/** One metric's time series for one replicate. */
export interface Series {
  metric: string;
  rep: number;
  steps: number[];
  values: number[];
}

/** Long-format `metric,rep,seed,step,value` table. */
export class MetricsTable {
  private bySeries = new Map<string, Series>();

  constructor(rows: Series[]) {
    for (const s of rows) this.bySeries.set(`${s.metric}|${s.rep}`, s);
  }

  metrics(): string[] {
    return [...new Set([...this.bySeries.values()].map((s) => s.metric))].sort();
  }

  reps(metric: string): number[] {
    return [...this.bySeries.values()]
      .filter((s) => s.metric === metric)
      .map((s) => s.rep)
      .sort((a, b) => a - b);
  }

  series(metric: string, rep: number): Series | undefined {
    return this.bySeries.get(`${metric}|${rep}`);
  }
}

export function readMetricsCsv(path: string): MetricsTable {
  const rows = parseRows(path, ["metric", "rep", "seed", "step", "value"]);
  const acc = new Map<string, Series>();
  for (const row of rows) {
    const metric = row["metric"];
    if (!metric) throw new SchemaError(path, "metric", "empty metric name");
    const rep = num(path, row, "rep");
    const key = `${metric}|${rep}`;
    let s = acc.get(key);
    if (!s) {
      s = { metric, rep, steps: [], values: [] };
      acc.set(key, s);
    }
    s.steps.push(num(path, row, "step"));
    s.values.push(num(path, row, "value"));
  }
  return new MetricsTable([...acc.values()]);
}

/** `bin,count` rank-histogram rows with contiguous bins from 0. */
export function readRankHistCsv(path: string): number[] {
  const rows = parseRows(path, ["bin", "count"]);
  if (rows.length === 0) throw new SchemaError(path, "bin", "no data rows");
  const counts = new Array<number>(rows.length).fill(Number.NaN);
  for (const row of rows) {
    const b = num(path, row, "bin");
    if (!Number.isInteger(b) || b < 0 || b >= rows.length) {
      throw new SchemaError(path, "bin", `bins must be 0..${rows.length - 1}, got ${b}`);
    }
    counts[b] = num(path, row, "count");
  }
  if (counts.some(Number.isNaN)) {
    throw new SchemaError(path, "bin", "duplicate bins");
  }
  return counts;
}

/** One trajectory: positions of a drifter carried by one member. */
export interface Track {
  member: number;
  drifter: number;
  steps: number[];
  xs: number[];
  ys: number[];
}

/** `member,drifter,step,x,y` rows grouped into per-(member, drifter) tracks. */
export function readDriftCsv(path: string): Track[] {
  const rows = parseRows(path, ["member", "drifter", "step", "x", "y"]);
  const acc = new Map<string, Track>();
  for (const row of rows) {
    const member = num(path, row, "member");
    const drifter = num(path, row, "drifter");
    const key = `${member}|${drifter}`;
    let t = acc.get(key);
    if (!t) {
      t = { member, drifter, steps: [], xs: [], ys: [] };
      acc.set(key, t);
    }
    t.steps.push(num(path, row, "step"));
    t.xs.push(num(path, row, "x"));
    t.ys.push(num(path, row, "y"));
  }
  return [...acc.values()].sort((a, b) => a.member - b.member || a.drifter - b.drifter);
}

/** `site,member,value` terminal ensemble samples, keyed by site label. */
export function readSiteSamplesCsv(path: string): Map<string, number[]> {
  const rows = parseRows(path, ["site", "member", "value"]);
  const out = new Map<string, number[]>();
  for (const row of rows) {
    const site = row["site"];
    if (!site) throw new SchemaError(path, "site", "empty site label");
    if (!out.has(site)) out.set(site, []);
    out.get(site)!.push(num(path, row, "value"));
  }
  return out;
}
