/** Color-mapped cell maps for `i,j,value` field CSVs. */

import type { Field } from "../csv.js";
import { fieldAt } from "../csv.js";
import { divergingColor, extent, linScale, sequentialColor, tickLabel } from "../scales.js";
import { group, rect, svgDocument, text } from "../svg.js";

export interface FieldMapOpts {
  title?: string;
  /** Fixed color limits; defaults to the data extent. */
  clim?: [number, number];
  /** Center a diverging palette here; otherwise the palette is sequential. */
  center?: number;
  /** Cell annotations, e.g. observation sites, as (i, j) pairs. */
  marks?: Array<[number, number]>;
}

const PLOT_W = 520;
const BAR_W = 14;
const BAR_GAP = 12;
const MARGIN = { top: 36, right: 64, bottom: 24, left: 24 };

/**
 * Render one field as an nx-by-ny cell map with a colorbar.
 *
 * Grid row j is drawn with y increasing upward (row 0 at the bottom),
 * matching the model's coordinate convention.
 */
export function renderFieldMap(field: Field, opts: FieldMapOpts = {}): string {
  const { nx, ny, values } = field;
  const cell = Math.max(2, Math.floor(PLOT_W / nx));
  const w = MARGIN.left + cell * nx + BAR_GAP + BAR_W + MARGIN.right;
  const h = MARGIN.top + cell * ny + MARGIN.bottom;

  let [lo, hi] = opts.clim ?? extent(values);
  if (lo === hi) {
    lo -= 1;
    hi += 1;
  }
  const color =
    opts.center === undefined
      ? sequentialColor(lo, hi)
      : divergingColor(opts.center, Math.max(hi - opts.center, opts.center - lo));

  const px = (i: number) => MARGIN.left + i * cell;
  const py = (j: number) => MARGIN.top + (ny - 1 - j) * cell;

  const cells: string[] = [];
  for (let j = 0; j < ny; j++) {
    for (let i = 0; i < nx; i++) {
      cells.push(rect(px(i), py(j), cell, cell, { fill: color(fieldAt(field, i, j)) }));
    }
  }

  const marks = (opts.marks ?? []).map(([i, j]) =>
    rect(px(i), py(j), cell, cell, {
      fill: "none",
      stroke: "#000000",
      "stroke-width": 1.5,
      class: "mark",
    }),
  );

  // vertical colorbar: sampled strip plus end/quarter tick labels
  const barX = MARGIN.left + cell * nx + BAR_GAP;
  const barH = cell * ny;
  const nStrip = 64;
  const strip: string[] = [];
  const sv = linScale([0, nStrip - 1], [lo, hi]);
  for (let k = 0; k < nStrip; k++) {
    const y = MARGIN.top + barH - ((k + 1) * barH) / nStrip;
    strip.push(rect(barX, y, BAR_W, barH / nStrip + 0.5, { fill: color(sv(k)) }));
  }
  const barTicks = [lo, (lo + hi) / 2, hi].map((v) => {
    const y = MARGIN.top + barH - ((v - lo) / (hi - lo)) * barH;
    return text(barX + BAR_W + 4, y + 4, tickLabel(v), { "font-size": 11, class: "cbar-tick" });
  });

  const title = opts.title
    ? text(MARGIN.left + (cell * nx) / 2, 22, opts.title, {
        "font-size": 14,
        "text-anchor": "middle",
        class: "title",
      })
    : "";

  const body =
    group({ class: "cells" }, cells.join("")) +
    group({ class: "marks" }, marks.join("")) +
    group({ class: "colorbar" }, strip.join("") + barTicks.join("")) +
    title;
  return svgDocument(w, h, body);
}
