"""Local areas, Gaspari-Cohn weights, and disjoint observation batches.

Each observation site gets a local area (all cells within the torus
radius) and a smooth weight over it.  Sites whose areas overlap cannot be
analysed in the same pass, so sites are greedily colored into batches
with pairwise disjoint areas; within a batch the local analyses commute.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..gridfield import Grid2D, torus_distance
from ..observing import ObservationNetwork


def gaspari_cohn(d, c: float):
    """Standard fifth-order Gaspari-Cohn taper with compact support 2c.

    Vectorized in d; 1 at d=0, 0 from d=2c on, monotone in between.
    """
    if c <= 0:
        raise ValueError("half-support c must be > 0")
    d = np.asarray(d, dtype=float)
    if np.any(d < 0):
        raise ValueError("distance must be >= 0")
    r = d / c
    w = np.zeros_like(r)

    near = r <= 1.0
    rn = r[near]
    w[near] = -0.25 * rn**5 + 0.5 * rn**4 + 0.625 * rn**3 - 5.0 / 3.0 * rn**2 + 1.0

    far = (r > 1.0) & (r < 2.0)
    rf = r[far]
    w[far] = (
        rf**5 / 12.0
        - 0.5 * rf**4
        + 0.625 * rf**3
        + 5.0 / 3.0 * rf**2
        - 5.0 * rf
        + 4.0
        - 2.0 / (3.0 * rf)
    )
    out = np.clip(w, 0.0, 1.0)
    return out if out.ndim else float(out)


@dataclass
class LocalisationPlan:
    radius: float
    areas: list[np.ndarray]  # per site: cell indices within the radius
    batches: list[list[int]]  # site-index groups with disjoint areas
    w_loc: list[np.ndarray]  # per site: GC weight over its area cells

    def validate(self) -> None:
        for batch in self.batches:
            seen: set[int] = set()
            for j in batch:
                cells = set(self.areas[j].tolist())
                if seen & cells:
                    raise AssertionError(f"batch {batch} has overlapping areas")
                seen |= cells
        for j, w in enumerate(self.w_loc):
            if np.any(w < 0) or np.any(w > 1):
                raise AssertionError(f"site {j}: weight outside [0, 1]")


def build_localisation_plan(network: ObservationNetwork, grid: Grid2D, radius: float) -> LocalisationPlan:
    """Areas within the torus radius and a greedy batch coloring.

    Sites are processed in index order and placed in the first batch
    whose areas they do not intersect; the paper notes the analysis can
    depend (weakly) on this order, so it is fixed and deterministic.
    """
    if radius <= 0:
        raise ValueError("radius must be > 0")

    all_cells = np.arange(grid.n_cells)
    areas: list[np.ndarray] = []
    w_loc: list[np.ndarray] = []
    for cell, _var in network.sites:
        d = torus_distance(grid, cell, all_cells)
        area = all_cells[d <= radius]
        areas.append(area)
        # half-support radius/2 puts weight exactly 0 at the area boundary
        w_loc.append(gaspari_cohn(d[d <= radius], radius / 2.0))

    batches: list[list[int]] = []
    batch_cells: list[set[int]] = []
    for j in range(network.n_y):
        cells = set(areas[j].tolist())
        for b, used in enumerate(batch_cells):
            if not (used & cells):
                batches[b].append(j)
                used |= cells
                break
        else:
            batches.append([j])
            batch_cells.append(set(cells))
    return LocalisationPlan(radius=radius, areas=areas, batches=batches, w_loc=w_loc)
