"""Passive drifter advection through simulated currents.

Drifters carry no inertia: each forward-Euler step moves a position by
dt times the bilinearly interpolated cell velocity (u, v) = (hu, hv)/h,
wrapping into the periodic domain.  Trajectory forecasts advance every
ensemble member's own model state (with additive model error, when
given) and its own drifter copies, recording positions on a stride.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .gridfield import EnsembleMatrix, Grid2D, StateVector
from .models.error import ModelErrorSpec, sample_model_error
from .models.swe import SweConfig, step_swe

__all__ = ["advect", "forecast_trajectories", "TrajectorySet", "circular_mean"]


def _bilinear(field: np.ndarray, gx: np.ndarray, gy: np.ndarray) -> np.ndarray:
    """Periodic bilinear interpolation of an (ny, nx) field at fractional
    grid coordinates (gx, gy) measured in cells."""
    ny, nx = field.shape
    i0 = np.floor(gx).astype(int)
    j0 = np.floor(gy).astype(int)
    tx = gx - i0
    ty = gy - j0
    i0 %= nx
    j0 %= ny
    i1 = (i0 + 1) % nx
    j1 = (j0 + 1) % ny
    return (
        field[j0, i0] * (1 - tx) * (1 - ty)
        + field[j0, i1] * tx * (1 - ty)
        + field[j1, i0] * (1 - tx) * ty
        + field[j1, i1] * tx * ty
    )


def advect(state: StateVector, cfg: SweConfig, positions: np.ndarray, dt: float) -> np.ndarray:
    """One Euler step for every drifter; returns wrapped positions.

    The cell velocity u = hu / (H + eta), v = hv / (H + eta) is formed
    first and then interpolated, so a linear current field is advected
    exactly.
    """
    if state.n_vars != 3:
        raise ValueError("advection needs an (eta, hu, hv) state")
    pos = np.asarray(positions, dtype=float)
    if pos.ndim != 2 or pos.shape[1] != 2:
        raise ValueError("positions must be (n_drifters, 2)")
    grid = state.grid
    eta, hu, hv = state.fields()
    h = cfg.H_depth + eta
    hmin = float(h.min())
    if hmin <= 0.0:
        raise RuntimeError(f"dry cell in the current field (h = {hmin:.3e})")
    u = hu / h
    v = hv / h

    gx = pos[:, 0] / grid.dx
    gy = pos[:, 1] / grid.dy
    ui = _bilinear(u, gx, gy)
    vi = _bilinear(v, gx, gy)
    bad = ~(np.isfinite(ui) & np.isfinite(vi))
    if np.any(bad):
        d = int(np.nonzero(bad)[0][0])
        raise RuntimeError(f"drifter {d}: non-finite velocity at ({pos[d, 0]:.4g}, {pos[d, 1]:.4g})")

    out = np.empty_like(pos)
    out[:, 0] = (pos[:, 0] + dt * ui) % grid.lx
    out[:, 1] = (pos[:, 1] + dt * vi) % grid.ly
    return out


def circular_mean(values: np.ndarray, period: float, axis=0) -> np.ndarray:
    """Mean of periodic quantities via the angular embedding."""
    ang = np.asarray(values) * (2.0 * np.pi / period)
    m = np.arctan2(np.sin(ang).mean(axis=axis), np.cos(ang).mean(axis=axis))
    out = (m * period / (2.0 * np.pi)) % period
    # a tiny negative angle can round the modulo up to the period itself
    return np.where(out >= period, 0.0, out)


@dataclass
class TrajectorySet:
    """Recorded drifter tracks: positions[member, record, drifter, (x, y)]."""

    grid: Grid2D
    steps: np.ndarray  # recorded numerical-step indices
    positions: np.ndarray

    def __post_init__(self):
        self.steps = np.asarray(self.steps, dtype=int)
        self.positions = np.asarray(self.positions, dtype=float)
        if self.positions.ndim != 4 or self.positions.shape[3] != 2:
            raise ValueError("positions must be (Ne, n_records, n_drifters, 2)")
        if self.positions.shape[1] != self.steps.size:
            raise ValueError("record count does not match steps")

    @property
    def n_members(self) -> int:
        return self.positions.shape[0]

    @property
    def n_drifters(self) -> int:
        return self.positions.shape[2]

    def mean_trajectory(self) -> np.ndarray:
        """Periodic-aware ensemble mean, shape (n_records, n_drifters, 2)."""
        mx = circular_mean(self.positions[..., 0], self.grid.lx, axis=0)
        my = circular_mean(self.positions[..., 1], self.grid.ly, axis=0)
        return np.stack([mx, my], axis=-1)

    def final_positions(self, drifter: int) -> np.ndarray:
        """(Ne, 2) endpoints of one drifter, for density estimates."""
        return self.positions[:, -1, drifter, :]

    def to_csv(self, path) -> None:
        """Rows `member,drifter,step,x,y`."""
        with open(path, "w") as fh:
            fh.write("member,drifter,step,x,y\n")
            for e in range(self.n_members):
                for d in range(self.n_drifters):
                    for r, step in enumerate(self.steps):
                        x, y = self.positions[e, r, d]
                        fh.write(f"{e},{d},{step},{float(x)!r},{float(y)!r}\n")


def forecast_trajectories(
    ens: EnsembleMatrix,
    cfg: SweConfig,
    positions: np.ndarray,
    n_steps: int,
    record_stride: int = 1,
    error_spec: ModelErrorSpec | None = None,
    rng=None,
) -> TrajectorySet:
    """Advance each member and its drifters n_steps numerical steps.

    Drifters move every model step (dt = cfg.dt_num) through their own
    member's currents; additive model error is drawn per member every
    error_spec.interval seconds of model time.  Positions are recorded
    at step 0, every record_stride steps, and at the end.
    """
    if n_steps < 0:
        raise ValueError("n_steps must be >= 0")
    if record_stride < 1:
        raise ValueError("record_stride must be >= 1")
    if error_spec is not None and rng is None:
        raise ValueError("model error needs an rng")
    pos0 = np.asarray(positions, dtype=float)

    record_steps = list(range(0, n_steps + 1, record_stride))
    if record_steps[-1] != n_steps:
        record_steps.append(n_steps)
    err_every = None
    if error_spec is not None:
        err_every = max(1, int(round(error_spec.interval / cfg.dt_num)))

    ne = ens.n_members
    rngs = rng.spawn(ne) if rng is not None else [None] * ne
    out = np.empty((ne, len(record_steps), pos0.shape[0], 2))
    for e in range(ne):
        state = ens.member(e)
        pos = pos0.copy()
        out[e, 0] = pos
        rec = 1
        for step in range(1, n_steps + 1):
            pos = advect(state, cfg, pos, cfg.dt_num)
            state = step_swe(cfg, state, 1)
            if err_every is not None and step % err_every == 0:
                noise = sample_model_error(error_spec, ens.grid, cfg, rngs[e])
                state = StateVector(ens.grid, 3, state.values + noise.values)
            if rec < len(record_steps) and step == record_steps[rec]:
                out[e, rec] = pos
                rec += 1
    return TrajectorySet(ens.grid, np.asarray(record_steps), out)
