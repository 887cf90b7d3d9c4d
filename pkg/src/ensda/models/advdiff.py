"""Linear advection-diffusion-damping model on a periodic grid.

One forward-Euler step with central differences in space is assembled as a
sparse 5-point stencil matrix M, so the model is literally x' = M x + noise.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from ..gridfield import Grid2D, StateVector

# relative slack for the diffusive stability bound: the reference parameter
# set (d=0.25, dt=0.01, dx=dy=0.1) sits exactly on the limit
_CFL_SLACK = 1e-9


@dataclass(frozen=True)
class AdvDiffConfig:
    d: float
    v: tuple[float, float]
    zeta: float
    dt: float

    def __post_init__(self):
        if self.d < 0:
            raise ValueError("diffusion coefficient d must be >= 0")
        if self.dt <= 0:
            raise ValueError("dt must be > 0")


@dataclass
class LinearOperator:
    """One model step as a sparse matrix over flat cell indices."""

    grid: Grid2D
    matrix: sp.csr_matrix

    def apply(self, values: np.ndarray) -> np.ndarray:
        return self.matrix @ values

    def dense(self) -> np.ndarray:
        return self.matrix.toarray()


def advdiff_cfl_numbers(grid: Grid2D, cfg: AdvDiffConfig) -> tuple[float, float]:
    """(advective, diffusive) stability numbers; both must be <= 1."""
    vx, vy = cfg.v
    adv = cfg.dt * (abs(vx) / grid.dx + abs(vy) / grid.dy)
    dif = cfg.dt * cfg.d * (2.0 / grid.dx**2 + 2.0 / grid.dy**2)
    return adv, dif


def build_advdiff_operator(grid: Grid2D, cfg: AdvDiffConfig) -> LinearOperator:
    """Assemble the forward-Euler/central-difference step matrix.

    Stencil coefficients for concentration c at cell (i, j):

        center      1 + dt*(-2d/dx^2 - 2d/dy^2 + zeta)
        east/west   dt*(d/dx^2 -+ vx/(2dx))
        north/south dt*(d/dy^2 -+ vy/(2dy))

    with periodic wrap on both axes.  Rejects configurations violating the
    forward-Euler stability bounds.
    """
    adv, dif = advdiff_cfl_numbers(grid, cfg)
    if adv > 1 + _CFL_SLACK:
        raise ValueError(f"advective stability number {adv:.6g} exceeds 1")
    if dif > 1 + _CFL_SLACK:
        raise ValueError(f"diffusive stability number {dif:.6g} exceeds 1")

    nx, ny = grid.nx, grid.ny
    n = grid.n_cells
    vx, vy = cfg.v
    cx = cfg.dt * cfg.d / grid.dx**2
    cy = cfg.dt * cfg.d / grid.dy**2
    ax = cfg.dt * vx / (2.0 * grid.dx)
    ay = cfg.dt * vy / (2.0 * grid.dy)

    k = np.arange(n)
    i = k % nx
    j = k // nx
    center = np.full(n, 1.0 + cfg.dt * (-2.0 * cfg.d / grid.dx**2 - 2.0 * cfg.d / grid.dy**2 + cfg.zeta))
    east = j * nx + (i + 1) % nx
    west = j * nx + (i - 1) % nx
    north = ((j + 1) % ny) * nx + i
    south = ((j - 1) % ny) * nx + i

    rows = np.concatenate([k, k, k, k, k])
    cols = np.concatenate([k, east, west, north, south])
    data = np.concatenate(
        [
            center,
            np.full(n, cx - ax),
            np.full(n, cx + ax),
            np.full(n, cy - ay),
            np.full(n, cy + ay),
        ]
    )
    # duplicate (row, col) pairs are summed by the sparse constructor, which
    # handles degenerate nx == 1 or ny == 2 wraps correctly
    m = sp.coo_matrix((data, (rows, cols)), shape=(n, n)).tocsr()
    return LinearOperator(grid, m)


def step_linear(op: LinearOperator, x: StateVector, noise: StateVector | None = None) -> StateVector:
    """x' = M x (+ noise); the input state is left untouched."""
    if x.values.size != op.matrix.shape[1]:
        raise ValueError(
            f"state length {x.values.size} does not match operator size {op.matrix.shape[1]}"
        )
    out = op.apply(x.values)
    if noise is not None:
        if noise.values.size != out.size:
            raise ValueError("noise length does not match state length")
        out = out + noise.values
    return StateVector(x.grid, x.n_vars, out)
