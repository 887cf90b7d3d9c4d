"""Uniform Cartesian grids, flat state vectors, and Matern random fields.

Cell centers sit at integer multiples of the cell size: cell (i, j) is at
(i*dx, j*dy).  A flat cell index k enumerates cells row-major in j, i.e.
k = j*nx + i.  Multi-variable states store one full field per variable,
variable-major: values.reshape(n_vars, ny, nx).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class Grid2D:
    """Uniform 2-D grid; distances honour periodic axes (minimal image)."""

    nx: int
    ny: int
    dx: float
    dy: float
    periodic_x: bool = True
    periodic_y: bool = True

    def __post_init__(self):
        if self.nx < 1 or self.ny < 1:
            raise ValueError(f"grid needs nx,ny >= 1, got {self.nx}x{self.ny}")
        if self.dx <= 0 or self.dy <= 0:
            raise ValueError(f"cell sizes must be positive, got dx={self.dx}, dy={self.dy}")

    @property
    def n_cells(self) -> int:
        return self.nx * self.ny

    @property
    def lx(self) -> float:
        """Domain extent in x (periodic wrap length)."""
        return self.nx * self.dx

    @property
    def ly(self) -> float:
        return self.ny * self.dy

    def cell_index(self, i, j):
        """(i, j) -> flat index; bijective on [0, nx*ny)."""
        return j * self.nx + i

    def cell_ij(self, k):
        return k % self.nx, k // self.nx

    def cell_coords(self, k):
        """Physical center coordinates of cell(s) k."""
        i, j = self.cell_ij(np.asarray(k))
        return i * self.dx, j * self.dy


def torus_distance(grid: Grid2D, k, l):
    """Distance between cell centers k and l (either may be an array).

    On periodic axes the minimal-image separation is used, so e.g. cells
    0 and nx-1 on a periodic axis are one cell apart, not nx-1.
    """
    xi, yi = grid.cell_coords(k)
    xj, yj = grid.cell_coords(l)
    dx = np.abs(xi - xj)
    dy = np.abs(yi - yj)
    if grid.periodic_x:
        dx = np.minimum(dx, grid.lx - dx)
    if grid.periodic_y:
        dy = np.minimum(dy, grid.ly - dy)
    return np.hypot(dx, dy)


@dataclass
class StateVector:
    """Flat multi-variable field values on a grid.

    values has length n_vars * nx * ny; variable f's field is
    values.reshape(n_vars, ny, nx)[f].
    """

    grid: Grid2D
    n_vars: int
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        expect = self.n_vars * self.grid.n_cells
        if self.values.shape != (expect,):
            raise ValueError(
                f"state length {self.values.shape} does not match "
                f"n_vars*nx*ny = {expect}"
            )
        if not np.all(np.isfinite(self.values)):
            raise ValueError("state contains non-finite entries")

    @property
    def n(self) -> int:
        return self.values.size

    def fields(self) -> np.ndarray:
        """(n_vars, ny, nx) view of the values."""
        return self.values.reshape(self.n_vars, self.grid.ny, self.grid.nx)

    def copy(self) -> "StateVector":
        return StateVector(self.grid, self.n_vars, self.values.copy())


def zero_state(grid: Grid2D, n_vars: int = 1) -> StateVector:
    return StateVector(grid, n_vars, np.zeros(n_vars * grid.n_cells))


@dataclass
class EnsembleMatrix:
    """Ne member states sharing one grid, stored column-wise (N_X x Ne)."""

    grid: Grid2D
    n_vars: int
    X: np.ndarray  # shape (N_X, Ne)

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=float)
        if self.X.ndim != 2 or self.X.shape[0] != self.n_vars * self.grid.n_cells:
            raise ValueError(f"ensemble matrix has shape {self.X.shape}")

    @property
    def n_members(self) -> int:
        return self.X.shape[1]

    def member(self, e: int) -> StateVector:
        return StateVector(self.grid, self.n_vars, self.X[:, e].copy())

    def mean(self) -> np.ndarray:
        return self.X.mean(axis=1)

    def perturbations(self) -> np.ndarray:
        """Member deviations from the ensemble mean, same shape as X."""
        return self.X - self.mean()[:, None]

    def copy(self) -> "EnsembleMatrix":
        return EnsembleMatrix(self.grid, self.n_vars, self.X.copy())

    @classmethod
    def from_members(cls, members) -> "EnsembleMatrix":
        first = members[0]
        X = np.column_stack([m.values for m in members])
        return cls(first.grid, first.n_vars, X)


@dataclass(frozen=True)
class MaternSpec:
    """Marginal std sigma and inverse correlation length psi."""

    sigma: float
    psi: float

    def __post_init__(self):
        if self.sigma < 0:
            raise ValueError("sigma must be >= 0")
        if self.psi <= 0:
            raise ValueError("psi must be > 0")

    def correlation(self, d):
        """Correlation at distance d: (1 + psi*d) * exp(-psi*d)."""
        pd = self.psi * np.asarray(d, dtype=float)
        return (1.0 + pd) * np.exp(-pd)


def matern_covariance(grid: Grid2D, spec: MaternSpec) -> np.ndarray:
    """Dense covariance sigma^2 (1 + psi D) exp(-psi D) over all cell pairs.

    D is the torus (minimal-image) distance between cell centers.  The
    result is symmetrized so it is bitwise symmetric.
    """
    if grid.n_cells < 1:
        raise ValueError("empty grid")
    k = np.arange(grid.n_cells)
    x, y = grid.cell_coords(k)
    sx = np.abs(x[:, None] - x[None, :])
    sy = np.abs(y[:, None] - y[None, :])
    if grid.periodic_x:
        sx = np.minimum(sx, grid.lx - sx)
    if grid.periodic_y:
        sy = np.minimum(sy, grid.ly - sy)
    d = np.hypot(sx, sy)
    cov = spec.sigma**2 * spec.correlation(d)
    return 0.5 * (cov + cov.T)


def cholesky_factor(cov: np.ndarray, jitter: float = 1e-10) -> np.ndarray:
    """Lower Cholesky factor, retrying once with a diagonal jitter.

    The jitter is scaled by the largest diagonal entry (i.e. ~sigma^2).
    A second failure signals a genuinely non-PSD matrix, which for the
    Matern family means a bad psi/grid combination.
    """
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        bump = jitter * max(float(np.max(np.diag(cov))), 1.0)
        try:
            return np.linalg.cholesky(cov + bump * np.eye(cov.shape[0]))
        except np.linalg.LinAlgError as err:
            raise np.linalg.LinAlgError(
                "covariance is not positive semi-definite (jitter retry failed)"
            ) from err


def sample_field(mean: StateVector, cov_factor: np.ndarray, rng) -> StateVector:
    """One Gaussian field draw: mean + L z with z ~ N(0, I).

    cov_factor is an (n, m) factor L with L L^T the target covariance
    (square for a Cholesky factor; m may differ for reduced-rank factors).
    """
    cov_factor = np.asarray(cov_factor)
    if cov_factor.shape[0] != mean.n:
        raise ValueError(
            f"factor rows {cov_factor.shape[0]} != state length {mean.n}"
        )
    z = rng.standard_normal(cov_factor.shape[1])
    return StateVector(mean.grid, mean.n_vars, mean.values + cov_factor @ z)


def seeded_rng(master_seed: int, *stream) -> np.random.Generator:
    """Generator for a named stream derived from one logged 64-bit seed.

    Each distinct integer tuple (member index, replicate id, ...) gives an
    independent, reproducible stream.
    """
    return np.random.default_rng(np.random.SeedSequence(master_seed, spawn_key=stream))
