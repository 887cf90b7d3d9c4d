"""Additive Gaussian model error: samplers and square-root factors.

Two constructions:

* ``matern_direct`` — a Matern-type field on a scalar state (used by the
  advection-diffusion case).  Q is materialized densely and Cholesky
  factored.

* ``balanced_swe`` — a latent iid draw on a coarsened grid, smoothed with
  a second-order autoregressive (SOAR) kernel, scaled to the requested
  marginal std, bilinearly projected onto the model grid as a surface
  perturbation, and completed with geostrophically balanced momenta

      hu = -(g H / f) * d(eta)/dy,   hv = +(g H / f) * d(eta)/dx

  (central differences, periodic wrap).  The full Q for this flavour is
  never formed; everything goes through the factor Q^{1/2}: latent ->
  state, which carries an exact adjoint (central differences are
  antisymmetric, the wrapped SOAR kernel is even so the circular
  convolution is self-adjoint, and the bilinear projection is a sparse
  matrix transposed directly).
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from ..gridfield import Grid2D, MaternSpec, StateVector, cholesky_factor, matern_covariance
from .swe import SweConfig

_KINDS = ("matern_direct", "balanced_swe")

# refuse to materialize dense Q above this state size (~130 MB)
_DENSE_Q_LIMIT = 4096


@dataclass(frozen=True)
class ModelErrorSpec:
    """What the additive error looks like and how often it is applied.

    interval is model time (s) between error additions; the samplers here
    do not use it, the experiment drivers do.
    """

    kind: str
    matern: MaternSpec
    coarse_factor: int = 1
    interval: float = 25.0

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ValueError(f"unknown model-error kind {self.kind!r} (want one of {_KINDS})")
        if int(self.coarse_factor) != self.coarse_factor or self.coarse_factor < 1:
            raise ValueError("coarse_factor must be an integer >= 1")
        if self.interval <= 0:
            raise ValueError("interval must be > 0")


class QFactor:
    """Square-root factor F with F F^T = Q, applied as an operator.

    Implementations expose latent_dim (columns of F), state_dim (rows),
    apply (latent -> state), apply_adjoint (state -> latent), and dense
    materializations guarded by size.
    """

    latent_dim: int
    state_dim: int
    n_vars: int

    def apply(self, z: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def apply_adjoint(self, w: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def matrix(self) -> np.ndarray:
        """Dense F, shape (state_dim, latent_dim)."""
        if self.state_dim * self.latent_dim > 50_000_000:
            raise ValueError(
                f"refusing to materialize a {self.state_dim} x {self.latent_dim} factor"
            )
        return self.apply(np.eye(self.latent_dim))

    def covariance(self) -> np.ndarray:
        """Dense Q = F F^T; guarded, intended for small toy grids only."""
        if self.state_dim > _DENSE_Q_LIMIT:
            raise ValueError(
                f"dense Q for state_dim={self.state_dim} exceeds the size guard "
                f"({_DENSE_Q_LIMIT}); use the factor form"
            )
        F = self.matrix()
        return F @ F.T


class DenseQFactor(QFactor):
    """Cholesky factor of a dense Matern covariance on grid cells."""

    def __init__(self, grid: Grid2D, matern: MaternSpec):
        self.grid = grid
        self.matern = matern
        self.n_vars = 1
        self.state_dim = grid.n_cells
        self.latent_dim = grid.n_cells
        self._Q = matern_covariance(grid, matern)
        if matern.sigma == 0.0:
            self._L = np.zeros_like(self._Q)
        else:
            self._L = cholesky_factor(self._Q)

    def apply(self, z):
        return self._L @ z

    def apply_adjoint(self, w):
        return self._L.T @ w

    def matrix(self):
        return self._L.copy()

    def covariance(self):
        return self._Q.copy()


def _soar_kernel_folded(ncx, ncy, dcx, dcy, psi):
    """Wrapped SOAR kernel on the coarse grid, tap at index 0 = zero offset.

    w(r) = (1 + r/L) exp(-r/L) with L = 1/psi, truncated at 4L.  Taps that
    alias onto the same modular index (kernel wider than the grid) are
    summed, so the folded kernel is exact for circular convolution.
    """
    L = 1.0 / psi
    mx = int(math.ceil(4.0 * L / dcx))
    my = int(math.ceil(4.0 * L / dcy))
    offx = np.arange(-mx, mx + 1)
    offy = np.arange(-my, my + 1)
    r = np.hypot(offx[None, :] * dcx, offy[:, None] * dcy)
    w = (1.0 + r / L) * np.exp(-r / L)
    w[r > 4.0 * L] = 0.0
    kern = np.zeros((ncy, ncx))
    np.add.at(kern, (offy[:, None] % ncy, offx[None, :] % ncx), w)
    return kern


def _bilinear_projection(grid: Grid2D, cf: int) -> sp.csr_matrix:
    """Sparse (n_fine x n_coarse) periodic bilinear interpolation matrix.

    Coarse node (ic, jc) sits on fine cell (ic*cf, jc*cf).
    """
    nx, ny = grid.nx, grid.ny
    ncx, ncy = nx // cf, ny // cf
    II, JJ = np.meshgrid(np.arange(nx), np.arange(ny))  # (ny, nx) fine cells
    rows = (JJ * nx + II).ravel()

    I0, FX = II // cf, (II % cf) / cf
    J0, FY = JJ // cf, (JJ % cf) / cf
    I1 = (I0 + 1) % ncx
    J1 = (J0 + 1) % ncy

    corners = [
        (I0, J0, (1 - FX) * (1 - FY)),
        (I1, J0, FX * (1 - FY)),
        (I0, J1, (1 - FX) * FY),
        (I1, J1, FX * FY),
    ]
    cols = np.concatenate([(jc * ncx + ic).ravel() for ic, jc, _ in corners])
    vals = np.concatenate([w.ravel() for _, _, w in corners])
    rows4 = np.tile(rows, 4)
    P = sp.coo_matrix((vals, (rows4, cols)), shape=(nx * ny, ncx * ncy))
    return P.tocsr()


class BalancedSweQFactor(QFactor):
    """Operator-form Q^{1/2} for the shallow-water model error.

    latent (ncy*ncx iid) -> SOAR smooth -> scale to marginal std sigma ->
    bilinear projection -> (eta, hu, hv) with geostrophic balance.
    """

    def __init__(self, grid: Grid2D, cfg: SweConfig, matern: MaternSpec, coarse_factor: int = 1):
        if cfg.f == 0:
            raise ValueError("balanced model error needs f != 0")
        if grid.nx % coarse_factor or grid.ny % coarse_factor:
            raise ValueError(
                f"coarse_factor {coarse_factor} must divide the grid "
                f"({grid.nx} x {grid.ny})"
            )
        self.grid = grid
        self.cfg = cfg
        self.matern = matern
        self.cf = int(coarse_factor)
        self.ncx = grid.nx // self.cf
        self.ncy = grid.ny // self.cf
        self.n_vars = 3
        self.latent_dim = self.ncx * self.ncy
        self.state_dim = 3 * grid.n_cells

        kern = _soar_kernel_folded(self.ncx, self.ncy, self.cf * grid.dx, self.cf * grid.dy, matern.psi)
        self._kern_hat = np.fft.rfft2(kern)
        # after circular convolution of iid N(0,1), the marginal variance is
        # sum(kern^2); rescale so eta's marginal std is sigma on coarse nodes
        self._scale = matern.sigma / math.sqrt(float(np.sum(kern**2)))
        self._P = _bilinear_projection(grid, self.cf)
        self._bal = cfg.g * cfg.H_depth / cfg.f

    # -- pieces ----------------------------------------------------------
    def _smooth(self, zc):
        # circular convolution with the (even) folded SOAR kernel
        out = np.fft.irfft2(np.fft.rfft2(zc) * self._kern_hat, s=zc.shape)
        return out * self._scale

    def _eta_from_latent(self, z):
        zc = np.asarray(z, dtype=float).reshape(self.ncy, self.ncx)
        s = self._smooth(zc)
        return (self._P @ s.ravel()).reshape(self.grid.ny, self.grid.nx)

    @staticmethod
    def _ddx(a, dx):
        return (np.roll(a, -1, axis=1) - np.roll(a, 1, axis=1)) / (2.0 * dx)

    @staticmethod
    def _ddy(a, dy):
        return (np.roll(a, -1, axis=0) - np.roll(a, 1, axis=0)) / (2.0 * dy)

    # -- operator --------------------------------------------------------
    def apply(self, z):
        z = np.asarray(z, dtype=float)
        if z.ndim == 2:
            return np.column_stack([self.apply(z[:, k]) for k in range(z.shape[1])])
        if z.shape != (self.latent_dim,):
            raise ValueError(f"latent vector length {z.shape} != {self.latent_dim}")
        eta = self._eta_from_latent(z)
        hu = -self._bal * self._ddy(eta, self.grid.dy)
        hv = +self._bal * self._ddx(eta, self.grid.dx)
        return np.concatenate([eta.ravel(), hu.ravel(), hv.ravel()])

    def apply_adjoint(self, w):
        w = np.asarray(w, dtype=float)
        if w.ndim == 2:
            return np.column_stack([self.apply_adjoint(w[:, k]) for k in range(w.shape[1])])
        if w.shape != (self.state_dim,):
            raise ValueError(f"state vector length {w.shape} != {self.state_dim}")
        ny, nx = self.grid.ny, self.grid.nx
        w_eta = w[: nx * ny].reshape(ny, nx)
        w_hu = w[nx * ny : 2 * nx * ny].reshape(ny, nx)
        w_hv = w[2 * nx * ny :].reshape(ny, nx)
        # adjoint of the balance map: D^T = -D for periodic central diffs
        eta_adj = w_eta + self._bal * self._ddy(w_hu, self.grid.dy) - self._bal * self._ddx(w_hv, self.grid.dx)
        s_adj = (self._P.T @ eta_adj.ravel()).reshape(self.ncy, self.ncx)
        return self._smooth(s_adj).ravel()  # smoothing is self-adjoint


@functools.lru_cache(maxsize=32)
def q_factor(spec: ModelErrorSpec, grid: Grid2D, cfg: SweConfig | None = None) -> QFactor:
    """Cached factor construction (Cholesky / kernel setup is the cost)."""
    if spec.kind == "matern_direct":
        return DenseQFactor(grid, spec.matern)
    if cfg is None:
        raise ValueError("balanced_swe model error needs the SWE config")
    return BalancedSweQFactor(grid, cfg, spec.matern, spec.coarse_factor)


def sample_model_error(
    spec: ModelErrorSpec, grid: Grid2D, cfg: SweConfig | None, rng
) -> StateVector:
    """One additive error draw as a StateVector (n_vars 1 or 3 by kind)."""
    F = q_factor(spec, grid, cfg)
    z = rng.standard_normal(F.latent_dim)
    return StateVector(grid, F.n_vars, F.apply(z))


def model_error_covariance(spec: ModelErrorSpec, grid: Grid2D, cfg: SweConfig | None = None):
    """Dense Q for matern_direct; the operator factor for balanced_swe.

    The balanced flavour never materializes Q (size guard in the factor);
    callers that really need the dense matrix on a toy grid can use
    q_factor(...).covariance().
    """
    if spec.kind == "matern_direct":
        return matern_covariance(grid, spec.matern)
    return q_factor(spec, grid, cfg)
