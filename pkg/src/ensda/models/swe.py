"""Rotational shallow-water equations on a doubly periodic grid.

State variables are surface deviation eta and vertically integrated
momenta hu, hv, with total depth h = H + eta:

    eta_t + (hu)_x + (hv)_y = 0
    (hu)_t + (hu u + g h^2 / 2)_x + (hu v)_y = +f hv
    (hv)_t + (hv u)_x + (hv v + g h^2 / 2)_y = -f hu

Discretisation: central differences of the flux form plus a weak
flux-form biharmonic filter, advanced with Heun's method (RK2).  The
filter coefficient is nu4 = k4_coeff * sqrt(g H) * dx^3; it removes the
weak RK2 instability of the unfiltered central scheme while keeping
smooth balanced states steady to high accuracy.  Total mass is conserved
to rounding because every term telescopes over the periodic domain.

A compiled kernel (Cython) is used when available; a numpy fallback
gives identical results up to rounding.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..gridfield import Grid2D, StateVector

try:  # compiled hot loop; optional
    from . import _swe_kernel

    _HAVE_KERNEL = True
except ImportError:  # pragma: no cover - depends on build environment
    _swe_kernel = None
    _HAVE_KERNEL = False


class SweAbort(RuntimeError):
    """Numerical abort: drying or a stability violation, with location."""


@dataclass(frozen=True)
class SweConfig:
    H_depth: float
    g: float
    f: float
    dx: float
    dy: float
    dt_num: float
    k4_coeff: float = 0.003

    def __post_init__(self):
        if self.H_depth <= 0:
            raise ValueError("equilibrium depth must be positive")
        if self.g <= 0:
            raise ValueError("g must be positive")
        c = math.sqrt(self.g * self.H_depth)
        cfl = self.dt_num * c * (1.0 / self.dx + 1.0 / self.dy)
        if cfl > 1.0:
            raise ValueError(
                f"dt_num={self.dt_num} violates the gravity-wave CFL bound "
                f"(number {cfl:.3f} > 1 at sqrt(gH)={c:.2f} m/s)"
            )

    @property
    def wave_speed(self) -> float:
        return math.sqrt(self.g * self.H_depth)

    @property
    def nu4(self) -> float:
        return self.k4_coeff * self.wave_speed * self.dx**3


def available_backends() -> tuple[str, ...]:
    return ("cython", "numpy") if _HAVE_KERNEL else ("numpy",)


def default_backend() -> str:
    return "cython" if _HAVE_KERNEL else "numpy"


def _ddx(a, dx):
    return (np.roll(a, -1, axis=1) - np.roll(a, 1, axis=1)) / (2.0 * dx)


def _ddy(a, dy):
    return (np.roll(a, -1, axis=0) - np.roll(a, 1, axis=0)) / (2.0 * dy)


def _laplacian(a, dx, dy):
    return (np.roll(a, -1, axis=1) - 2.0 * a + np.roll(a, 1, axis=1)) / dx**2 + (
        np.roll(a, -1, axis=0) - 2.0 * a + np.roll(a, 1, axis=0)
    ) / dy**2


def _tendency(eta, hu, hv, cfg: SweConfig):
    h = cfg.H_depth + eta
    u = hu / h
    v = hv / h
    ph = 0.5 * cfg.g * h * h
    d_eta = -_ddx(hu, cfg.dx) - _ddy(hv, cfg.dy)
    d_hu = -_ddx(hu * u + ph, cfg.dx) - _ddy(hu * v, cfg.dy) + cfg.f * hv
    d_hv = -_ddx(hv * u, cfg.dx) - _ddy(hv * v + ph, cfg.dy) - cfg.f * hu
    nu4 = cfg.nu4
    if nu4 != 0.0:
        d_eta -= nu4 * _laplacian(_laplacian(eta, cfg.dx, cfg.dy), cfg.dx, cfg.dy)
        d_hu -= nu4 * _laplacian(_laplacian(hu, cfg.dx, cfg.dy), cfg.dx, cfg.dy)
        d_hv -= nu4 * _laplacian(_laplacian(hv, cfg.dx, cfg.dy), cfg.dx, cfg.dy)
    return d_eta, d_hu, d_hv


def _check_state(eta, hu, hv, cfg: SweConfig, grid: Grid2D):
    h = cfg.H_depth + eta
    if np.any(h <= 0.0):
        j, i = np.unravel_index(int(np.argmin(h)), h.shape)
        raise SweAbort(f"drying: h <= 0 at cell (i={i}, j={j})")
    u = np.abs(hu / h)
    v = np.abs(hv / h)
    c = np.sqrt(cfg.g * h)
    cfl = cfg.dt_num * (float(np.max(u + c)) / cfg.dx + float(np.max(v + c)) / cfg.dy)
    if cfl > 1.0:
        raise SweAbort(f"CFL violation: stability number {cfl:.3f} > 1")


def _step_numpy(eta, hu, hv, cfg: SweConfig, grid: Grid2D, n_substeps: int):
    dt = cfg.dt_num
    for _ in range(n_substeps):
        _check_state(eta, hu, hv, cfg, grid)
        k1 = _tendency(eta, hu, hv, cfg)
        e1 = eta + dt * k1[0]
        u1 = hu + dt * k1[1]
        v1 = hv + dt * k1[2]
        k2 = _tendency(e1, u1, v1, cfg)
        eta = eta + 0.5 * dt * (k1[0] + k2[0])
        hu = hu + 0.5 * dt * (k1[1] + k2[1])
        hv = hv + 0.5 * dt * (k1[2] + k2[2])
    return eta, hu, hv


def step_swe(cfg: SweConfig, state: StateVector, n_substeps: int, backend: str | None = None) -> StateVector:
    """Advance (eta, hu, hv) by n_substeps numerical steps.

    Aborts (SweAbort) on drying or when the current state violates the
    CFL bound.  The input state is not modified.
    """
    if state.n_vars != 3:
        raise ValueError("shallow-water state needs n_vars == 3 (eta, hu, hv)")
    if backend is None:
        backend = default_backend()
    if backend not in available_backends():
        raise ValueError(f"backend {backend!r} not available (have {available_backends()})")

    f = state.fields()
    eta, hu, hv = f[0].copy(), f[1].copy(), f[2].copy()
    grid = state.grid

    if backend == "cython":
        # the kernel validates h > 0 and the CFL number internally and
        # reports via an error code to avoid raising across the C boundary
        code = _swe_kernel.step_n(
            eta, hu, hv, cfg.H_depth, cfg.g, cfg.f, cfg.dx, cfg.dy, cfg.dt_num, cfg.nu4, n_substeps
        )
        if code == 1:
            # the kernel leaves the failing substep's state in the arrays,
            # so the location can be recovered here
            h = cfg.H_depth + eta
            j, i = np.unravel_index(int(np.argmin(h)), h.shape)
            raise SweAbort(f"drying: h <= 0 at cell (i={i}, j={j})")
        if code == 2:
            raise SweAbort("CFL violation: stability number > 1")
    else:
        eta, hu, hv = _step_numpy(eta, hu, hv, cfg, grid, n_substeps)

    out = np.concatenate([eta.ravel(), hu.ravel(), hv.ravel()])
    if not np.all(np.isfinite(out)):
        raise SweAbort("non-finite values after step")
    return StateVector(grid, 3, out)


def double_jet_state(
    grid: Grid2D,
    cfg: SweConfig,
    eta_amp: float = 0.18,
    jet_sigma: float = 16_000.0,
) -> StateVector:
    """Geostrophically balanced double jet: eastward south, westward north.

    The surface profile is a pair of periodized Gaussian bumps in y (one
    positive, one negative), and hu is computed from the *discrete*
    balance with the scheme's own central stencil,

        hu_j = -g/(2 f) * (h_{j+1} + h_{j-1}) * (eta_{j+1} - eta_{j-1}) / (2 dy),

    so the momentum tendency of the central part vanishes identically and
    the state is steady up to the weak biharmonic filter.
    """
    if cfg.f == 0:
        raise ValueError("double jet requires f != 0")
    ny, nx = grid.ny, grid.nx
    ly = grid.ly
    y = np.arange(ny) * grid.dy

    def periodized_gauss(center):
        acc = np.zeros(ny)
        for kwrap in (-1, 0, 1):
            acc += np.exp(-0.5 * ((y - center + kwrap * ly) / jet_sigma) ** 2)
        return acc

    eta_y = eta_amp * (periodized_gauss(0.25 * ly) - periodized_gauss(0.75 * ly))
    eta_y -= eta_y.mean()

    h_y = cfg.H_depth + eta_y
    hp = np.roll(h_y, -1)
    hm = np.roll(h_y, 1)
    ep = np.roll(eta_y, -1)
    em = np.roll(eta_y, 1)
    hu_y = -cfg.g / (2.0 * cfg.f) * (hp + hm) * (ep - em) / (2.0 * grid.dy)

    eta = np.tile(eta_y[:, None], (1, nx))
    hu = np.tile(hu_y[:, None], (1, nx))
    hv = np.zeros((ny, nx))
    return StateVector(grid, 3, np.concatenate([eta.ravel(), hu.ravel(), hv.ravel()]))
