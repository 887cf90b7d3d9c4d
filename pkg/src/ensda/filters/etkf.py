"""Ensemble transform Kalman filter (deterministic square-root form).

The analysis runs in ensemble space: with X_pert the forecast
perturbations and Y = H X_pert,

    A = ((Ne-1) I + Y^T R^{-1} Y)^{-1}
    mean update:   xbar + X_pert A Y^T R^{-1} (y - H xbar)
    spread update: X_pert ((Ne-1) A)^{1/2}   (symmetric square root)

Eigenvalues of the inverse are floored at 1e-12 before inverting, which
guards degenerate local ensembles in the localised variant.
"""

from __future__ import annotations

import numpy as np

from ..gridfield import EnsembleMatrix
from ..observing import ObservationNetwork, ObservationRecord

EIG_FLOOR = 1e-12


def etkf_core(X: np.ndarray, y: np.ndarray, obs_idx: np.ndarray, r: float) -> np.ndarray:
    """Square-root analysis on a raw (n, Ne) ensemble array.

    obs_idx are the observed rows of X; R = r^2 I.  Returns the analysis
    array (input untouched).  Shared by the global filter and the local
    solves of the localised variant.
    """
    n, ne = X.shape
    if ne < 2:
        raise ValueError("ETKF needs at least 2 members")
    if r <= 0:
        raise ValueError("ETKF needs r > 0 (R must be invertible)")

    xbar = X.mean(axis=1)
    Xp = X - xbar[:, None]
    Y = Xp[obs_idx, :]  # (n_y, ne)
    rinv = 1.0 / r**2

    a_inv = (ne - 1) * np.eye(ne) + rinv * (Y.T @ Y)
    vals, vecs = np.linalg.eigh(a_inv)
    vals = np.maximum(vals, EIG_FLOOR)

    innov = y - xbar[obs_idx]
    # A Y^T R^{-1} d in the eigenbasis
    w = vecs @ ((vecs.T @ (Y.T @ (rinv * innov))) / vals)
    xbar_a = xbar + Xp @ w

    T = (vecs * np.sqrt((ne - 1) / vals)) @ vecs.T  # ((Ne-1) A)^{1/2}, symmetric
    Xa_pert = Xp @ T
    return xbar_a[:, None] + Xa_pert


def etkf_analysis(ens: EnsembleMatrix, y: ObservationRecord | np.ndarray, network: ObservationNetwork) -> EnsembleMatrix:
    """Global ETKF analysis of one observation record."""
    vals = y.values if isinstance(y, ObservationRecord) else np.asarray(y, dtype=float)
    idx = network.flat_indices(ens.grid, ens.n_vars)
    if vals.shape != (len(idx),):
        raise ValueError("observation length does not match network")
    Xa = etkf_core(ens.X, vals, idx, network.r)
    return EnsembleMatrix(ens.grid, ens.n_vars, Xa)
