"""Analytic Kalman filter for the linear-Gaussian twin experiment.

Usable because the advection-diffusion model is literally a matrix M and
all densities stay Gaussian; this is the reference the ensemble methods
are compared against.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..gridfield import StateVector, cholesky_factor
from ..models.advdiff import LinearOperator
from ..observing import ObservationNetwork, ObservationRecord


@dataclass
class GaussianBelief:
    mu: StateVector
    sigma: np.ndarray

    def __post_init__(self):
        self.sigma = np.asarray(self.sigma, dtype=float)
        n = self.mu.values.size
        if self.sigma.shape != (n, n):
            raise ValueError(f"covariance shape {self.sigma.shape} != ({n}, {n})")
        if not np.all(np.isfinite(self.sigma)):
            raise ValueError("covariance must be finite")
        # exact equality first: re-symmetrized matrices (0.5*(A + A.T)) pass it
        # bitwise, which keeps the check cheap inside the forecast recursion
        if not np.array_equal(self.sigma, self.sigma.T) and not np.allclose(
            self.sigma, self.sigma.T, rtol=0, atol=1e-8 * max(1.0, np.abs(self.sigma).max())
        ):
            raise ValueError("covariance must be symmetric")

    def assert_psd(self) -> None:
        """Jitter-tolerant PSD check (raises LinAlgError if it fails)."""
        cholesky_factor(self.sigma)

    def copy(self) -> "GaussianBelief":
        return GaussianBelief(self.mu.copy(), self.sigma.copy())


def kf_forecast(belief: GaussianBelief, M: LinearOperator, Q: np.ndarray | None) -> GaussianBelief:
    """mu' = M mu;  Sigma' = M Sigma M^T + Q, re-symmetrized."""
    n = belief.mu.values.size
    if M.matrix.shape != (n, n):
        raise ValueError("operator size does not match belief")
    mu = M.apply(belief.mu.values)
    ms = M.matrix @ belief.sigma
    sig = (M.matrix @ ms.T).T  # M Sigma M^T without densifying M
    if Q is not None:
        Q = np.asarray(Q, dtype=float)
        if Q.shape != (n, n):
            raise ValueError("Q shape does not match state")
        sig = sig + Q
    sig = 0.5 * (sig + sig.T)
    return GaussianBelief(StateVector(belief.mu.grid, belief.mu.n_vars, mu), sig)


def kf_analysis(
    belief: GaussianBelief, y: ObservationRecord | np.ndarray, network: ObservationNetwork
) -> GaussianBelief:
    """Condition the Gaussian on y: mu + K(y - H mu), Sigma - K S K^T.

    K = Sigma H^T S^{-1} with S = H Sigma H^T + R the innovation
    covariance; the covariance update K S K^T == K H Sigma keeps the
    posterior exactly the conditional-Gaussian covariance.
    """
    vals = y.values if isinstance(y, ObservationRecord) else np.asarray(y, dtype=float)
    idx = network.flat_indices(belief.mu.grid, belief.mu.n_vars)
    if vals.shape != (len(idx),):
        raise ValueError("observation length does not match network")

    sig = belief.sigma
    sig_ht = sig[:, idx]  # Sigma H^T
    S = sig_ht[idx, :] + network.r**2 * np.eye(len(idx))
    try:
        # K^T = S^{-1} H Sigma (S symmetric)
        kt = np.linalg.solve(S, sig_ht.T)
    except np.linalg.LinAlgError as err:
        raise np.linalg.LinAlgError(
            "singular innovation covariance (r=0 with degenerate prior?)"
        ) from err
    K = kt.T

    innov = vals - belief.mu.values[idx]
    mu = belief.mu.values + K @ innov
    sig_a = sig - K @ sig_ht.T
    sig_a = 0.5 * (sig_a + sig_a.T)
    return GaussianBelief(StateVector(belief.mu.grid, belief.mu.n_vars, mu), sig_a)
