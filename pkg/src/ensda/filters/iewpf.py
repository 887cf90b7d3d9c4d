"""Two-stage implicit equal-weights particle filter.

Each member is pulled to its optimal-proposal point

    x_opt = x + Q H^T (H Q H^T + R)^{-1} (y - H x),

then perturbed by a sample of P = Q - Q H^T (H Q H^T + R)^{-1} H Q, with
the perturbation scaled so all posterior weights are exactly equal to the
worst member's weight.  Everything runs through the model-error factor
F = Q^{1/2} (latent dimension L), where

    P^{1/2} = F (I - S)^{1/2},   S = G^T (G G^T + R)^{-1} G,   G = H F.

S has rank <= N_Y, so (I - S)^{1/2} = I + sum_i (sqrt(1-lam_i) - 1) w_i w_i^T
from the generalized eigenproblem (G G^T) u = lam (G G^T + R) u with
w_i = G^T u_i normalized.  Because rows of F far from every observation
site are uncorrelated with the observed rows, those cells receive pure
model-error perturbations (the locality of the published factorization).

The perturbation is zeta = sqrt(alpha_e) xi_e + sqrt(beta) nu_e with
nu_e Gram-Schmidt-orthogonalized against xi_e; minus twice the log
weight increment of member e is

    phi_e + (alpha_e - 1) |xi_e|^2 - L log(alpha_e) + (beta - 1) |nu_e|^2

(phi_e = d^T (G G^T + R)^{-1} d, and the log alpha term is the Jacobian
of the scaling).  alpha_e is solved per member so this matches the
target (the largest alpha-independent part across members, giving the
worst member alpha = 1).  The solver always takes the lower root of
the alpha equation, so the first stage shrinks relative to a plain
draw and the beta stage supplies the balance of the spread.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from ..gridfield import EnsembleMatrix
from ..models.error import QFactor
from ..observing import ObservationNetwork, ObservationRecord

_LAMBDA_FLOOR = 1e-12


@dataclass(frozen=True)
class IewpfParams:
    beta: float = 1.0
    weight_tol: float = 1e-6

    def __post_init__(self):
        if not 0.0 < self.beta <= 1.0:
            raise ValueError("beta must be in (0, 1]")
        if self.weight_tol <= 0:
            raise ValueError("weight_tol must be > 0")


def solve_alpha(misfit: float, xi_norm2: float, target: float, latent_dim: int, tol: float = 1e-10) -> float:
    """Solve (alpha-1)*xi_norm2 - L*log(alpha) = target - misfit for alpha in (0, 1].

    h(alpha) falls from +inf at 0+ to its minimum at L/xi_norm2 and
    h(1) = 0, so every positive right side has exactly one root below
    min(1, L/xi_norm2): the lower root, the one the closed-form
    solution on the principal Lambert-W branch picks.  Taking it means
    the first-stage perturbation only ever shrinks relative to a plain
    proposal draw; the fixed-scale second stage (beta) puts back the
    variance the shrinkage removes.  Taking the upper root instead
    inflates every member above the worst one and the ensemble spread
    grows without bound over repeated analyses.  A member already at
    the target keeps alpha = 1.  Safeguarded Newton with a bisection
    fallback.
    """
    rhs = target - misfit
    if rhs < -tol * max(1.0, abs(target)):
        raise ValueError(f"target below member misfit (rhs={rhs:.3e}); bracketing failure")
    if rhs <= 0.0:
        return 1.0
    L = float(latent_dim)

    def h(a):
        return (a - 1.0) * xi_norm2 - L * math.log(a)

    # bracket the lower root: h decreases on (0, L/xi_norm2)
    hi = min(1.0, L / xi_norm2) if xi_norm2 > 0 else 1.0
    lo = 0.5 * hi
    while h(lo) < rhs:
        lo *= 0.5
        if lo < 1e-300:
            raise ValueError("bracketing failure: h stays below target")

    def f(a):
        return h(a) - rhs

    a = 0.5 * (lo + hi)
    scale = max(1.0, abs(rhs))
    fa = f(a)
    for _ in range(200):
        if abs(fa) < tol * scale:
            return a
        # shrink the bracket around the root, then try a Newton step
        if fa > 0:
            lo = a  # f decreasing: still left of the root
        else:
            hi = a
        da = xi_norm2 - L / a  # h'
        step = a - fa / da if da != 0.0 else math.nan
        a = step if lo < step < hi else 0.5 * (lo + hi)
        fa = f(a)
    raise ValueError(f"alpha solve did not converge (residual {fa:.3e})")


def _latent_sqrt_terms(G: np.ndarray, r: float):
    """Eigen-terms of (I - S)^{1/2}: normalized directions and coefficients."""
    n_y = G.shape[0]
    B = G @ G.T
    S = B + r**2 * np.eye(n_y)
    lam, U = sla.eigh(B, S)
    lam = np.clip(lam, 0.0, 1.0)
    keep = lam > _LAMBDA_FLOOR
    lam = lam[keep]
    W = G.T @ U[:, keep]  # columns have norm sqrt(lam)
    W = W / np.sqrt(lam)[None, :]
    coeff = np.sqrt(1.0 - lam) - 1.0
    return W, coeff, S


def iewpf_analysis(
    ens: EnsembleMatrix,
    y: ObservationRecord | np.ndarray,
    network: ObservationNetwork,
    q_factor: QFactor,
    params: IewpfParams,
    rng,
    diagnostics: dict | None = None,
) -> EnsembleMatrix:
    """One equal-weights analysis of deterministically forecast members.

    The proposal replaces the model-error draw of the analysis step, so
    the input ensemble must be advanced without that last noise addition.
    """
    vals = y.values if isinstance(y, ObservationRecord) else np.asarray(y, dtype=float)
    idx = network.flat_indices(ens.grid, ens.n_vars)
    if vals.shape != (len(idx),):
        raise ValueError("observation length does not match network")
    if network.r <= 0:
        raise ValueError("needs r > 0")
    if q_factor.state_dim != ens.X.shape[0]:
        raise ValueError("Q factor does not match the state dimension")

    X = ens.X
    ne = ens.n_members
    L = q_factor.latent_dim

    # G = H F through the adjoint: row j of G is F^T e_{idx_j}
    E = np.zeros((q_factor.state_dim, len(idx)))
    E[idx, np.arange(len(idx))] = 1.0
    G = q_factor.apply_adjoint(E).T

    W, coeff, S = _latent_sqrt_terms(G, network.r)
    S_cho = sla.cho_factor(S)

    # optimal-proposal pull and per-member data misfit phi_e
    D = vals[:, None] - X[idx, :]  # innovations (n_y, ne)
    SOL = sla.cho_solve(S_cho, D)
    phi = np.einsum("je,je->e", D, SOL)
    X_opt = X + q_factor.apply(G.T @ SOL)

    # latent draws; second stage orthogonalized against the first
    xi = rng.standard_normal((L, ne))
    nu = rng.standard_normal((L, ne))
    xi_n2 = np.einsum("le,le->e", xi, xi)
    proj = np.einsum("le,le->e", xi, nu) / np.where(xi_n2 > 0, xi_n2, 1.0)
    nu = nu - xi * proj[None, :]
    nu_n2 = np.einsum("le,le->e", nu, nu)

    dots = np.abs(np.einsum("le,le->e", xi, nu))
    bad = dots > 1e-10 * np.sqrt(xi_n2 * nu_n2) + 1e-300
    if np.any(bad):
        raise RuntimeError(f"orthogonalization failed for members {np.nonzero(bad)[0]}")

    beta = params.beta
    gamma = phi + (beta - 1.0) * nu_n2
    target = float(np.max(gamma))
    alphas = np.empty(ne)
    for e in range(ne):
        try:
            alphas[e] = solve_alpha(float(gamma[e]), float(xi_n2[e]), target, L)
        except ValueError as err:
            raise ValueError(f"member {e}: {err}") from err

    zeta = np.sqrt(alphas)[None, :] * xi + math.sqrt(beta) * nu
    zeta = zeta + W @ (coeff[:, None] * (W.T @ zeta))  # (I - S)^{1/2} zeta
    Xa = X_opt + q_factor.apply(zeta)

    # -2 log w residual against the common target, in log-weight units
    neg2logw = phi + (alphas - 1.0) * xi_n2 - L * np.log(alphas) + (beta - 1.0) * nu_n2
    resid = 0.5 * np.abs(neg2logw - target)
    if np.max(resid) > params.weight_tol:
        e = int(np.argmax(resid))
        raise ValueError(f"member {e}: weight residual {resid[e]:.3e} exceeds tol")

    if diagnostics is not None:
        diagnostics.update(
            alphas=alphas,
            phi=phi,
            target=target,
            log_weight_residual=resid,
            beta=beta,
        )
    return EnsembleMatrix(ens.grid, ens.n_vars, Xa)
