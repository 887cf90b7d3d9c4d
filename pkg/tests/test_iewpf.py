import math

import numpy as np
import pytest
import scipy.optimize
from hypothesis import given, settings
from hypothesis import strategies as st

from ensda.filters import IewpfParams, iewpf_analysis, solve_alpha
from ensda.filters.iewpf import _latent_sqrt_terms
from ensda.gridfield import (
    EnsembleMatrix,
    Grid2D,
    MaternSpec,
    cholesky_factor,
    matern_covariance,
    seeded_rng,
)
from ensda.models.error import DenseQFactor, QFactor
from ensda.observing import ObservationNetwork


class _ZeroRng:
    """Stands in for a Generator; returns zero latent draws so the
    analysis reduces to the deterministic optimal-proposal pull."""

    def standard_normal(self, shape):
        return np.zeros(shape)


class BandedQFactor(QFactor):
    """Lower-bidiagonal F on a 1-d strip: each cell's error mixes its own
    latent variable and its left neighbour's, nothing further."""

    def __init__(self, n, diag=1.0, off=0.4):
        self.n_vars = 1
        self.state_dim = n
        self.latent_dim = n
        F = diag * np.eye(n)
        F[np.arange(1, n), np.arange(n - 1)] = off
        self._F = F

    def apply(self, z):
        return self._F @ z

    def apply_adjoint(self, w):
        return self._F.T @ w


# --- alpha solve ----------------------------------------------------------


def test_solve_alpha_at_target_is_one():
    assert solve_alpha(5.0, 3.0, 5.0, 10) == 1.0
    assert solve_alpha(5.0 + 1e-14, 3.0, 5.0, 10) == 1.0  # tiny negative rhs


def test_solve_alpha_below_target_raises():
    with pytest.raises(ValueError, match="bracketing failure"):
        solve_alpha(8.0, 3.0, 5.0, 10)


@pytest.mark.parametrize(
    "xi_norm2, L, rhs",
    [(5.0, 3, 2.0), (40.0, 12, 17.5), (1.0, 10, 3.0), (0.3, 25, 8.0)],
)
def test_solve_alpha_matches_brentq(xi_norm2, L, rhs):
    a = solve_alpha(0.0, xi_norm2, rhs, L)

    def h(x):
        return (x - 1.0) * xi_norm2 - L * math.log(x) - rhs

    # the lower root: h falls from +inf on (0, L/xi_norm2) and h(1) = -rhs < 0,
    # so (1e-12, 1) brackets exactly one sign change for any positive gap
    assert 0.0 < a < 1.0
    ref = scipy.optimize.brentq(h, 1e-12, 1.0, xtol=1e-15)
    np.testing.assert_allclose(a, ref, rtol=1e-9)


@settings(max_examples=150, deadline=None)
@given(
    xi_norm2=st.floats(0.05, 200.0),
    L=st.integers(1, 60),
    rhs=st.floats(0.0, 50.0),
)
def test_solve_alpha_satisfies_weight_identity(xi_norm2, L, rhs):
    a = solve_alpha(0.0, xi_norm2, rhs, L)
    assert 0 < a <= 1.0
    resid = (a - 1.0) * xi_norm2 - L * math.log(a) - rhs
    assert abs(resid) <= 1e-9 * max(1.0, rhs)


def test_solve_alpha_monotone_in_gap():
    # larger gap to the target -> smaller alpha (larger |alpha - 1|),
    # on both sides of xi_norm2 = L
    rhs_grid = np.linspace(0.0, 20.0, 40)
    big = [solve_alpha(0.0, 30.0, r, 5) for r in rhs_grid]  # xi_norm2 > L
    sml = [solve_alpha(0.0, 2.0, r, 12) for r in rhs_grid]  # xi_norm2 < L
    assert np.all(np.diff(big) <= 0)
    assert np.all(np.diff(sml) <= 0)
    assert big[0] == 1.0 and sml[0] == 1.0


# --- latent square root ---------------------------------------------------


def test_latent_sqrt_squares_to_complement():
    rng = seeded_rng(24, 0)
    G = rng.standard_normal((4, 12))
    r = 0.7
    W, coeff, S = _latent_sqrt_terms(G, r)
    np.testing.assert_allclose(S, G @ G.T + r**2 * np.eye(4), atol=1e-14)

    M = np.eye(12) + (W * coeff) @ W.T
    S_lat = G.T @ np.linalg.solve(S, G)
    np.testing.assert_allclose(M @ M, np.eye(12) - S_lat, atol=1e-12)
    np.testing.assert_allclose(M, M.T, atol=1e-14)
    assert W.shape[1] <= 4  # rank bounded by the observation count


def test_latent_sqrt_large_r_is_identity_limit():
    rng = seeded_rng(24, 1)
    G = rng.standard_normal((3, 8))
    W, coeff, _S = _latent_sqrt_terms(G, 1e6)
    M = np.eye(8) + (W * coeff) @ W.T
    np.testing.assert_allclose(M, np.eye(8), atol=1e-9)


# --- analysis: deterministic pull -----------------------------------------

GRID = Grid2D(8, 5, 1.0, 1.0)
MATERN = MaternSpec(sigma=0.4, psi=1.2)


def _network():
    return ObservationNetwork(sites=((3, 0), (21, 0), (34, 0)), r=0.25)


def test_iewpf_zero_innovation_zero_noise_is_identity():
    q = DenseQFactor(GRID, MATERN)
    net = _network()
    x0 = seeded_rng(24, 2).standard_normal(GRID.n_cells)
    X = np.tile(x0[:, None], (1, 6))
    ens = EnsembleMatrix(GRID, 1, X)
    y = x0[[3, 21, 34]]
    out = iewpf_analysis(ens, y, net, q, IewpfParams(), _ZeroRng())
    np.testing.assert_array_equal(out.X, X)


def test_iewpf_pull_matches_dense_optimal_proposal():
    # zero latent draws expose the pull: each member must land exactly on
    # x + Q H^T (H Q H^T + R)^{-1} (y - H x)
    rng = seeded_rng(24, 3)
    q = DenseQFactor(GRID, MATERN)
    net = _network()
    ens = EnsembleMatrix(GRID, 1, rng.standard_normal((GRID.n_cells, 5)))
    y = rng.standard_normal(3)

    out = iewpf_analysis(ens, y, net, q, IewpfParams(), _ZeroRng())

    Q = q.covariance()
    idx = [3, 21, 34]
    S = Q[np.ix_(idx, idx)] + net.r**2 * np.eye(3)
    K = Q[:, idx] @ np.linalg.inv(S)
    expect = ens.X + K @ (y[:, None] - ens.X[idx, :])
    np.testing.assert_allclose(out.X, expect, rtol=0, atol=1e-10)


def test_iewpf_perturbation_covariance_identity():
    # assemble P^{1/2} = F (I - S)^{1/2} densely and verify it squares to
    # the optimal-proposal covariance Q - Q H^T (H Q H^T + R)^{-1} H Q
    q = DenseQFactor(GRID, MATERN)
    net = _network()
    idx = [3, 21, 34]
    F = q.matrix()
    G = F[idx, :]
    W, coeff, _S = _latent_sqrt_terms(G, net.r)
    P_half = F @ (np.eye(q.latent_dim) + (W * coeff) @ W.T)

    Q = q.covariance()
    S = Q[np.ix_(idx, idx)] + net.r**2 * np.eye(3)
    P = Q - Q[:, idx] @ np.linalg.solve(S, Q[idx, :])
    np.testing.assert_allclose(P_half @ P_half.T, P, atol=1e-12)


# --- analysis: weights and randomness --------------------------------------


def test_iewpf_equal_weights():
    rng = seeded_rng(24, 4)
    q = DenseQFactor(GRID, MATERN)
    net = _network()
    ens = EnsembleMatrix(GRID, 1, rng.standard_normal((GRID.n_cells, 12)))
    y = rng.standard_normal(3)

    diag = {}
    out = iewpf_analysis(ens, y, net, q, IewpfParams(), rng, diagnostics=diag)
    assert np.max(diag["log_weight_residual"]) < 1e-6
    # exactly the worst member keeps alpha = 1
    assert 1.0 in diag["alphas"]
    assert np.all(diag["alphas"] > 0)
    assert diag["target"] >= np.max(diag["phi"]) - 1e-12 or diag["beta"] < 1.0
    assert out.X.shape == ens.X.shape
    assert not np.array_equal(out.X, ens.X)


def test_iewpf_beta_below_one():
    rng = seeded_rng(24, 5)
    q = DenseQFactor(GRID, MATERN)
    net = _network()
    ens = EnsembleMatrix(GRID, 1, rng.standard_normal((GRID.n_cells, 8)))
    y = rng.standard_normal(3)
    diag = {}
    iewpf_analysis(ens, y, net, q, IewpfParams(beta=0.55), rng, diagnostics=diag)
    assert diag["beta"] == 0.55
    assert np.max(diag["log_weight_residual"]) < 1e-6


def test_iewpf_seed_changes_draw():
    q = DenseQFactor(GRID, MATERN)
    net = _network()
    X = seeded_rng(24, 6).standard_normal((GRID.n_cells, 6))
    y = np.zeros(3)
    out1 = iewpf_analysis(EnsembleMatrix(GRID, 1, X), y, net, q, IewpfParams(), seeded_rng(1))
    out1b = iewpf_analysis(EnsembleMatrix(GRID, 1, X), y, net, q, IewpfParams(), seeded_rng(1))
    out2 = iewpf_analysis(EnsembleMatrix(GRID, 1, X), y, net, q, IewpfParams(), seeded_rng(2))
    np.testing.assert_array_equal(out1.X, out1b.X)
    assert not np.array_equal(out1.X, out2.X)


# --- locality of the update -----------------------------------------------


def test_iewpf_far_cells_get_pure_model_error():
    # with a banded factor, cells whose F-row shares no latent support
    # with the observed row are untouched by (I - S)^{1/2}: their rows of
    # P^{1/2} equal the rows of F exactly, i.e. pure model error there
    n = 10
    q = BandedQFactor(n)
    obs_cell = 5
    F = q.matrix()
    G = F[[obs_cell], :]  # latent support {4, 5}
    W, coeff, _S = _latent_sqrt_terms(G, r=0.3)

    far_latent = [k for k in range(n) if k not in (4, 5)]
    np.testing.assert_array_equal(W[far_latent, :], 0.0)

    M = np.eye(n) + (W * coeff) @ W.T
    P_half = F @ M
    far_cells = [i for i in range(n) if not set(np.nonzero(F[i])[0]) & {4, 5}]
    assert far_cells  # the band keeps most of the strip far
    np.testing.assert_array_equal(P_half[far_cells, :], F[far_cells, :])

    # and the far-field covariance blocks match Q exactly
    Q = F @ F.T
    P = P_half @ P_half.T
    np.testing.assert_array_equal(P[far_cells, :][:, far_cells], Q[far_cells, :][:, far_cells])


def test_iewpf_far_cells_in_full_analysis():
    # end-to-end: the sampled update at far cells equals pull + F zeta,
    # which for a far cell is exactly the model-error contribution;
    # verify by reconstructing zeta from near-identity latent algebra
    n = 12
    grid = Grid2D(n, 1, 1.0, 1.0)
    q = BandedQFactor(n)
    net = ObservationNetwork(sites=((6, 0),), r=0.4)
    rng = seeded_rng(24, 7)
    X = rng.standard_normal((n, 5))
    ens = EnsembleMatrix(grid, 1, X)
    y = np.array([0.9])

    draw_rng = seeded_rng(24, 8)
    out = iewpf_analysis(ens, y, net, q, IewpfParams(), draw_rng)

    # replay the internal draws (same stream: xi then nu)
    replay = seeded_rng(24, 8)
    xi = replay.standard_normal((n, 5))
    nu = replay.standard_normal((n, 5))
    xi_n2 = np.einsum("le,le->e", xi, xi)
    nu = nu - xi * (np.einsum("le,le->e", xi, nu) / xi_n2)[None, :]

    F = q.matrix()
    Q = F @ F.T
    s = Q[6, 6] + net.r**2
    pull = X + Q[:, [6]] / s @ (y[:, None] - X[[6], :])

    # far rows of F have latent support disjoint from row 6's {5, 6}
    far = [i for i in range(n) if not set(np.nonzero(F[i])[0]) & {5, 6}]
    pert = out.X[far, :] - pull[far, :]
    # alpha scaling touches xi only; beta = 1 leaves nu unscaled
    d = y - X[6, :]
    phi = d**2 / s
    target = phi.max()
    alphas = np.array([solve_alpha(float(p), float(x2), float(target), n) for p, x2 in zip(phi, xi_n2)])
    zeta = np.sqrt(alphas)[None, :] * xi + nu
    np.testing.assert_allclose(pert, (F @ zeta)[far, :], rtol=0, atol=1e-10)


def test_iewpf_perturbation_budget_matches_proposal_covariance():
    # the random part each member receives is P^{1/2}(sqrt(alpha) xi + sqrt(beta) nu)
    # with xi a unit draw and nu its orthogonalized partner, so pooled over many
    # analyses the per-cell sample variance of (out - pull) must track
    # (mean alpha + beta (1 - 1/L)) * diag(P), P the optimal-proposal covariance.
    # a wrong alpha branch (inflating members instead of shrinking them) or a
    # dropped beta stage shifts the pooled ratio far outside the band.
    q = DenseQFactor(GRID, MATERN)
    net = _network()
    idx = [3, 21, 34]
    n = GRID.n_cells
    L = q.latent_dim
    beta = 0.30

    Q = q.covariance()
    S = Q[np.ix_(idx, idx)] + net.r**2 * np.eye(3)
    K = Q[:, idx] @ np.linalg.inv(S)
    P = Q - K @ Q[idx, :]
    p_diag = np.diag(P)

    field = cholesky_factor(matern_covariance(GRID, MATERN))
    rng = seeded_rng(24, 11)
    ne, reps = 40, 150
    num = np.zeros(n)
    alphas = []
    for _ in range(reps):
        truth = field @ rng.standard_normal(n)
        X = truth[:, None] + field @ rng.standard_normal((n, ne))
        y = truth[idx] + net.r * rng.standard_normal(3)
        diag = {}
        out = iewpf_analysis(EnsembleMatrix(GRID, 1, X), y, net, q, IewpfParams(beta=beta), rng, diagnostics=diag)
        pull = X + K @ (y[:, None] - X[idx, :])
        num += ((out.X - pull) ** 2).sum(axis=1)
        alphas.append(diag["alphas"])
    ratio = float(np.mean(num / (reps * ne * p_diag)))
    predicted = float(np.mean(alphas)) + beta * (1.0 - 1.0 / L)
    assert abs(ratio - predicted) < 0.06
    assert 0.70 < ratio < 1.05


# --- validation -------------------------------------------------------------


def test_iewpf_rejects_bad_inputs():
    q = DenseQFactor(GRID, MATERN)
    rng = seeded_rng(24, 9)
    ens = EnsembleMatrix(GRID, 1, rng.standard_normal((GRID.n_cells, 4)))
    net0 = ObservationNetwork(sites=((3, 0),), r=0.0)
    with pytest.raises(ValueError, match="r > 0"):
        iewpf_analysis(ens, np.array([1.0]), net0, q, IewpfParams(), rng)
    net = _network()
    with pytest.raises(ValueError, match="observation length"):
        iewpf_analysis(ens, np.array([1.0]), net, q, IewpfParams(), rng)
    q_small = BandedQFactor(5)
    with pytest.raises(ValueError, match="state dimension"):
        iewpf_analysis(ens, np.zeros(3), net, q_small, IewpfParams(), rng)
    with pytest.raises(ValueError, match="beta"):
        IewpfParams(beta=0.0)
