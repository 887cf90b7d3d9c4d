"""The ensemble filters track the analytic filter on the linear twin.

Both tests run the linear preset to its first analysis with Ne = 100 over
20 replicate ensembles and compare filter means against the analytic
posterior mean, cell by cell.

Two layers, because the three filters make different promises:

- every filter keeps its mean inside the analytic posterior's 3-sigma ball
  (sigma taken from the filter's own ensemble).  The approximate filters
  cannot promise more.  The localised filter's taper-blended update
  deliberately truncates long-range gain contributions, leaving a mean
  offset on the order of a quarter of the analysis increment; the
  equal-weights proposal filter pulls members with the model-error gain
  rather than the full forecast-covariance gain and skips the importance
  reweighting that would correct it.  Both are approximation errors,
  bounded here, not sampling errors that average away.

- the square-root filter is genuinely unbiased: its grand mean over
  replicates must match the analytic mean within a familywise multiple of
  its standard error.  The standard error is estimated from the spread of
  the 20 per-replicate means, floored by the pooled within-ensemble term
  sd^2/Ne (the within term alone understates the variance of an analysis
  mean, because the gain is built from the sample covariance and its
  noise multiplies the innovation; the floor only catches cells where the
  19-dof variance estimate collapses).  The threshold is z = 4.75 rather
  than 3: with 1500 cells, an exact filter still throws a couple of cells
  past 3 standard errors by multiplicity alone.
"""

import numpy as np
import pytest

from ensda.filters import (
    GaussianBelief,
    IewpfParams,
    build_localisation_plan,
    etkf_analysis,
    iewpf_analysis,
    kf_analysis,
    kf_forecast,
    letkf_analysis,
)
from ensda.gridfield import EnsembleMatrix, seeded_rng
from ensda.harness import preset
from ensda.harness.run import _advdiff_mu0, _init_cov_factor, _network
from ensda.models import build_advdiff_operator, q_factor

NE = 100
REPS = 20
Z_FAMILYWISE = 4.75


@pytest.fixture(scope="module")
def first_analysis():
    cfg = preset("advdiff-verify")
    grid = cfg.grid()
    op = build_advdiff_operator(grid, cfg.advdiff())
    net = _network(cfg)
    qf = q_factor(cfg.error_spec(), grid, None)
    Q = qf.covariance()
    mu0 = _advdiff_mu0(cfg, grid)
    sigma0, L0 = _init_cov_factor(cfg, grid)
    idx = net.flat_indices(grid, 1)
    n = grid.n_cells
    steps = cfg.obs_every  # model error enters once, at the analysis step
    plan = build_localisation_plan(net, grid, radius=cfg.radius)

    rng = seeded_rng(4242)
    truth = mu0.values + L0 @ rng.standard_normal(n)
    for _ in range(steps - 1):
        truth = op.apply(truth)
    truth = op.apply(truth) + qf.apply(rng.standard_normal(qf.latent_dim))
    y = truth[idx] + net.r * rng.standard_normal(len(idx))

    belief = GaussianBelief(mu0.copy(), sigma0)
    for _ in range(steps - 1):
        belief = kf_forecast(belief, op, None)
    belief = kf_forecast(belief, op, Q)
    kf_mu = kf_analysis(belief, y, net).mu.values

    names = ("etkf", "letkf", "iewpf")
    means = {k: np.empty((REPS, n)) for k in names}
    within = {k: np.zeros(n) for k in names}
    ball = {k: 0.0 for k in names}
    for rep in range(REPS):
        X = mu0.values[:, None] + L0 @ rng.standard_normal((n, NE))
        for _ in range(steps):
            X = op.matrix @ X
        # additive error enters the ETKF/LETKF ensembles as a forecast draw;
        # the proposal filter generates its own inside the analysis
        X_err = X + qf.apply(rng.standard_normal((qf.latent_dim, NE)))

        analyses = {
            "etkf": etkf_analysis(EnsembleMatrix(grid, 1, X_err), y, net).X,
            "letkf": letkf_analysis(EnsembleMatrix(grid, 1, X_err), y, net, plan, cfg.phi).X,
            "iewpf": iewpf_analysis(
                EnsembleMatrix(grid, 1, X), y, net, qf, IewpfParams(beta=cfg.beta), rng
            ).X,
        }
        for name, Xa in analyses.items():
            means[name][rep] = Xa.mean(axis=1)
            within[name] += Xa.var(axis=1, ddof=1) / NE
            offset = np.abs(Xa.mean(axis=1) - kf_mu) / Xa.std(axis=1, ddof=1)
            ball[name] = max(ball[name], float(offset.max()))
    return kf_mu, means, within, ball


def test_all_filter_means_stay_in_posterior_sigma_ball(first_analysis):
    _, _, _, ball = first_analysis
    for name, worst in ball.items():
        assert worst < 3.0, f"{name}: max |mean offset| = {worst:.2f} ensemble sd"


def test_square_root_filter_mean_is_unbiased(first_analysis):
    kf_mu, means, within, _ = first_analysis
    grand = means["etkf"].mean(axis=0)
    var_emp = means["etkf"].var(axis=0, ddof=1)
    se = np.sqrt(np.maximum(var_emp, within["etkf"] / REPS) / REPS)
    z = np.abs(grand - kf_mu) / se
    worst = float(z.max())
    assert worst < Z_FAMILYWISE, f"etkf: max |z| = {worst:.2f}"
