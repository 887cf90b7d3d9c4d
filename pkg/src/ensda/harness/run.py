"""Replicated twin-experiment runs and their CSV artifacts.

A run is organised in two stages.  Stage one generates, per synthetic
truth, the observations (and for the linear case the analytic Kalman
reference, saved as an .npz next to the truth file).  Stage two runs the
configured filter for every (truth, ensemble) replicate.  Both stages are
independent jobs over a bounded process pool; every job writes its own
CSV files and returns the metric rows, which the parent merges in a fixed
order so that reruns with the same config and seed are byte-identical.

Replicate ids: metric rows carry rep = 100 * truth + ensemble_replicate;
the analytic/truth-stage rows use ensemble slot 99.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import os
import platform
from concurrent.futures import ProcessPoolExecutor

import numpy as np
import scipy

from .. import __version__
from ..drift import forecast_trajectories
from ..filters import (
    GaussianBelief,
    IewpfParams,
    build_localisation_plan,
    etkf_analysis,
    iewpf_analysis,
    kf_analysis,
    kf_forecast,
    letkf_analysis,
)
from ..gridfield import (
    EnsembleMatrix,
    MaternSpec,
    StateVector,
    cholesky_factor,
    matern_covariance,
    sample_field,
    seeded_rng,
)
from ..metrics import (
    Ecdf,
    MetricSeries,
    RankHistogram,
    ce,
    coverage_probability,
    cross_time_corr_field_ens,
    cross_time_corr_field_kf,
    d_iq,
    fcd,
    kde2d,
    rmse,
    skill_bias,
    skill_crps,
    skill_mse,
    write_field_csv,
    write_metric_series_csv,
)
from ..models import (
    build_advdiff_operator,
    double_jet_state,
    q_factor,
    sample_model_error,
    step_swe,
)
from ..observing import ObservationNetwork, run_truth, save_twin, load_twin
from .config import ExperimentConfig, config_hash, save_config

logger = logging.getLogger(__name__)

Z_COVER = 1.64  # 90% central interval

# seed stream tags: seeded_rng(master_seed, TAG, truth[, rep])
_TRUTH, _INIT, _FORECAST, _FILTER, _DRIFT, _RANK = range(6)
_KF_SLOT = 99

_ENV_OUT = "ENSDA_OUT_DIR"


def _rep_id(t: int, e: int) -> int:
    return 100 * t + e


def _network(cfg: ExperimentConfig) -> ObservationNetwork:
    return ObservationNetwork(sites=cfg.site_cells(), r=cfg.r)


class _EveryK:
    """Stateful error cadence: a draw every k-th call, else None."""

    def __init__(self, k, draw):
        self.k = int(k)
        self.n = 0
        self.draw = draw

    def __call__(self, rng):
        self.n += 1
        if self.n % self.k == 0:
            return self.draw(rng)
        return None


@dataclasses.dataclass
class JobResult:
    t: int
    e: int              # _KF_SLOT for the truth stage
    series: list
    files: list
    cover_hits: np.ndarray | None = None
    rank_counts: dict | None = None
    abort: str | None = None


# --- linear case: shared pieces ----------------------------------------------


def _advdiff_mu0(cfg, grid) -> StateVector:
    """Flat base concentration plus one Gaussian bump."""
    x = (np.arange(grid.nx) + 0.0) * grid.dx
    y = (np.arange(grid.ny) + 0.0) * grid.dy
    XX, YY = np.meshgrid(x, y)
    bump = cfg.bump_amp * np.exp(
        -((XX - cfg.bump_x) ** 2 + (YY - cfg.bump_y) ** 2) / (2.0 * cfg.bump_sigma**2)
    )
    return StateVector(grid, 1, (cfg.init_base + bump).ravel())


_COV_CACHE: dict = {}


def _init_cov_factor(cfg, grid):
    """Initial covariance and a square-root factor of it.

    The minimal-image Matern kernel is not guaranteed positive definite
    on a torus once the correlation range is non-negligible against the
    domain, so when Cholesky fails the covariance is projected onto the
    PSD cone (eigenvalue clip) and rebuilt from the projected factor.
    The analytic recursion and the ensemble draws then share the exact
    same matrix.
    """
    key = (grid.nx, grid.ny, grid.dx, grid.dy, cfg.sigma0, cfg.psi0)
    if key not in _COV_CACHE:
        sigma0 = matern_covariance(grid, MaternSpec(sigma=cfg.sigma0, psi=cfg.psi0))
        try:
            L0 = cholesky_factor(sigma0)
        except np.linalg.LinAlgError:
            w, U = np.linalg.eigh(sigma0)
            L0 = U * np.sqrt(np.clip(w, 0.0, None))
            sigma0 = L0 @ L0.T
            sigma0 = 0.5 * (sigma0 + sigma0.T)
        _COV_CACHE[key] = (sigma0, L0)
    return _COV_CACHE[key]


def _s_cells(cfg, grid):
    return grid.cell_index(*cfg.eval_s1), grid.cell_index(*cfg.eval_s2)


def _advdiff_truth_job(cfg: ExperimentConfig, t: int, out: str) -> JobResult:
    grid = cfg.grid()
    op = build_advdiff_operator(grid, cfg.advdiff())
    net = _network(cfg)
    espec = cfg.error_spec()
    Q = q_factor(espec, grid, None).covariance()
    mu0 = _advdiff_mu0(cfg, grid)
    sigma0, L0 = _init_cov_factor(cfg, grid)
    schedule = cfg.schedule()
    n_an = len(schedule)
    s1, s2 = _s_cells(cfg, grid)

    rng = seeded_rng(cfg.master_seed, _TRUTH, t)
    x0 = sample_field(mu0, L0, rng)
    err = _EveryK(cfg.error_every(), lambda r: sample_model_error(espec, grid, None, r))
    twin = run_truth(lambda s: StateVector(grid, 1, op.apply(s.values)), err, x0, schedule, net, rng, seed=t)

    twin_path = os.path.join(out, f"truth_t{t:02d}.twin")
    save_twin(twin_path, twin)
    files = [os.path.basename(twin_path)]
    series = []
    cover_hits = None

    # analytic Kalman recursion along the same schedule
    belief = GaussianBelief(mu0.copy(), sigma0)
    n = grid.n_cells
    err_every = cfg.error_every()
    kf_mu = np.empty((n_an, n))
    kf_sd = np.empty((n_an, n))
    sigma_a_prev = None
    Mw = Qw = None
    step_count = 0
    for a, step in enumerate(schedule):
        final_window = a == n_an - 1 and n_an >= 2
        if final_window:
            Mw = np.eye(n)
            Qw = np.zeros((n, n))
        while step_count < step:
            step_count += 1
            inject = step_count % err_every == 0
            belief = kf_forecast(belief, op, Q if inject else None)
            if final_window:
                Mw = op.matrix @ Mw
                Qw = (op.matrix @ (op.matrix @ Qw).T).T
                if inject:
                    Qw += Q
        belief = kf_analysis(belief, twin.observations[a], net)
        kf_mu[a] = belief.mu.values
        kf_sd[a] = np.sqrt(np.clip(np.diag(belief.sigma), 0.0, None))
        if a == 0:
            hits, mean_cp = coverage_probability(
                belief.mu.values, kf_sd[a], twin.truth_at(step).values, Z_COVER
            )
            cover_hits = hits.astype(float)
            cov = MetricSeries("coverage", [], [], rep=_rep_id(t, _KF_SLOT), seed=cfg.master_seed)
            cov.append(step, mean_cp)
            series.append(cov)
        if a == n_an - 2:
            sigma_a_prev = belief.sigma.copy()

    payload = {"mu": kf_mu, "sd": kf_sd}
    if n_an >= 1:
        payload["sigma_term"] = belief.sigma
    if sigma_a_prev is not None:
        payload["corr_s1"] = cross_time_corr_field_kf(Mw, sigma_a_prev, s1, Q=Qw)
        payload["corr_s2"] = cross_time_corr_field_kf(Mw, sigma_a_prev, s2, Q=Qw)
    npz_path = os.path.join(out, f"kf_t{t:02d}.npz")
    np.savez(npz_path, **payload)
    files.append(os.path.basename(npz_path))

    shape = (grid.ny, grid.nx)
    fields = {f"truth_t{t:02d}.csv": twin.final_state.values.reshape(shape)}
    if n_an >= 1:
        fields[f"kf_mean_t{t:02d}.csv"] = kf_mu[-1].reshape(shape)
        fields[f"kf_std_t{t:02d}.csv"] = kf_sd[-1].reshape(shape)
    if cover_hits is not None:
        fields[f"kf_cover_t{t:02d}.csv"] = cover_hits.reshape(shape)
    if sigma_a_prev is not None:
        fields[f"kf_corr_s1_t{t:02d}.csv"] = payload["corr_s1"].reshape(shape)
        fields[f"kf_corr_s2_t{t:02d}.csv"] = payload["corr_s2"].reshape(shape)
    for name, arr in fields.items():
        write_field_csv(os.path.join(out, name), arr)
        files.append(name)

    return JobResult(t=t, e=_KF_SLOT, series=series, files=files, cover_hits=cover_hits)


_PLAN_CACHE: dict = {}


def _plan_for(cfg, net, grid):
    key = (cfg.sites, cfg.r, cfg.radius, grid.nx, grid.ny, grid.dx, grid.dy)
    if key not in _PLAN_CACHE:
        _PLAN_CACHE[key] = build_localisation_plan(net, grid, radius=cfg.radius)
    return _PLAN_CACHE[key]


def _advdiff_rep_job(cfg: ExperimentConfig, t: int, e: int, out: str) -> JobResult:
    grid = cfg.grid()
    op = build_advdiff_operator(grid, cfg.advdiff())
    net = _network(cfg)
    espec = cfg.error_spec()
    F = q_factor(espec, grid, None)
    LQ = F.matrix()
    mu0 = _advdiff_mu0(cfg, grid)
    _, L0 = _init_cov_factor(cfg, grid)
    schedule = cfg.schedule()
    n_an = len(schedule)
    s1, s2 = _s_cells(cfg, grid)
    ne = cfg.ne
    n = grid.n_cells

    twin = load_twin(os.path.join(out, f"truth_t{t:02d}.twin"))
    kf = np.load(os.path.join(out, f"kf_t{t:02d}.npz"))

    rng_init = seeded_rng(cfg.master_seed, _INIT, t, e)
    rng_f = seeded_rng(cfg.master_seed, _FORECAST, t, e)
    rng_filt = seeded_rng(cfg.master_seed, _FILTER, t, e)
    X = mu0.values[:, None] + L0 @ rng_init.standard_normal((n, ne))

    plan = _plan_for(cfg, net, grid) if cfg.filter == "letkf" else None
    params = IewpfParams(beta=cfg.beta) if cfg.filter == "iewpf" else None
    is_iewpf = cfg.filter == "iewpf"
    err_every = cfg.error_every()

    rep = _rep_id(t, e)
    mk = lambda name: MetricSeries(name, [], [], rep=rep, seed=cfg.master_seed)
    ser_rmse, ser_diq1, ser_diq2 = mk("rmse_kf"), mk("diq_s1"), mk("diq_s2")
    ser_cov, ser_fcd = mk("coverage"), mk("fcd_kf")
    ser_ce1, ser_ce2 = mk("ce_s1"), mk("ce_s2")
    ser_w = mk("weight_resid")

    cover_hits = None
    Xa_prev = None
    Xf_term = None
    step_count = 0
    for a, step in enumerate(schedule):
        while step_count < step:
            X = op.matrix @ X
            step_count += 1
            at_analysis = step_count == step
            if step_count % err_every == 0 and not (is_iewpf and at_analysis):
                X = X + LQ @ rng_f.standard_normal((F.latent_dim, ne))
        if a == n_an - 1:
            Xf_term = X.copy()

        y = twin.observations[a]
        ens = EnsembleMatrix(grid, 1, X)
        if cfg.filter == "etkf":
            X = etkf_analysis(ens, y, net).X
        elif cfg.filter == "letkf":
            X = letkf_analysis(ens, y, net, plan, cfg.phi).X
        elif cfg.filter == "iewpf":
            diag: dict = {}
            X = iewpf_analysis(ens, y, net, F, params, rng_filt, diagnostics=diag).X
            spread = float(np.max(diag["log_weight_residual"]))
            ser_w.append(step, spread / max(1.0, abs(diag["target"])))
        # filter == "mc": ensemble never sees the data

        xbar = X.mean(axis=1)
        ser_rmse.append(step, rmse(StateVector(grid, 1, xbar), StateVector(grid, 1, kf["mu"][a])))
        ser_diq1.append(step, d_iq(float(kf["mu"][a][s1]), float(kf["sd"][a][s1]), Ecdf.from_samples(X[s1])))
        ser_diq2.append(step, d_iq(float(kf["mu"][a][s2]), float(kf["sd"][a][s2]), Ecdf.from_samples(X[s2])))
        if a == 0:
            sd = X.std(axis=1, ddof=1)
            hits, mean_cp = coverage_probability(xbar, sd, twin.truth_at(step).values, Z_COVER)
            cover_hits = hits.astype(float)
            ser_cov.append(step, mean_cp)
        if a == n_an - 2:
            Xa_prev = X.copy()

    files = []
    shape = (grid.ny, grid.nx)
    suffix = f"t{t:02d}_e{e:02d}"
    if n_an >= 1:
        ser_fcd.append(schedule[-1], fcd(kf["sigma_term"], np.cov(X)))
        xbar = X.mean(axis=1)
        sd = X.std(axis=1, ddof=1)
        fields = {
            f"mean_{suffix}.csv": xbar.reshape(shape),
            f"std_{suffix}.csv": sd.reshape(shape),
            f"err_kf_{suffix}.csv": (xbar - kf["mu"][-1]).reshape(shape),
        }
        if cover_hits is not None:
            fields[f"cover_{suffix}.csv"] = cover_hits.reshape(shape)
        if Xa_prev is not None and "corr_s1" in kf:
            c1 = cross_time_corr_field_ens(Xa_prev, Xf_term, s1)
            c2 = cross_time_corr_field_ens(Xa_prev, Xf_term, s2)
            ser_ce1.append(schedule[-1], ce(kf["corr_s1"], c1))
            ser_ce2.append(schedule[-1], ce(kf["corr_s2"], c2))
            fields[f"corr_s1_{suffix}.csv"] = c1.reshape(shape)
            fields[f"corr_s2_{suffix}.csv"] = c2.reshape(shape)
        for name, arr in fields.items():
            write_field_csv(os.path.join(out, name), arr)
            files.append(name)
        # terminal ensemble values at the evaluation sites, so distribution
        # overlays can be drawn from the CSVs alone
        spath = os.path.join(out, f"site_samples_{suffix}.csv")
        with open(spath, "w", encoding="utf-8") as fh:
            fh.write("site,member,value\n")
            for label, cell in (("s1", s1), ("s2", s2)):
                for member in range(ne):
                    fh.write(f"{label},{member},{float(X[cell, member])!r}\n")
        files.append(os.path.basename(spath))

    series = [s for s in (ser_rmse, ser_fcd, ser_diq1, ser_diq2, ser_cov, ser_ce1, ser_ce2, ser_w) if s.steps]
    mpath = os.path.join(out, f"metrics_{suffix}.csv")
    write_metric_series_csv(mpath, series)
    files.append(os.path.basename(mpath))
    return JobResult(t=t, e=e, series=series, files=files, cover_hits=cover_hits)


# --- nonlinear case ------------------------------------------------------------


def _swe_x0(cfg, grid) -> StateVector:
    return double_jet_state(grid, cfg.swe(), eta_amp=cfg.jet_amp, jet_sigma=cfg.jet_sigma)


def _swe_truth_job(cfg: ExperimentConfig, t: int, out: str) -> JobResult:
    grid = cfg.grid()
    scfg = cfg.swe()
    net = _network(cfg)
    espec = cfg.error_spec()
    schedule = cfg.schedule()

    rng = seeded_rng(cfg.master_seed, _TRUTH, t)
    err = _EveryK(cfg.error_every(), lambda r: sample_model_error(espec, grid, scfg, r))
    twin = run_truth(lambda s: step_swe(scfg, s, 1), err, _swe_x0(cfg, grid), schedule, net, rng, seed=t)

    twin_path = os.path.join(out, f"truth_t{t:02d}.twin")
    save_twin(twin_path, twin)
    files = [os.path.basename(twin_path)]

    for v, name in enumerate(("eta", "hu", "hv")):
        fname = f"truth_{name}_t{t:02d}.csv"
        write_field_csv(os.path.join(out, fname), twin.final_state.fields()[v])
        files.append(fname)

    if cfg.horizon > 0 and cfg.drifters:
        ens1 = EnsembleMatrix(grid, 3, twin.final_state.values[:, None])
        ts = forecast_trajectories(
            ens1, scfg, np.array(cfg.drifters), cfg.horizon,
            record_stride=cfg.record_stride, error_spec=espec, rng=rng,
        )
        dpath = os.path.join(out, f"drift_truth_t{t:02d}.csv")
        ts.to_csv(dpath)
        files.append(os.path.basename(dpath))

    return JobResult(t=t, e=_KF_SLOT, series=[], files=files)


def _buoy_pairs(cfg):
    """Indices grouped per buoy when sites are (hu, hv) pairs, else None."""
    s = cfg.sites
    if len(s) % 2:
        return None
    for b in range(len(s) // 2):
        (i0, j0, v0), (i1, j1, v1) = s[2 * b], s[2 * b + 1]
        if (i0, j0) != (i1, j1) or (v0, v1) != (1, 2):
            return None
    return len(s) // 2


def _step_members(scfg, grid, X):
    for e in range(X.shape[1]):
        X[:, e] = step_swe(scfg, StateVector(grid, 3, X[:, e]), 1).values
    return X


def _swe_rep_job(cfg: ExperimentConfig, t: int, e: int, out: str) -> JobResult:
    grid = cfg.grid()
    scfg = cfg.swe()
    net = _network(cfg)
    espec = cfg.error_spec()
    F = q_factor(espec, grid, scfg)
    schedule = cfg.schedule()
    n_an = len(schedule)
    ne = cfg.ne
    err_every = cfg.error_every()
    is_iewpf = cfg.filter == "iewpf"

    twin = load_twin(os.path.join(out, f"truth_t{t:02d}.twin"))
    flat_idx = net.flat_indices(grid, 3)

    rng_f = seeded_rng(cfg.master_seed, _FORECAST, t, e)
    rng_filt = seeded_rng(cfg.master_seed, _FILTER, t, e)
    rng_rank = seeded_rng(cfg.master_seed, _RANK, t, e)

    x0 = _swe_x0(cfg, grid)
    X = np.tile(x0.values[:, None], (1, ne))

    # free spin-up from the steady jets, independent error draws per member
    for k in range(1, cfg.spin_up + 1):
        X = _step_members(scfg, grid, X)
        if k % err_every == 0:
            X = X + F.apply(rng_f.standard_normal((F.latent_dim, ne)))

    plan = _plan_for(cfg, net, grid) if cfg.filter == "letkf" else None
    params = IewpfParams(beta=cfg.beta) if is_iewpf else None

    rep = _rep_id(t, e)
    mk = lambda name: MetricSeries(name, [], [], rep=rep, seed=cfg.master_seed)
    ser_rmse = mk("rmse_truth")
    ser_s1, ser_s2, ser_s3 = mk("skill_bias"), mk("skill_mse"), mk("skill_crps")
    ser_w = mk("weight_resid")
    n_buoys = _buoy_pairs(cfg)
    hists = {}
    for k in cfg.rank_sites:
        hists.setdefault(cfg.sites[k][2], RankHistogram(ne))

    step_count = cfg.spin_up
    for a, step in enumerate(schedule):
        while step_count < step:
            X = _step_members(scfg, grid, X)
            step_count += 1
            at_analysis = step_count == step
            if step_count % err_every == 0 and not (is_iewpf and at_analysis):
                X = X + F.apply(rng_f.standard_normal((F.latent_dim, ne)))

        Hx = X[flat_idx, :]
        y = twin.observations[a].values
        if n_buoys:
            ens_obs = Hx.reshape(n_buoys, 2, ne)
            y2 = y.reshape(n_buoys, 2)
            ser_s1.append(step, skill_bias(ens_obs, y2))
            ser_s2.append(step, skill_mse(ens_obs, y2))
            ser_s3.append(step, skill_crps(ens_obs, y2))
        if cfg.rank_sites:
            truth_vals = twin.truth_at(step).values[flat_idx]
            for k in cfg.rank_sites:
                hists[cfg.sites[k][2]].update(Hx[k], float(truth_vals[k]), rng_rank)

        ens = EnsembleMatrix(grid, 3, X)
        if cfg.filter == "etkf":
            X = etkf_analysis(ens, twin.observations[a], net).X
        elif cfg.filter == "letkf":
            X = letkf_analysis(ens, twin.observations[a], net, plan, cfg.phi).X
        elif cfg.filter == "iewpf":
            diag: dict = {}
            X = iewpf_analysis(ens, twin.observations[a], net, F, params, rng_filt, diagnostics=diag).X
            spread = float(np.max(diag["log_weight_residual"]))
            ser_w.append(step, spread / max(1.0, abs(diag["target"])))

        ser_rmse.append(step, float(np.linalg.norm(X.mean(axis=1) - twin.truth_at(step).values)))

    files = []
    suffix = f"t{t:02d}_e{e:02d}"
    shape = (grid.ny, grid.nx)
    if n_an >= 1:
        xbar = X.mean(axis=1).reshape(3, -1)
        sd = X.std(axis=1, ddof=1).reshape(3, -1)
        tru = twin.final_state.values.reshape(3, -1)
        for v, name in enumerate(("eta", "hu", "hv")):
            for stem, arr in (
                (f"mean_{name}", xbar[v]),
                (f"std_{name}", sd[v]),
                (f"err_{name}", xbar[v] - tru[v]),
            ):
                fname = f"{stem}_{suffix}.csv"
                write_field_csv(os.path.join(out, fname), arr.reshape(shape))
                files.append(fname)

    if cfg.horizon > 0 and cfg.drifters:
        ts = forecast_trajectories(
            EnsembleMatrix(grid, 3, X), scfg, np.array(cfg.drifters), cfg.horizon,
            record_stride=cfg.record_stride, error_spec=espec,
            rng=seeded_rng(cfg.master_seed, _DRIFT, t, e),
        )
        dpath = os.path.join(out, f"drift_{suffix}.csv")
        ts.to_csv(dpath)
        files.append(os.path.basename(dpath))
        for d in range(len(cfg.drifters)):
            dens = kde2d(ts.final_positions(d), grid)
            fname = f"kde_d{d}_{suffix}.csv"
            write_field_csv(os.path.join(out, fname), dens)
            files.append(fname)

    series = [s for s in (ser_rmse, ser_s1, ser_s2, ser_s3, ser_w) if s.steps]
    mpath = os.path.join(out, f"metrics_{suffix}.csv")
    write_metric_series_csv(mpath, series)
    files.append(os.path.basename(mpath))
    counts = {v: h.counts.copy() for v, h in hists.items() if h.n_updates}
    return JobResult(t=t, e=e, series=series, files=files, rank_counts=counts or None)


# --- orchestration --------------------------------------------------------------


def build_truth(cfg: ExperimentConfig, t: int = 0):
    """Generate one truth replicate (used by the export-truth command)."""
    cfg.validate()
    grid = cfg.grid()
    espec = cfg.error_spec()
    net = _network(cfg)
    rng = seeded_rng(cfg.master_seed, _TRUTH, t)
    if cfg.case == "advdiff":
        op = build_advdiff_operator(grid, cfg.advdiff())
        mu0 = _advdiff_mu0(cfg, grid)
        _, L0 = _init_cov_factor(cfg, grid)
        x0 = sample_field(mu0, L0, rng)
        step_fn = lambda s: StateVector(grid, 1, op.apply(s.values))
        err = _EveryK(cfg.error_every(), lambda r: sample_model_error(espec, grid, None, r))
    else:
        scfg = cfg.swe()
        x0 = _swe_x0(cfg, grid)
        step_fn = lambda s: step_swe(scfg, s, 1)
        err = _EveryK(cfg.error_every(), lambda r: sample_model_error(espec, grid, scfg, r))
    return run_truth(step_fn, err, x0, cfg.schedule(), net, rng, seed=t)


def _truth_job(args):
    cfg, t, out = args
    try:
        if cfg.case == "advdiff":
            return _advdiff_truth_job(cfg, t, out)
        return _swe_truth_job(cfg, t, out)
    except Exception as err:
        return JobResult(t=t, e=_KF_SLOT, series=[], files=[], abort=f"{type(err).__name__}: {err}")


def _rep_job(args):
    cfg, t, e, out = args
    try:
        if cfg.case == "advdiff":
            return _advdiff_rep_job(cfg, t, e, out)
        return _swe_rep_job(cfg, t, e, out)
    except Exception as err:
        return JobResult(t=t, e=e, series=[], files=[], abort=f"{type(err).__name__}: {err}")


def _run_jobs(fn, jobs, workers):
    if workers <= 1 or len(jobs) <= 1:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, jobs))


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def resolve_out_dir(cfg: ExperimentConfig, out_dir=None) -> str:
    if out_dir:
        return str(out_dir)
    if cfg.out_dir:
        return cfg.out_dir
    root = os.environ.get(_ENV_OUT, "runs")
    return os.path.join(root, f"{cfg.case}-{cfg.filter}-{config_hash(cfg)}")


def run_experiment(cfg: ExperimentConfig, out_dir=None, workers=None) -> dict:
    """Run all replicates; write CSVs and the manifest; return the manifest."""
    cfg.validate()
    out = resolve_out_dir(cfg, out_dir)
    os.makedirs(out, exist_ok=True)
    workers = workers if workers else (os.cpu_count() or 1)

    cfg_public = dataclasses.replace(cfg, out_dir="")
    save_config(os.path.join(out, "config.ini"), cfg_public)
    files = ["config.ini"]
    aborts = []
    all_series = []
    cover_fields = []
    rank_totals: dict = {}

    logger.info("run %s/%s: %d truths x %d ensemble replicates, Ne=%d, out=%s",
                cfg.case, cfg.filter, cfg.n_truths, cfg.n_ens_rep, cfg.ne, out)

    truth_jobs = [(cfg, t, out) for t in range(cfg.n_truths)]
    truth_results = _run_jobs(_truth_job, truth_jobs, workers)
    good_truths = set()
    for res in truth_results:
        if res.abort:
            aborts.append({"replicate": f"t{res.t:02d}", "error": res.abort})
            continue
        good_truths.add(res.t)
        all_series.extend(res.series)
        files.extend(res.files)
        if res.cover_hits is not None and cfg.filter == "kf":
            cover_fields.append(res.cover_hits)

    rep_jobs = []
    if cfg.filter != "kf":
        for t in range(cfg.n_truths):
            for e in range(cfg.n_ens_rep):
                if t in good_truths:
                    rep_jobs.append((cfg, t, e, out))
                else:
                    aborts.append({"replicate": f"t{t:02d}_e{e:02d}", "error": "skipped: truth aborted"})
    rep_results = _run_jobs(_rep_job, rep_jobs, workers)
    for res in rep_results:
        if res.abort:
            aborts.append({"replicate": f"t{res.t:02d}_e{res.e:02d}", "error": res.abort})
            continue
        all_series.extend(res.series)
        files.extend(res.files)
        if res.cover_hits is not None:
            cover_fields.append(res.cover_hits)
        if res.rank_counts:
            for v, c in res.rank_counts.items():
                rank_totals[v] = rank_totals.get(v, 0) + c

    write_metric_series_csv(os.path.join(out, "metrics.csv"), all_series)
    files.append("metrics.csv")

    if cover_fields:
        grid = cfg.grid()
        mean_field = np.mean(cover_fields, axis=0)[: grid.n_cells].reshape(grid.ny, grid.nx)
        write_field_csv(os.path.join(out, "coverage_mean.csv"), mean_field)
        files.append("coverage_mean.csv")

    var_names = {1: "hu", 2: "hv"}
    for v in sorted(rank_totals):
        name = f"rankhist_{var_names.get(v, v)}.csv"
        with open(os.path.join(out, name), "w") as fh:
            fh.write("bin,count\n")
            for b, c in enumerate(rank_totals[v]):
                fh.write(f"{b},{int(c)}\n")
        files.append(name)

    manifest = {
        "case": cfg.case,
        "filter": cfg.filter,
        "config_hash": config_hash(cfg),
        "master_seed": cfg.master_seed,
        "replication": {"ne": cfg.ne, "n_truths": cfg.n_truths, "n_ens_rep": cfg.n_ens_rep},
        "versions": {
            "python": platform.python_version(),
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "ensda": __version__,
        },
        "seed_streams": "SeedSequence(master_seed, spawn_key=(tag, truth[, rep])); "
                        "tags: truth=0 init=1 forecast=2 filter=3 drift=4 rank=5",
        "files": {name: _sha256(os.path.join(out, name)) for name in sorted(files)},
        "aborts": sorted(aborts, key=lambda a: a["replicate"]),
    }
    with open(os.path.join(out, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    if aborts:
        logger.warning("%d replicate(s) aborted; see the manifest", len(aborts))
    return manifest


# --- small readers (tests, figure fixtures) -------------------------------------


def read_metrics_csv(path):
    """-> {(metric, rep): (steps, values)} from a metric-series CSV."""
    out: dict = {}
    with open(path) as fh:
        header = fh.readline().strip()
        if header != "metric,rep,seed,step,value":
            raise ValueError(f"{path}: unexpected header {header!r}")
        for line in fh:
            name, rep, _seed, step, value = line.rstrip("\n").split(",")
            steps, values = out.setdefault((name, int(rep)), ([], []))
            steps.append(int(step))
            values.append(float(value))
    return out


def read_field_csv(path):
    """-> (ny, nx) array from an `i,j,value` field CSV."""
    ii, jj, vv = [], [], []
    with open(path) as fh:
        if fh.readline().strip() != "i,j,value":
            raise ValueError(f"{path}: not a field CSV")
        for line in fh:
            i, j, v = line.split(",")
            ii.append(int(i))
            jj.append(int(j))
            vv.append(float(v))
    arr = np.empty((max(jj) + 1, max(ii) + 1))
    arr[np.array(jj), np.array(ii)] = vv
    return arr
