import dataclasses
import hashlib
import json
import os

import numpy as np
import pytest

from ensda.harness import cli
from ensda.harness import config as hconfig
from ensda.harness import run as hrun
from ensda.harness.config import (
    ExperimentConfig,
    config_hash,
    load_config,
    paper_scale,
    preset,
    preset_names,
    save_config,
)
from ensda.observing import load_twin

# small, fast, well-conditioned linear setup used throughout
TINY = dict(
    nx=20, ny=12, obs_every=10, n_analyses=3, ne=8,
    n_truths=1, n_ens_rep=2, master_seed=11, q_psi=20.0, psi0=12.0,
    q_interval=0.1,
    sites=((2, 2, 0), (10, 5, 0), (15, 8, 0), (5, 9, 0), (17, 2, 0)),
    eval_s1=(2, 2), eval_s2=(12, 10),
)


def tiny_cfg(**over):
    merged = {**TINY, **over}
    return dataclasses.replace(preset("advdiff-verify"), **merged)


def tiny_swe_cfg(**over):
    buoys = hconfig._swe_buoys(16, 12)
    base = dict(
        case="swe", nx=16, ny=12, dx=2200.0, dy=2200.0,
        q_sigma=0.001, q_psi=1.25e-4, q_coarse=2, q_interval=60.0,
        r=1.0, obs_every=6, n_analyses=3, spin_up=12,
        sites=hconfig._buoy_sites(buoys), rank_sites=(0, 1, 4, 5),
        radius=30000.0, phi=1.0, beta=1.0,
        horizon=12, record_stride=6, drifters=((11000.0, 8800.0),),
        ne=4, n_truths=1, n_ens_rep=2, master_seed=7,
    )
    base.update(over)
    return dataclasses.replace(preset("advdiff-verify"), **base)


# --- config -------------------------------------------------------------------


@pytest.mark.parametrize("name", preset_names())
def test_presets_validate(name):
    cfg = preset(name)
    cfg.validate()
    assert cfg.schedule()[0] == cfg.spin_up + cfg.obs_every


def test_preset_unknown_name():
    with pytest.raises(ValueError, match="unknown preset"):
        preset("nope")


@pytest.mark.parametrize("name", preset_names())
def test_ini_roundtrip_presets(tmp_path, name):
    cfg = preset(name)
    path = tmp_path / "c.ini"
    save_config(path, cfg)
    assert load_config(path) == cfg


def test_ini_roundtrip_custom_fields(tmp_path):
    cfg = tiny_cfg(eval_s1=(1, 3), eval_s2=(7, 7), rank_sites=(0, 2),
                   drifters=((0.55, 0.4),), out_dir="")
    path = tmp_path / "c.ini"
    save_config(path, cfg)
    back = load_config(path)
    assert back.eval_s1 == (1, 3) and back.eval_s2 == (7, 7)
    assert back.rank_sites == (0, 2)
    assert back.drifters == ((0.55, 0.4),)
    assert back == cfg


def test_load_config_sparse_override(tmp_path):
    path = tmp_path / "o.ini"
    path.write_text("[replication]\nne = 13\n\n[filter]\nphi = 0.5\n")
    cfg = load_config(path, base=preset("advdiff-verify"))
    assert cfg.ne == 13 and cfg.phi == 0.5
    ref = preset("advdiff-verify")
    assert cfg.sites == ref.sites and cfg.obs_every == ref.obs_every


def test_load_config_rejects_unknown_key(tmp_path):
    path = tmp_path / "bad.ini"
    path.write_text("[filter]\nradius = 0.5\nbogus = 1\n")
    with pytest.raises(ValueError, match="unknown key 'bogus'"):
        load_config(path)


def test_load_config_rejects_unknown_section(tmp_path):
    path = tmp_path / "bad.ini"
    path.write_text("[mystery]\nx = 1\n")
    with pytest.raises(ValueError, match="unknown config sections"):
        load_config(path)


def test_load_config_missing_file(tmp_path):
    with pytest.raises(ValueError, match="cannot read"):
        load_config(tmp_path / "absent.ini")


@pytest.mark.parametrize(
    "over,msg",
    [
        (dict(case="swe", filter="kf"), "only defined for case=advdiff"),
        (dict(filter="enkf"), "unknown filter"),
        (dict(case="lorenz"), "unknown case"),
        (dict(phi=1.5), "phi"),
        (dict(beta=0.0), "beta"),
        (dict(ne=1), "ne >= 2"),
        (dict(n_truths=0), "n_truths"),
        (dict(sites=((99, 2, 0),)), "outside the grid"),
        (dict(rank_sites=(77,)), "rank site index"),
        (dict(eval_s2=(25, 15)), "evaluation point"),
        (dict(drifters=((1e9, 0.0),)), "drifter"),
    ],
)
def test_validate_rejects(over, msg):
    with pytest.raises(ValueError, match=msg):
        tiny_cfg(**over).validate()


def test_config_hash_ignores_output_section():
    a = tiny_cfg(out_dir="")
    b = tiny_cfg(out_dir="/somewhere/else")
    assert config_hash(a) == config_hash(b)
    c = tiny_cfg(q_sigma=0.2)
    assert config_hash(a) != config_hash(c)


def test_schedule_and_error_cadence():
    cfg = tiny_cfg(spin_up=5, obs_every=10, n_analyses=3)
    assert cfg.schedule() == (15, 25, 35)
    swe = tiny_swe_cfg(q_interval=60.0, dt_num=10.0)
    assert swe.error_every() == 6


def test_paper_scale_is_swe_only():
    full = paper_scale(preset("swe-drift"))
    full.validate()
    assert full.nx > preset("swe-drift").nx and full.ne > preset("swe-drift").ne
    with pytest.raises(ValueError):
        paper_scale(tiny_cfg())


# --- runs ----------------------------------------------------------------------


def _all_bytes(out):
    return {f: (out / f).read_bytes() for f in sorted(os.listdir(out))}


def test_rerun_is_byte_identical(tmp_path):
    cfg = tiny_cfg(filter="letkf", n_truths=2)
    outs = []
    for tag, workers in (("a", 1), ("b", 1), ("c", 3)):
        man = hrun.run_experiment(cfg, out_dir=tmp_path / tag, workers=workers)
        assert not man["aborts"]
        outs.append(_all_bytes(tmp_path / tag))
    assert outs[0] == outs[1], "second sequential run differs"
    assert outs[0] == outs[2], "pooled run differs from sequential"


def test_manifest_lists_every_artifact_with_hash(tmp_path):
    man = hrun.run_experiment(tiny_cfg(filter="etkf"), out_dir=tmp_path, workers=1)
    on_disk = set(os.listdir(tmp_path))
    assert set(man["files"]) | {"manifest.json"} == on_disk
    for name, digest in man["files"].items():
        h = hashlib.sha256((tmp_path / name).read_bytes()).hexdigest()
        assert h == digest, name
    assert man["config_hash"] == config_hash(tiny_cfg(filter="etkf"))
    assert man["versions"]["numpy"] == np.__version__
    # the manifest on disk round-trips to the returned dict
    assert json.loads((tmp_path / "manifest.json").read_text()) == man


def test_advdiff_site_samples_artifact(tmp_path):
    cfg = tiny_cfg(filter="etkf")
    hrun.run_experiment(cfg, out_dir=tmp_path, workers=1)
    lines = (tmp_path / "site_samples_t00_e01.csv").read_text().splitlines()
    assert lines[0] == "site,member,value"
    rows = [ln.split(",") for ln in lines[1:]]
    assert len(rows) == 2 * cfg.ne
    assert [r[0] for r in rows] == ["s1"] * cfg.ne + ["s2"] * cfg.ne
    assert [int(r[1]) for r in rows] == list(range(cfg.ne)) * 2
    vals = np.array([float(r[2]) for r in rows])
    assert np.all(np.isfinite(vals))
    # the recorded samples are the ones the terminal quantile score was fed:
    # their ECDF reproduces the stored diq values against the stored reference
    from ensda.metrics import Ecdf, d_iq

    kf = np.load(tmp_path / "kf_t00.npz")
    grid = cfg.grid()
    metrics = hrun.read_metrics_csv(tmp_path / "metrics.csv")
    for label, (i, j), name in (
        ("s1", cfg.eval_s1, "diq_s1"),
        ("s2", cfg.eval_s2, "diq_s2"),
    ):
        cell = grid.cell_index(i, j)
        samples = vals[[r[0] for r in rows].index(label) :][: cfg.ne]
        got = d_iq(float(kf["mu"][-1][cell]), float(kf["sd"][-1][cell]), Ecdf.from_samples(samples))
        assert got == metrics[(name, 1)][1][-1]


@pytest.mark.parametrize("filt", ["etkf", "letkf", "iewpf", "mc"])
def test_advdiff_filters_produce_expected_metrics(tmp_path, filt):
    man = hrun.run_experiment(tiny_cfg(filter=filt), out_dir=tmp_path, workers=1)
    assert not man["aborts"]
    rows = hrun.read_metrics_csv(tmp_path / "metrics.csv")
    names = {k[0] for k in rows}
    expected = {"rmse_kf", "fcd_kf", "diq_s1", "diq_s2", "coverage", "ce_s1", "ce_s2"}
    if filt == "iewpf":
        expected |= {"weight_resid"}
    assert names == expected
    # replicate ids: ensemble slots 0..n_ens_rep-1 plus the reference slot 99
    assert {k[1] for k in rows} == {0, 1, 99}
    steps, vals = rows[("rmse_kf", 0)]
    assert steps == [10, 20, 30] and all(v >= 0 for v in vals)
    # per-replicate files carry the same rows as the merged table
    sub = hrun.read_metrics_csv(tmp_path / "metrics_t00_e01.csv")
    assert sub[("rmse_kf", 1)] == rows[("rmse_kf", 1)]


def test_advdiff_kf_reference_run(tmp_path):
    man = hrun.run_experiment(tiny_cfg(filter="kf"), out_dir=tmp_path, workers=1)
    assert not man["aborts"]
    rows = hrun.read_metrics_csv(tmp_path / "metrics.csv")
    assert set(rows) == {("coverage", 99)}
    cp = rows[("coverage", 99)][1][0]
    assert 0.5 < cp <= 1.0
    field = hrun.read_field_csv(tmp_path / "coverage_mean.csv")
    assert field.shape == (12, 20)
    assert set(np.unique(field)) <= {0.0, 1.0}
    assert field.mean() == pytest.approx(cp)


def test_swe_run_emits_skills_ranks_and_drift(tmp_path):
    cfg = tiny_swe_cfg(filter="letkf")
    man = hrun.run_experiment(cfg, out_dir=tmp_path, workers=1)
    assert not man["aborts"]
    rows = hrun.read_metrics_csv(tmp_path / "metrics.csv")
    names = {k[0] for k in rows}
    assert names == {"rmse_truth", "skill_bias", "skill_mse", "skill_crps"}
    assert rows[("skill_crps", 0)][0] == list(cfg.schedule())

    # rank histograms: one update per rank site of that variable per analysis
    for var, n_sites in (("hu", 2), ("hv", 2)):
        lines = (tmp_path / f"rankhist_{var}.csv").read_text().splitlines()
        assert lines[0] == "bin,count"
        counts = [int(l.split(",")[1]) for l in lines[1:]]
        assert len(counts) == cfg.ne + 1
        assert sum(counts) == n_sites * cfg.n_analyses * cfg.n_ens_rep

    # drifter products: trajectories plus a density that integrates to one
    assert (tmp_path / "drift_t00_e00.csv").exists()
    kde = hrun.read_field_csv(tmp_path / "kde_d0_t00_e01.csv")
    cell = cfg.dx * cfg.dy
    assert float(kde.sum()) * cell == pytest.approx(1.0, abs=1e-3)

    # terminal fields for every variable and the truth
    for stem in ("mean_hu", "std_hu", "err_eta", "truth_hv"):
        matches = [f for f in man["files"] if f.startswith(stem)]
        assert matches, stem


def test_aborting_truth_skips_replicates(tmp_path):
    cfg = tiny_swe_cfg(q_sigma=1e6)  # guaranteed blow-up
    man = hrun.run_experiment(cfg, out_dir=tmp_path, workers=1)
    ids = [a["replicate"] for a in man["aborts"]]
    assert ids == ["t00", "t00_e00", "t00_e01"]
    assert "aborted" in man["aborts"][0]["error"]


def test_run_seed_stream_independent_of_replication():
    """Truth 0 / member-rep 0 must not change when more replicates are added."""
    import tempfile
    with tempfile.TemporaryDirectory() as d:
        a = os.path.join(d, "a")
        b = os.path.join(d, "b")
        hrun.run_experiment(tiny_cfg(filter="etkf", n_truths=1, n_ens_rep=1), out_dir=a, workers=1)
        hrun.run_experiment(tiny_cfg(filter="etkf", n_truths=2, n_ens_rep=2), out_dir=b, workers=1)
        for f in ("metrics_t00_e00.csv", "truth_t00.twin"):
            assert open(os.path.join(a, f), "rb").read() == open(os.path.join(b, f), "rb").read(), f


# --- CLI -----------------------------------------------------------------------


def test_cli_requires_config_or_preset(capsys):
    assert cli.main(["run"]) == 2
    assert "need --config" in capsys.readouterr().err


def test_cli_rejects_bad_config(tmp_path, capsys):
    bad = tmp_path / "bad.ini"
    bad.write_text("[filter]\nphi = 7\n")
    assert cli.main(["run", "--config", str(bad)]) == 2
    assert "phi" in capsys.readouterr().err


def test_cli_list_presets(capsys):
    assert cli.main(["list-presets"]) == 0
    text = capsys.readouterr().out
    for name in preset_names():
        assert name in text


def test_cli_run_and_exit_codes(tmp_path, capsys):
    ini = tmp_path / "t.ini"
    save_config(ini, tiny_cfg(filter="letkf", n_ens_rep=1))
    out = tmp_path / "r"
    assert cli.main(["run", "--config", str(ini), "--workers", "1", "--out", str(out)]) == 0
    assert (out / "manifest.json").exists()
    assert "wrote" in capsys.readouterr().out


def test_cli_exit_3_on_aborts(tmp_path, capsys):
    ini = tmp_path / "boom.ini"
    save_config(ini, tiny_swe_cfg(q_sigma=1e6, n_ens_rep=0))
    assert cli.main(["run", "--config", str(ini), "--workers", "1",
                     "--out", str(tmp_path / "r")]) == 3
    assert "aborted" in capsys.readouterr().err


def test_cli_seed_override_changes_outputs(tmp_path):
    ini = tmp_path / "t.ini"
    save_config(ini, tiny_cfg(filter="etkf", n_ens_rep=1))
    outs = {}
    for seed in ("101", "202"):
        out = tmp_path / seed
        assert cli.main(["run", "--config", str(ini), "--seed", seed,
                         "--workers", "1", "--out", str(out)]) == 0
        outs[seed] = (out / "truth_t00.twin").read_bytes()
    assert outs["101"] != outs["202"]


def test_cli_export_truth_roundtrip(tmp_path):
    ini = tmp_path / "t.ini"
    save_config(ini, tiny_cfg())
    path = tmp_path / "x.twin"
    assert cli.main(["export-truth", "--config", str(ini), "--out", str(path)]) == 0
    twin = load_twin(path)
    assert twin.schedule == tiny_cfg().schedule()
    assert twin.grid.nx == TINY["nx"]
    # the exported truth matches what run_experiment generates for t=0
    out = tmp_path / "r"
    hrun.run_experiment(tiny_cfg(filter="kf"), out_dir=out, workers=1)
    assert path.read_bytes() == (out / "truth_t00.twin").read_bytes()


def test_out_dir_resolution_env(monkeypatch, tmp_path):
    cfg = tiny_cfg()
    monkeypatch.setenv("ENSDA_OUT_DIR", str(tmp_path / "envroot"))
    got = hrun.resolve_out_dir(cfg)
    assert got.startswith(str(tmp_path / "envroot"))
    assert config_hash(cfg) in got
    assert hrun.resolve_out_dir(cfg, "explicit") == "explicit"
    monkeypatch.delenv("ENSDA_OUT_DIR")
    assert hrun.resolve_out_dir(cfg).startswith("runs")
