import numpy as np
import pytest

from ensda.gridfield import Grid2D, StateVector, seeded_rng
from ensda.models.advdiff import AdvDiffConfig, build_advdiff_operator, step_linear
from ensda.models.swe import SweAbort
from ensda.observing import (
    ObservationNetwork,
    apply_H,
    export_observations_csv,
    load_twin,
    observe,
    run_truth,
    save_twin,
)

GRID = Grid2D(10, 6, 0.1, 0.1)


def _net(sites, r=0.1):
    return ObservationNetwork(sites=tuple(sites), r=r)


def _random_state(rng, grid=GRID, n_vars=1):
    return StateVector(grid, n_vars, rng.standard_normal(n_vars * grid.n_cells))


def test_network_validation():
    with pytest.raises(ValueError, match="distinct"):
        _net([(0, 0), (0, 0)])
    with pytest.raises(ValueError, match="at least one"):
        _net([])
    with pytest.raises(ValueError, match="r must be"):
        _net([(0, 0)], r=-1.0)


def test_apply_H_single_cell():
    x = StateVector(GRID, 1, np.arange(GRID.n_cells, dtype=float) + 7.0)
    assert apply_H(_net([(0, 0)]), x) == pytest.approx([7.0])


def test_apply_H_full_state_identity():
    rng = seeded_rng(11, 0)
    x = _random_state(rng)
    full = _net([(c, 0) for c in range(GRID.n_cells)])
    np.testing.assert_array_equal(apply_H(full, x), x.values)


def test_apply_H_matches_dense_matrix_oracle():
    rng = seeded_rng(11, 1)
    x = _random_state(rng, n_vars=3)
    sites = [(3, 0), (17, 1), (44, 2), (5, 1)]
    net = _net(sites)
    H = np.zeros((len(sites), 3 * GRID.n_cells))
    for row, (c, v) in enumerate(sites):
        H[row, v * GRID.n_cells + c] = 1.0
    np.testing.assert_array_equal(apply_H(net, x), H @ x.values)


def test_apply_H_is_linear():
    rng = seeded_rng(11, 2)
    a, b = _random_state(rng), _random_state(rng)
    net = _net([(1, 0), (33, 0), (59, 0)])
    lhs = apply_H(net, StateVector(GRID, 1, 2.0 * a.values - 3.0 * b.values))
    np.testing.assert_allclose(lhs, 2.0 * apply_H(net, a) - 3.0 * apply_H(net, b), rtol=1e-15)


def test_apply_H_index_validation():
    x = _random_state(seeded_rng(11, 3))
    with pytest.raises(ValueError, match="cell index"):
        apply_H(_net([(GRID.n_cells, 0)]), x)
    with pytest.raises(ValueError, match="variable index"):
        apply_H(_net([(0, 1)]), x)


def test_observe_no_noise():
    x = _random_state(seeded_rng(11, 4))
    net = _net([(4, 0), (9, 0)], r=0.0)
    rec = observe(net, x, seeded_rng(11, 5), time_index=3)
    np.testing.assert_array_equal(rec.values, apply_H(net, x))
    assert rec.time_index == 3


def test_observe_seed_determinism():
    x = _random_state(seeded_rng(11, 6))
    net = _net([(4, 0), (9, 0)], r=0.5)
    a = observe(net, x, seeded_rng(42, 0))
    b = observe(net, x, seeded_rng(42, 0))
    np.testing.assert_array_equal(a.values, b.values)


def test_observe_noise_std():
    x = StateVector(GRID, 1, np.zeros(GRID.n_cells))
    net = _net([(4, 0)], r=0.1)
    rng = seeded_rng(11, 7)
    draws = np.array([observe(net, x, rng).values[0] for _ in range(100_000)])
    assert draws.std() == pytest.approx(0.1, rel=0.02)


# --- run_truth ------------------------------------------------------------


def _advdiff_step(grid):
    cfg = AdvDiffConfig(d=0.2, v=(0.5, 0.1), zeta=-0.0001, dt=0.01)
    op = build_advdiff_operator(grid, cfg)
    return op, (lambda s: step_linear(op, s))


def test_run_truth_empty_schedule_returns_final_state():
    op, step = _advdiff_step(GRID)
    x0 = _random_state(seeded_rng(12, 0))
    twin = run_truth(step, lambda rng: None, x0, (), _net([(0, 0)]), seeded_rng(12, 1))
    assert twin.observations == []
    assert twin.truth_states == []
    np.testing.assert_array_equal(twin.final_state.values, x0.values)


def test_run_truth_zero_error_matches_matrix_power():
    op, step = _advdiff_step(GRID)
    x0 = _random_state(seeded_rng(12, 2))
    twin = run_truth(step, lambda rng: None, x0, (3, 7), _net([(5, 0)], r=0.0), seeded_rng(12, 3))
    dense = op.dense()
    expected = np.linalg.matrix_power(dense, 7) @ x0.values
    np.testing.assert_allclose(twin.final_state.values, expected, rtol=0, atol=1e-10)
    np.testing.assert_allclose(
        twin.truth_states[0].values, np.linalg.matrix_power(dense, 3) @ x0.values, atol=1e-10
    )
    # r=0: recorded values are exact gathers of the stored truths
    np.testing.assert_array_equal(twin.observations[1].values, apply_H(twin.network, twin.truth_states[1]))


def test_run_truth_reference_shape():
    # 10 observation records at steps 25, 50, ..., 250 with 15 sites
    grid = Grid2D(50, 30, 0.1, 0.1)
    cfg = AdvDiffConfig(d=0.25, v=(1.0, 0.1), zeta=-0.0001, dt=0.01)
    op = build_advdiff_operator(grid, cfg)
    rng = seeded_rng(12, 4)
    sites = [(int(c), 0) for c in rng.choice(grid.n_cells, size=15, replace=False)]
    x0 = StateVector(grid, 1, np.full(grid.n_cells, 10.0))
    twin = run_truth(
        lambda s: step_linear(op, s),
        lambda r: None,
        x0,
        tuple(range(25, 251, 25)),
        _net(sites, r=0.1),
        rng,
    )
    assert len(twin.observations) == 10
    assert all(rec.values.shape == (15,) for rec in twin.observations)
    assert [rec.time_index for rec in twin.observations] == list(range(25, 251, 25))


def test_run_truth_replayable():
    op, step = _advdiff_step(GRID)
    x0 = _random_state(seeded_rng(12, 5))
    err = lambda rng: StateVector(GRID, 1, 0.01 * rng.standard_normal(GRID.n_cells))
    net = _net([(4, 0), (9, 0)], r=0.2)
    a = run_truth(step, err, x0, (2, 5), net, seeded_rng(13, 0), seed=13)
    b = run_truth(step, err, x0, (2, 5), net, seeded_rng(13, 0), seed=13)
    for ra, rb in zip(a.observations, b.observations):
        np.testing.assert_array_equal(ra.values, rb.values)
    np.testing.assert_array_equal(a.final_state.values, b.final_state.values)


def test_run_truth_schedule_validation():
    op, step = _advdiff_step(GRID)
    x0 = _random_state(seeded_rng(12, 6))
    with pytest.raises(ValueError, match="increasing"):
        run_truth(step, lambda r: None, x0, (5, 5), _net([(0, 0)]), seeded_rng(0, 0))
    with pytest.raises(ValueError, match=">= 1"):
        run_truth(step, lambda r: None, x0, (0, 5), _net([(0, 0)]), seeded_rng(0, 0))


def test_run_truth_abort_carries_time_stamp():
    calls = [0]

    def bad_step(s):
        calls[0] += 1
        if calls[0] == 3:
            raise SweAbort("drying: h <= 0 at cell (i=1, j=1)")
        return s

    x0 = _random_state(seeded_rng(12, 7))
    with pytest.raises(SweAbort, match="step 3"):
        run_truth(bad_step, lambda r: None, x0, (5,), _net([(0, 0)]), seeded_rng(0, 0))


# --- serialization --------------------------------------------------------


def test_twin_roundtrip(tmp_path):
    op, step = _advdiff_step(GRID)
    x0 = _random_state(seeded_rng(14, 0))
    err = lambda rng: StateVector(GRID, 1, 0.01 * rng.standard_normal(GRID.n_cells))
    twin = run_truth(step, err, x0, (2, 4, 6), _net([(4, 0), (9, 0)], r=0.2), seeded_rng(14, 1), seed=77)
    path = tmp_path / "truth.twx"
    save_twin(path, twin)
    back = load_twin(path)
    assert back.seed == 77
    assert back.schedule == (2, 4, 6)
    assert back.network.sites == twin.network.sites
    assert back.network.r == twin.network.r
    assert back.grid == twin.grid
    for sa, sb in zip(twin.truth_states, back.truth_states):
        np.testing.assert_array_equal(sa.values, sb.values)
    np.testing.assert_array_equal(twin.final_state.values, back.final_state.values)
    for ra, rb in zip(twin.observations, back.observations):
        assert ra.time_index == rb.time_index
        np.testing.assert_array_equal(ra.values, rb.values)


def test_load_rejects_bad_magic(tmp_path):
    p = tmp_path / "junk.twx"
    p.write_bytes(b"NOPE" + b"\x00" * 50)
    with pytest.raises(ValueError, match="not a twin-experiment"):
        load_twin(p)


def test_load_rejects_trailing_bytes(tmp_path):
    op, step = _advdiff_step(GRID)
    x0 = _random_state(seeded_rng(14, 2))
    twin = run_truth(step, lambda r: None, x0, (2,), _net([(4, 0)]), seeded_rng(14, 3))
    p = tmp_path / "truth.twx"
    save_twin(p, twin)
    p.write_bytes(p.read_bytes() + b"\x00")
    with pytest.raises(ValueError, match="trailing"):
        load_twin(p)


def test_export_observations_csv(tmp_path):
    op, step = _advdiff_step(GRID)
    x0 = _random_state(seeded_rng(14, 4))
    twin = run_truth(step, lambda r: None, x0, (2, 4), _net([(4, 0), (9, 0)], r=0.1), seeded_rng(14, 5))
    p = tmp_path / "obs.csv"
    export_observations_csv(twin, p)
    lines = p.read_text().strip().splitlines()
    assert lines[0] == "time_index,site,value"
    assert len(lines) == 1 + 2 * 2
    t, site, val = lines[1].split(",")
    assert (t, site) == ("2", "0")
    assert float(val) == twin.observations[0].values[0]
