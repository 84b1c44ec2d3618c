import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tigames.core import TimeGrid
from tigames.errors import GridError, SimulationError, SpecError
from tigames.lq import LQParams
from tigames.presets import ex1_spec, rep_spec
from tigames.rng import RngSpec
from tigames.sde import (conditional_subensemble, constant_field, draw_noise, dump_ensemble, girsanov_log_weight,
                         load_ensemble, moment_estimate, simulate_paths)


def test_rng_paths_do_not_depend_on_batching():
    r = RngSpec(99)
    full = r.normals(10, (3, 2))
    tail = r.normals(4, (3, 2), first_path=6)
    assert np.array_equal(full[6:], tail)


def test_rng_streams_and_seeds_differ():
    a = RngSpec(5).normals(3, (4,))
    assert not np.array_equal(a, RngSpec(5, stream=1).normals(3, (4,)))
    assert not np.array_equal(a, RngSpec(6).normals(3, (4,)))
    with pytest.raises(ValueError):
        RngSpec(-1)


def test_normals_look_standard():
    z = RngSpec(3).normals(4000, (25,)).ravel()
    assert abs(z.mean()) < 4 / np.sqrt(z.size)
    assert abs(z.var() - 1) < 4 * np.sqrt(2 / z.size)


def test_deterministic_drift_free_ensemble():
    # sigma = 0: every path stays at x0 + drift * t
    p = LQParams(sigma=1.0)
    spec = ex1_spec(p)
    spec.sigma = 0.0
    ens = simulate_paths(spec, TimeGrid(1.0, 10), constant_field(0.0), 8, RngSpec(1))
    assert np.all(ens.states == 0.0)


def test_ou_moments_under_constant_control():
    # dX = (a - kX) dt + dW with a = 0: variance (1 - e^{-2t})/2
    p = LQParams(k=1.0)
    spec = rep_spec(p, 1)
    grid = TimeGrid(1.0, 200)
    ens = simulate_paths(spec, grid, constant_field(0.0), 20000, RngSpec(8))
    var, se = moment_estimate(ens, "variance", 0, grid.steps)
    exact = (1 - np.exp(-2.0)) / 2
    assert abs(var - exact) < 4 * se + 0.005  # Euler bias at dt = 1/200 is below 0.005


def test_girsanov_weights_have_unit_mean():
    spec = ex1_spec(LQParams())
    grid = TimeGrid(1.0, 20)
    ens = simulate_paths(spec, grid, constant_field(0.7), 20000, RngSpec(4), measure="reference")
    w = ens.weights()
    assert abs(w.mean() - 1) < 4 * w.std() / np.sqrt(w.size)
    # reference-measure mean of X_T reweighted equals the tilted mean 0.7
    mean, se = moment_estimate(ens, "mean", 0, grid.steps)
    assert abs(mean - 0.7) < 4 * se


def test_girsanov_zero_drift_and_length_check():
    assert np.all(girsanov_log_weight(np.zeros((3, 5)), np.ones((3, 5)), 0.1) == 0.0)
    with pytest.raises(SpecError):
        girsanov_log_weight(np.zeros(4), np.zeros(5), 0.1)


def test_explosion_is_reported():
    spec = dataclasses.replace(ex1_spec(LQParams()), drift=lambda t, x, law, a: 1e12 + 0.0 * x)
    with pytest.raises(SimulationError) as info:
        simulate_paths(spec, TimeGrid(1.0, 5), constant_field(0.0), 3, RngSpec(0))
    assert info.value.path_index == 0


def test_same_seed_same_bytes(tmp_path):
    spec = ex1_spec(LQParams())
    grid = TimeGrid(1.0, 8)
    a = simulate_paths(spec, grid, constant_field(0.2), 50, RngSpec(21))
    b = simulate_paths(spec, grid, constant_field(0.2), 50, RngSpec(21))
    dump_ensemble(a, tmp_path / "a.bin")
    dump_ensemble(b, tmp_path / "b.bin")
    assert (tmp_path / "a.bin").read_bytes() == (tmp_path / "b.bin").read_bytes()
    c = load_ensemble(tmp_path / "a.bin")
    assert np.array_equal(c.states, a.states) and np.array_equal(c.controls, a.controls)
    assert c.grid == grid and c.seed == 21


def test_load_rejects_foreign_file(tmp_path):
    (tmp_path / "x.bin").write_bytes(b"not an ensemble")
    with pytest.raises(SpecError):
        load_ensemble(tmp_path / "x.bin")


def test_conditional_subensemble_keeps_history():
    spec = ex1_spec(LQParams())
    grid = TimeGrid(1.0, 10)
    ens = simulate_paths(spec, grid, constant_field(0.1), 20, RngSpec(2))
    sub = conditional_subensemble(spec, ens, 0.5, 3, constant_field(0.1), 64, RngSpec(2, stream=5))
    assert np.all(sub.states[:, :, :6] == ens.states[3, :, :6])
    assert sub.states[:, :, -1].std() > 0
    with pytest.raises(GridError):
        conditional_subensemble(spec, ens, 0.55, 3, constant_field(0.1), 4, RngSpec(2, stream=5))
    with pytest.raises(SpecError):
        conditional_subensemble(spec, ens, 0.5, 99, constant_field(0.1), 4, RngSpec(2, stream=5))


def test_moment_estimate_sup_norm_and_errors():
    spec = ex1_spec(LQParams())
    ens = simulate_paths(spec, TimeGrid(1.0, 4), constant_field(0.0), 100, RngSpec(2))
    sup, _ = moment_estimate(ens, "sup-norm", 1, 4)
    assert sup == pytest.approx(np.max(np.abs(ens.states[:, 1, 4])))
    with pytest.raises(SpecError):
        moment_estimate(ens, "median", 0, 4)
    with pytest.raises(GridError):
        moment_estimate(ens, "mean", 0, 9)


@given(st.integers(0, 2**64 - 1), st.integers(1, 6))
@settings(max_examples=20, deadline=None)
def test_draw_noise_layout(seed, players):
    z = draw_noise(RngSpec(seed), 3, players, 4)
    assert z.shape == (3, 5, players)
    assert np.array_equal(z[1], RngSpec(seed).normals(1, (5, players), first_path=1)[0])
