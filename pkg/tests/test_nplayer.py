import csv

import numpy as np
import pytest

from tigames.core import TimeGrid
from tigames.errors import GridError, SpecError
from tigames.lq import ex1_solution
from tigames.nplayer import (appendix_diagnostics, epsilon_deviation_test, solve_nplayer, value_process,
                             write_step_csv)
from tigames.presets import custom_spec
from tigames.regression import RegressionBasis, ols_standard_errors
from tigames.rng import RngSpec


def test_shapes(small_ex1):
    _, _, sol = small_ex1
    M, n = sol.ensemble.num_paths, sol.grid.steps
    assert sol.Y.shape == (M, 2, n + 1)
    assert sol.controls.shape == (M, 2, n)
    assert sol.Mstar.shape == (M, 2, n + 1)
    assert sol.Nstar.shape == (M, n + 1)
    assert sol.Zm.shape == (M, 2, 2, n)


def test_initial_value_matches_closed_form(small_ex1):
    p, _, sol = small_ex1
    exact = float(ex1_solution(p, 0.0, 0.0).Y)
    payoff_sd = sol.Y[:, :, -1].std()
    se = payoff_sd / np.sqrt(sol.ensemble.num_paths)
    assert sol.converged
    assert np.all(np.abs(sol.Y[:, :, 0].mean(axis=0) - exact) < 4 * se)
    assert np.all(np.abs(sol.controls.mean(axis=(0, 2)) - p.sigma / 2) < 0.02)


def test_value_process_selects_grid_time(small_ex1):
    _, _, sol = small_ex1
    assert np.array_equal(value_process(sol, 0.5, 1), sol.Y[:, 1, 10])
    assert value_process(sol, 0.0).shape == (sol.ensemble.num_paths, 2)
    with pytest.raises(GridError):
        value_process(sol, 0.51)


def test_replaying_equilibrium_gives_zero_gap(small_ex1):
    _, spec, sol = small_ex1
    res = epsilon_deviation_test(spec, sol, 0.25, 1, None, num_test=256)
    assert res.gap == 0.0 and res.passed


def test_spike_deviation_does_not_pay(small_ex1):
    _, spec, sol = small_ex1
    for dev in (-1.0, 1.0):
        assert epsilon_deviation_test(spec, sol, 0.5, 2, dev, num_test=512).passed
    with pytest.raises(GridError):
        epsilon_deviation_test(spec, sol, 0.95, 5, 0.0)


def test_diagnostics_hold(small_ex1):
    _, _, sol = small_ex1
    checks = appendix_diagnostics(sol)
    assert {c.name for c in checks} >= {"sup_abs_mstar", "sup_abs_nstar"}
    assert all(c.passed for c in checks)


def test_auxiliary_martingale_increments_are_unpredictable(small_ex1):
    _, _, sol = small_ex1
    basis = RegressionBasis(2)
    worst = 0.0
    for k in range(sol.grid.steps):
        x = sol.ensemble.states[:, :, k]
        for i in range(2):
            feats = basis.features(x[:, i], x.mean(axis=1))
            keep = np.ptp(feats, axis=0) > 0
            keep[0] = True
            coef, se = ols_standard_errors(sol.Mstar[:, i, k + 1] - sol.Mstar[:, i, k], feats[:, keep])
            worst = max(worst, float(np.max(np.abs(coef) / se)))
    assert worst < 4.0


def test_step_csv_columns(small_ex1, tmp_path):
    _, _, sol = small_ex1
    write_step_csv(sol, tmp_path / "steps.csv")
    with open(tmp_path / "steps.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["t", "player", "mean_Y", "mean_alpha", "fixed_point_residual", "mstar_bound_slack"]
    assert len(rows) == 1 + 2 * (sol.grid.steps + 1)
    assert float(rows[-1][0]) == 1.0


def test_uncontrolled_custom_game_has_terminal_mean_value():
    # no running reward, terminal x: the value is x0 + sigma * T * drift const
    table = {"drift": {"const": 0.3}, "terminal": {"state": 1.0}}
    spec = custom_spec(table, 3, sigma=1.0, abar=1.0, x0=0.5, grid_points=21)
    sol = solve_nplayer(spec, TimeGrid(1.0, 5), 2048, rng=RngSpec(3))
    assert np.allclose(sol.Y[:, :, 0], 0.8, atol=4 / np.sqrt(2048))


def test_too_few_paths_rejected():
    spec = custom_spec({"terminal": {"state": 1.0}}, 2)
    with pytest.raises(SpecError):
        solve_nplayer(spec, TimeGrid(1.0, 4), 8)
