import csv

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tigames.core import ControlSet, TimeGrid
from tigames.errors import IsaacsViolation, SpecError
from tigames.rng import RngSpec
from tigames.zerosum import (ZeroSumSpec, antisymmetry_check, isaacs_gap, isaacs_tolerance, lq_zero_sum,
                             lq_zero_sum_value, one_sided_solve, saddle, solve_zero_sum, write_zero_sum_csv,
                             zero_sum_deviation_test)

GRID = TimeGrid(1.0, 20)


def _joint_spec(points, running_joint, lo=-1.0, hi=1.0):
    return ZeroSumSpec(sigma=1.0, control_set=ControlSet(lo, hi, points), terminal=lambda x: 0.0 * x,
                       G=lambda m: 0.0 * m, G_second=lambda m: 0.0 * m, phi=lambda x: 0.0 * x,
                       running_joint=running_joint)


@pytest.fixture(scope="module")
def lq():
    spec = lq_zero_sum(grid_points=81, abar=5.0)
    return spec, solve_zero_sum(spec, GRID, 16384, rng=RngSpec(3))


def test_separable_hamiltonian_has_no_gap():
    spec = lq_zero_sum(grid_points=41, abar=3.0)
    gap, a, am = isaacs_gap(spec, 0.0, np.linspace(-1, 1, 7), np.linspace(-2, 2, 7))
    assert np.all(gap == 0.0)
    val, a2, am2 = saddle(spec, 0.0, np.linspace(-1, 1, 7), np.linspace(-2, 2, 7))
    assert np.array_equal(a, a2) and np.array_equal(am, am2)


def test_bilinear_two_point_game_gap_is_two():
    spec = _joint_spec(2, lambda t, x, a, am: a * am)
    gap, _, _ = isaacs_gap(spec, 0.0, [0.0], [0.0])
    assert gap[0] == pytest.approx(2.0)


def test_powerless_maximizer_has_no_gap():
    # the maximizer's control does not enter, so its "set" is effectively a point
    spec = _joint_spec(11, lambda t, x, a, am: np.cos(3 * a) + x + 0.0 * am)
    gap, a, _ = isaacs_gap(spec, 0.0, [0.3, 1.0], [1.0, -1.0])
    assert np.all(gap == 0.0)
    assert np.allclose(a, -1.0)  # tie at the endpoints goes to the smaller control


@given(st.floats(-2, 2), st.floats(-2, 2), st.floats(-1, 1))
@settings(max_examples=40, deadline=None)
def test_upper_value_dominates_lower_value(c, z, x):
    spec = ZeroSumSpec(sigma=1.0, control_set=ControlSet(-1.0, 1.0, 9), terminal=lambda x: x,
                       G=lambda m: 0.0 * m, G_second=lambda m: 0.0 * m, phi=lambda x: x,
                       running_joint=lambda t, x, a, am: c * a * am + np.sin(3 * a - am),
                       drift_joint=lambda t, x, a, am: a * am - x)
    gap, _, _ = isaacs_gap(spec, 0.0, [x], [z])
    assert gap[0] >= 0.0


def test_trivial_game_has_zero_value():
    spec = _joint_spec(5, None)
    sol = solve_zero_sum(spec, GRID, 512, rng=RngSpec(1))
    assert np.all(sol.Y == 0.0)


def test_lq_value_matches_closed_form(lq):
    _, sol = lq
    exact = lq_zero_sum_value(1.0, 0.5, 2.0, 0.0, 0.0)
    assert abs(sol.Y[:, 0].mean() - exact) < 3 * sol.payoff_se
    assert sol.report.ok and sol.report.max_gap == 0.0


def test_inf_sup_equals_sup_inf_for_separable_game(lq):
    spec, sol = lq
    lower = solve_zero_sum(spec, GRID, 16384, rng=RngSpec(3), order="supinf")
    assert np.array_equal(lower.Y, sol.Y)
    with pytest.raises(SpecError):
        solve_zero_sum(spec, GRID, 64, order="sideways")


def test_one_sided_values_are_antisymmetric(lq):
    _, sol = lq
    first, second = one_sided_solve(sol, "max"), one_sided_solve(sol, "min")
    dy, dz = antisymmetry_check(first, second)
    assert dy <= 3 * sol.payoff_se and dz <= 3 * sol.payoff_se
    assert np.allclose(first.Y, sol.Y, atol=3 * sol.payoff_se)


@pytest.mark.parametrize("side", ["max", "min"])
@pytest.mark.parametrize("dev", [-1.0, 1.0])
def test_unilateral_deviation_does_not_pay(lq, side, dev):
    _, sol = lq
    res = zero_sum_deviation_test(sol, 0.5, 0.1, dev, side, num_test=4096)
    assert res.passed and res.gap > 0


def test_game_without_saddle_is_refused():
    spec = _joint_spec(201, lambda t, x, a, am: (a - am) ** 2)
    with pytest.raises(IsaacsViolation) as info:
        solve_zero_sum(spec, TimeGrid(1.0, 4), 256, check_paths=8, rng=RngSpec(2))
    assert info.value.report.max_gap == pytest.approx(1.0)


def test_csv_columns(lq, tmp_path):
    _, sol = lq
    first, second = one_sided_solve(sol, "max"), one_sided_solve(sol, "min")
    write_zero_sum_csv(sol, tmp_path / "zs.csv", first, second)
    rows = list(csv.reader(open(tmp_path / "zs.csv")))
    assert rows[0] == ["t", "mean_Y", "gap_max", "antisymmetry_defect"]
    assert len(rows) == GRID.steps + 2 and rows[-1][2] == ""
