import math

import numpy as np
import pytest
import scipy.stats
from hypothesis import given, settings
from hypothesis import strategies as st

from tigames.core import (ControlSet, EmpiricalMeasure, GameSpec, HamiltonianInput, HamiltonianState, TimeGrid,
                          argmax_control, empirical_measure, fixed_point_residual, grid_maximize,
                          hamiltonian_fixed_point, hamiltonian_i, project_to_A, quadratic_aggregator,
                          wasserstein_1d)
from tigames.errors import EmptyEnsembleError, GridError, SpecError
from tigames.lq import LQParams
from tigames.presets import ex1_spec, ex2_spec, rep_spec

finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)
samples = st.lists(finite, min_size=1, max_size=40)


# --- control set and projection ---------------------------------------------------------------

def test_projection_examples():
    cs = ControlSet(-1.0, 1.0)
    assert project_to_A(3.0, cs) == 1.0
    assert project_to_A(-7.0, cs) == -1.0
    assert project_to_A(0.25, cs) == 0.25


@given(st.floats(-50, 50), st.floats(-50, 50))
def test_projection_idempotent_and_contractive(a, b):
    cs = ControlSet(-2.0, 3.0)
    pa, pb = project_to_A(a, cs), project_to_A(b, cs)
    assert project_to_A(pa, cs) == pa
    assert abs(pa - pb) <= abs(a - b) + 1e-12


def test_control_set_rejects_bad_bounds():
    with pytest.raises(SpecError):
        ControlSet(1.0, -1.0)
    with pytest.raises(SpecError):
        ControlSet(-math.inf, 1.0)
    with pytest.raises(SpecError):
        ControlSet(0.0, 1.0, grid_points=1)


# --- time grid --------------------------------------------------------------------------------

def test_time_grid_lookup():
    g = TimeGrid(1.0, 50)
    assert g.dt == pytest.approx(0.02)
    assert g.index_of(0.5) == 25
    assert g.index_of(1.0) == 50
    with pytest.raises(GridError):
        g.index_of(0.013)
    with pytest.raises(GridError):
        g.index_of(1.5)


# --- empirical measures and Wasserstein ---------------------------------------------------------

def test_empirical_measure_from_pairs():
    law = empirical_measure([(1.0, 2.0), (3.0, -2.0)])
    assert law.mean_state() == pytest.approx(2.0)
    assert law.mean_control() == pytest.approx(0.0)
    assert np.allclose(law.weights, 0.5)
    with pytest.raises(EmptyEnsembleError):
        empirical_measure([])


def test_wasserstein_oracles():
    assert wasserstein_1d([0.0], [1.0]) == pytest.approx(1.0)
    # Dirac versus two equal atoms at 0 and 2: W2 = 1, W1 = 1
    assert wasserstein_1d([1.0], [0.0, 2.0], p=2) == pytest.approx(1.0)
    assert wasserstein_1d([1.0], [0.0, 2.0], p=1) == pytest.approx(1.0)
    # shift invariance: translating one sample by c gives W = |c|
    x = np.linspace(-1, 1, 11)
    assert wasserstein_1d(x, x + 0.3) == pytest.approx(0.3)
    with pytest.raises(EmptyEnsembleError):
        wasserstein_1d([], [1.0])


@given(samples, samples)
@settings(max_examples=80)
def test_wasserstein_w1_matches_scipy(mu, nu):
    assert wasserstein_1d(mu, nu, p=1) == pytest.approx(scipy.stats.wasserstein_distance(mu, nu), rel=1e-9, abs=1e-9)


@given(samples, samples)
def test_wasserstein_symmetric_nonnegative(mu, nu):
    d = wasserstein_1d(mu, nu)
    assert d >= 0
    assert d == pytest.approx(wasserstein_1d(nu, mu), rel=1e-12, abs=1e-12)


@given(samples, samples, samples)
@settings(max_examples=150)
def test_wasserstein_triangle(a, b, c):
    for p in (1, 2):
        assert wasserstein_1d(a, c, p) <= wasserstein_1d(a, b, p) + wasserstein_1d(b, c, p) + 1e-9


@given(samples)
def test_wasserstein_identity_and_permutation(mu):
    assert wasserstein_1d(mu, mu) == 0.0
    assert wasserstein_1d(mu, list(reversed(mu))) == 0.0


def test_wasserstein_grid_variant_close_to_exact(rng):
    x, y = rng.normal(size=300), rng.normal(0.5, 1.2, size=170)
    assert wasserstein_1d(x, y, grid_points=1024) == pytest.approx(wasserstein_1d(x, y), rel=0.02)


# --- specifications -----------------------------------------------------------------------

def test_game_spec_validation():
    p = LQParams()
    spec = ex1_spec(p)
    assert spec.num_players == 2
    with pytest.raises(SpecError):
        GameSpec(num_players=0, drift=lambda *a: 0, running=lambda *a: 0, terminal=lambda *a: 0,
                 aggregator=quadratic_aggregator(), phi1=lambda x: x, phi2=lambda law: 0.0,
                 control_set=ControlSet(-1, 1))
    with pytest.raises(SpecError):
        GameSpec(num_players=3, drift=[lambda *a: 0] * 2, running=lambda *a: 0, terminal=lambda *a: 0,
                 aggregator=quadratic_aggregator(), phi1=lambda x: x, phi2=lambda law: 0.0,
                 control_set=ControlSet(-1, 1))


def test_quadratic_aggregator_derivatives():
    agg = quadratic_aggregator(mm=0.7, mn=0.2, nn=-0.4, m=1.0, n=-2.0)
    m, n, h = 0.3, -0.8, 1e-5
    assert agg.d_m(m, n) == pytest.approx((agg.value(m + h, n) - agg.value(m - h, n)) / (2 * h), rel=1e-7)
    assert agg.d_n(m, n) == pytest.approx((agg.value(m, n + h) - agg.value(m, n - h)) / (2 * h), rel=1e-7)
    assert float(agg.d_mm(m, n)) == pytest.approx(0.7)
    assert float(agg.d_nn(m, n)) == pytest.approx(-0.4)


# --- Hamiltonian, argmax and fixed points ---------------------------------------------------------

def _state_ex(z_own, batch=4, n=2, zm=1.0):
    x = np.zeros((batch, n))
    z = np.zeros((batch, n, n))
    zmat = np.zeros((batch, n, n))
    for i in range(n):
        z[:, i, i] = z_own
        zmat[:, i, i] = zm
    return HamiltonianState(0.0, x, z, zmat, np.zeros((batch, n)), np.zeros((batch, n)), np.zeros(batch))


def test_ex1_hamiltonian_closed_form():
    # own Hamiltonian a_other^2 - a^2 + z a - penalty; maximizer z / 2
    p = LQParams(gamma=0.5)
    spec = ex1_spec(p)
    state = _state_ex(1.0)
    ctrl = np.full((4, 2), 0.3)
    inp = state.input_for(0, ctrl)
    h = hamiltonian_i(spec, inp)
    assert np.allclose(h, 0.3**2 - 0.3**2 + 0.3 - 0.5 * 0.5 * 1.0)
    a = argmax_control(spec, inp)
    assert np.allclose(a, 0.5, atol=1e-12)


def test_fixed_point_ex2_matches_closed_form():
    # best responses a_i = -z - a_j intersect at -z/2 per player... with z = sigma the solution is -sigma
    p = LQParams(gamma=1.0)
    spec = ex2_spec(p)
    state = _state_ex(1.0)
    ctrl, ok = hamiltonian_fixed_point(spec, state)
    assert ok.all()
    assert np.allclose(ctrl, -1.0, atol=1e-8)
    assert fixed_point_residual(spec, state, ctrl) <= 1e-12


def test_fixed_point_ex1_and_residual_positive_off_equilibrium():
    spec = ex1_spec(LQParams(gamma=0.5))
    state = _state_ex(1.0)
    ctrl, ok = hamiltonian_fixed_point(spec, state)
    assert ok.all() and np.allclose(ctrl, 0.5, atol=1e-8)
    assert fixed_point_residual(spec, state, np.zeros((4, 2))) > 0.1


def test_closed_form_selector_agrees_with_numeric():
    p = LQParams(kappa1=0.5, kappa2=0.5, N=3)
    state = _state_ex(0.4, batch=3, n=3)
    a_sel, _ = hamiltonian_fixed_point(rep_spec(p, 3, closed_form_selector=True), state)
    a_num, ok = hamiltonian_fixed_point(rep_spec(p, 3, closed_form_selector=False), state)
    assert ok.all()
    assert np.allclose(a_sel, 0.4 + 0.5 / 3)
    assert np.allclose(a_num, a_sel, atol=1e-6)


def test_argmax_ties_go_to_smallest_control():
    cs = ControlSet(-1.0, 1.0, grid_points=5)
    a, v = grid_maximize(lambda rows, cand: -(cand**2 - 0.25) ** 2, 2, cs)
    assert np.allclose(a, -0.5)
    flat, _ = grid_maximize(lambda rows, cand: np.zeros_like(cand), 1, cs)
    assert flat[0] == -1.0


@given(st.floats(-3, 3))
def test_grid_maximize_refined_concave(c):
    cs = ControlSet(-2.0, 2.0, grid_points=41, refine=True)
    a, _ = grid_maximize(lambda rows, cand: -(cand - c) ** 2, 1, cs)
    assert a[0] == pytest.approx(np.clip(c, -2, 2), abs=1e-9)


def test_hamiltonian_input_shape_errors():
    with pytest.raises(SpecError):
        HamiltonianInput(0.0, np.zeros((3, 2)), 0, np.zeros((2, 2)), np.zeros((3, 2)), np.zeros((3, 2)),
                         np.zeros(3), np.zeros(3), np.zeros(3), np.zeros((3, 2)))


def test_empirical_measure_controls_missing():
    with pytest.raises(SpecError):
        EmpiricalMeasure(np.zeros(3)).mean_control()
