"""Regression Monte Carlo solver for the coupled N-player BSDE system.

Each outer (Picard) iteration simulates all players under the current
feedback control field, sweeps the BSDE system backward with per-step
polynomial regressions, and recomputes the Hamiltonian fixed point on every
path. The new control values are projected on the same polynomial basis so
the control field stays a Markov function of the current states.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .core import (ControlSet, EmpiricalMeasure, GameSpec, HamiltonianState, TimeGrid, fixed_point_residuals,
                   hamiltonian_fixed_point)
from .errors import GridError, SimulationError, SpecError
from .regression import Projector, RegressionBasis
from .rng import RngSpec
from .sde import (PathEnsemble, draw_noise, evaluate_drift, evaluate_running, evaluate_terminal,
                  simulate_paths)


@dataclass(frozen=True)
class PicardConfig:
    max_iters: int = 30
    damping: float = 0.5
    tol: float = 1e-3

    def __post_init__(self):
        if not 0.0 < self.damping <= 1.0:
            raise SpecError("damping must lie in (0, 1]")
        if self.max_iters < 1:
            raise SpecError("max_iters must be >= 1")
        if not self.tol > 0:
            raise SpecError("tol must be positive")


class FeedbackField:
    """Control field ``a^i_k = P_A(basis(x_i, mean x) . coef[k, i])``."""

    def __init__(self, basis: RegressionBasis, coef: np.ndarray, control_set: ControlSet):
        self.basis = basis
        self.coef = np.asarray(coef, dtype=float)
        self.cs = control_set

    @classmethod
    def constant(cls, basis, spec, steps, value=0.0):
        coef = np.zeros((steps, spec.num_players, basis.size))
        coef[:, :, 0] = value
        return cls(basis, coef, spec.control_set)

    def raw(self, k: int, states: np.ndarray) -> np.ndarray:
        feats = self.basis.features(states, states.mean(axis=1, keepdims=True))
        return np.einsum("mnp,np->mn", feats, self.coef[k])

    def __call__(self, k: int, states: np.ndarray) -> np.ndarray:
        return self.cs.project(self.raw(k, states))

    def blend(self, other: "FeedbackField", theta: float) -> "FeedbackField":
        return FeedbackField(self.basis, theta * other.coef + (1.0 - theta) * self.coef, self.cs)


@dataclass
class StepValues:
    """Pathwise BSDE quantities at one grid step.

    ``Y`` and ``Mstar`` are (M, N); ``Nstar`` is (M,); ``Z`` and ``Zm`` are
    (M, N, N) indexed ``[path, player, brownian]``; ``Zn`` is (M, N).
    """

    Y: np.ndarray
    Mstar: np.ndarray
    Nstar: np.ndarray
    Z: Optional[np.ndarray] = None
    Zm: Optional[np.ndarray] = None
    Zn: Optional[np.ndarray] = None


def terminal_values(spec: GameSpec, states_T: np.ndarray) -> StepValues:
    """``Y = g + G(phi1, phi2)``, ``M* = phi1``, ``N* = phi2`` on terminal states (M, N)."""
    g = evaluate_terminal(spec, states_T)
    m = np.asarray(spec.phi1(states_T), dtype=float) * np.ones_like(states_T)
    law = EmpiricalMeasure(states_T)
    n = np.broadcast_to(np.asarray(spec.phi2(law), dtype=float), states_T.shape[:1]).astype(float)
    y = g + spec.aggregator.value(m, n[:, None])
    return StepValues(np.array(y, dtype=float), m, n)


def _player_projectors(basis, xk):
    mean = xk.mean(axis=1)
    return [Projector(basis.features(xk[:, i], mean), basis.ridge) for i in range(xk.shape[1])]


def backward_step(k: int, spec: GameSpec, ens: PathEnsemble, nxt: StepValues, basis: RegressionBasis,
                  projectors=None) -> StepValues:
    """One backward step of the BSDE system from step ``k+1`` to ``k``.

    Integrands are least-squares estimates of ``E[(V_{k+1} - E[V_{k+1}|F_k]) dW | F_k] / dt``.
    The value is the projection of ``V_{k+1} - Z dW`` plus the driver times
    ``dt``; subtracting ``Z dW`` leaves the conditional mean unchanged and
    removes most of the sampling noise.
    """
    grid = ens.grid
    dt = grid.dt
    xk = ens.states[:, :, k]
    dw = ens.increments[:, :, k]
    m_paths, n_pl = xk.shape
    if projectors is None:
        projectors = _player_projectors(basis, xk)
    Y = np.empty((m_paths, n_pl))
    Ms = np.empty((m_paths, n_pl))
    Z = np.empty((m_paths, n_pl, n_pl))
    Zm = np.empty((m_paths, n_pl, n_pl))
    c1, c2 = spec.bound_phi1, spec.bound_phi2

    shared = Projector(RegressionBasis(basis.degree, basis.ridge, use_mean=False).features(xk.mean(axis=1)), basis.ridge)
    n_hat = shared.fit(nxt.Nstar)
    Zn = shared.fit((nxt.Nstar - n_hat)[:, None] * dw / dt)
    Ns = np.clip(shared.fit(nxt.Nstar - np.sum(Zn * dw, axis=1)), -c2, c2)

    for i, proj in enumerate(projectors):
        fitted = proj.fit(np.column_stack([nxt.Y[:, i], nxt.Mstar[:, i]]))
        resid = np.column_stack([nxt.Y[:, i] - fitted[:, 0], nxt.Mstar[:, i] - fitted[:, 1]])
        zz = proj.fit(np.concatenate([resid[:, :1] * dw, resid[:, 1:] * dw], axis=1) / dt)
        Z[:, i, :] = zz[:, :n_pl]
        Zm[:, i, :] = zz[:, n_pl:]
        Ms[:, i] = np.clip(proj.fit(nxt.Mstar[:, i] - np.sum(Zm[:, i, :] * dw, axis=1)), -c1, c1)

    running = evaluate_running(spec, grid.time(k), xk, ens.controls[:, :, k])
    agg = spec.aggregator
    for i, proj in enumerate(projectors):
        mi, ni = Ms[:, i], Ns
        driver = (running[:, i]
                  - agg.d_mn(mi, ni) * np.sum(Zm[:, i, :] * Zn, axis=1)
                  - 0.5 * agg.d_mm(mi, ni) * np.sum(Zm[:, i, :] ** 2, axis=1)
                  - 0.5 * agg.d_nn(mi, ni) * np.sum(Zn**2, axis=1))
        Y[:, i] = proj.fit(nxt.Y[:, i] - np.sum(Z[:, i, :] * dw, axis=1)) + dt * driver
    out = StepValues(Y, Ms, Ns, Z, Zm, Zn)
    for name in ("Y", "Mstar", "Nstar", "Z", "Zm", "Zn"):
        if not np.all(np.isfinite(getattr(out, name))):
            raise SimulationError(f"non-finite regression output for {name} at step {k}")
    return out


@dataclass
class Sweep:
    Y: np.ndarray
    Mstar: np.ndarray
    Nstar: np.ndarray
    Z: np.ndarray
    Zm: np.ndarray
    Zn: np.ndarray


def backward_sweep(spec: GameSpec, ens: PathEnsemble, basis: RegressionBasis, update=None):
    """Full backward sweep; ``update(k, step_values, projectors)`` is called at every step."""
    n = ens.grid.steps
    m_paths, n_pl = ens.num_paths, ens.num_players
    Y = np.empty((m_paths, n_pl, n + 1))
    Ms = np.empty((m_paths, n_pl, n + 1))
    Ns = np.empty((m_paths, n + 1))
    Z = np.empty((m_paths, n_pl, n_pl, n))
    Zm = np.empty((m_paths, n_pl, n_pl, n))
    Zn = np.empty((m_paths, n_pl, n))
    cur = terminal_values(spec, ens.states[:, :, n])
    Y[:, :, n], Ms[:, :, n], Ns[:, n] = cur.Y, cur.Mstar, cur.Nstar
    for k in range(n - 1, -1, -1):
        projectors = _player_projectors(basis, ens.states[:, :, k])
        cur = backward_step(k, spec, ens, cur, basis, projectors)
        Y[:, :, k], Ms[:, :, k], Ns[:, k] = cur.Y, cur.Mstar, cur.Nstar
        Z[..., k], Zm[..., k], Zn[..., k] = cur.Z, cur.Zm, cur.Zn
        if update is not None:
            update(k, cur, projectors)
    return Sweep(Y, Ms, Ns, Z, Zm, Zn)


@dataclass
class PicardReport:
    iterations: int
    converged: bool
    change_trace: List[float]
    residual_trace: np.ndarray
    uncertified_fraction: float = 0.0


@dataclass
class EquilibriumSolution:
    spec: GameSpec
    grid: TimeGrid
    basis: RegressionBasis
    ensemble: PathEnsemble
    Y: np.ndarray
    Z: np.ndarray
    Mstar: np.ndarray
    Nstar: np.ndarray
    Zm: np.ndarray
    Zn: np.ndarray
    control: FeedbackField
    report: PicardReport

    @property
    def controls(self) -> np.ndarray:
        return self.ensemble.controls

    @property
    def converged(self) -> bool:
        return self.report.converged


def _fixed_point_update(spec, grid, ens, basis, coef_out, fp_rows, residual_rows, residuals, uncertified):
    def update(k, cur, projectors):
        xs = ens.states[fp_rows, :, k]
        state = HamiltonianState(grid.time(k), xs, cur.Z[fp_rows], cur.Zm[fp_rows], cur.Zn[fp_rows],
                                 cur.Mstar[fp_rows], cur.Nstar[fp_rows])
        alpha, ok = hamiltonian_fixed_point(spec, state, init=ens.controls[fp_rows, :, k])
        uncertified[k] = 1.0 - ok.mean()
        mean = xs.mean(axis=1)
        for i in range(xs.shape[1]):
            coef_out[k, i] = Projector(basis.features(xs[:, i], mean), basis.ridge).raw_coefficients(alpha[:, i])
        if residual_rows is not None:
            sub = state.subset(residual_rows)
            field_vals = FeedbackField(basis, coef_out, spec.control_set)(k, xs[residual_rows])
            residuals[k] = float(np.max(fixed_point_residuals(spec, sub, field_vals)))
    return update


def solve_nplayer(spec: GameSpec, grid: TimeGrid, num_paths: int, basis: Optional[RegressionBasis] = None,
                  picard: Optional[PicardConfig] = None, rng: Optional[RngSpec] = None,
                  residual_paths: int = 256, fixed_point_paths: int = 4096) -> EquilibriumSolution:
    """Picard iteration between backward sweeps and Hamiltonian fixed points.

    All iterations reuse the same Brownian draws. The loop stops when the
    largest change of the control over paths and grid times drops below
    ``picard.tol``; a last sweep is then run under the updated field, and its
    fixed-point residual (on ``residual_paths`` paths per step) is reported.
    The fixed point is solved on the first ``fixed_point_paths`` paths only;
    it is a deterministic function of the fitted integrands, so the control
    coefficients need far fewer points than the value regressions.
    Non-convergence is reported in ``solution.report``, not raised.
    """
    basis = basis or RegressionBasis()
    picard = picard or PicardConfig()
    rng = rng or RngSpec(0)
    if not spec.symmetric and spec.num_players > 2:
        raise SpecError("asymmetric games are supported for N = 2 only")
    n_pl = spec.num_players
    if num_paths < 2 * basis.size:
        raise SpecError("too few paths for the regression basis")
    noise = draw_noise(rng, num_paths, n_pl, grid.steps)
    field_cur = FeedbackField.constant(basis, spec, grid.steps, float(spec.control_set.project(0.0)))
    trace: List[float] = []
    converged = False
    iterations = 0
    fp_rows = np.arange(min(max(fixed_point_paths, 4 * basis.size), num_paths))
    residual_rows = np.arange(min(residual_paths, fp_rows.size))
    residuals = np.zeros(grid.steps)
    uncertified = np.zeros(grid.steps)
    final = False
    while True:
        ens = simulate_paths(spec, grid, field_cur, num_paths, rng, noise=noise)
        coef_new = np.empty_like(field_cur.coef)
        upd = _fixed_point_update(spec, grid, ens, basis, coef_new, fp_rows, residual_rows if final else None,
                                  residuals, uncertified)
        sweep = backward_sweep(spec, ens, basis, upd)
        if final:
            break
        iterations += 1
        new_field = FeedbackField(basis, coef_new, spec.control_set)
        change = 0.0
        for k in range(grid.steps):
            change = max(change, float(np.max(np.abs(new_field(k, ens.states[:, :, k]) - ens.controls[:, :, k]))))
        trace.append(change)
        if change < picard.tol:
            converged = True
            field_cur = new_field
            final = True
        elif iterations >= picard.max_iters:
            field_cur = field_cur.blend(new_field, picard.damping)
            final = True
        else:
            field_cur = field_cur.blend(new_field, picard.damping)
    report = PicardReport(iterations, converged, trace, residuals.copy(), float(uncertified.max()))
    return EquilibriumSolution(spec, grid, basis, ens, sweep.Y, sweep.Z, sweep.Mstar, sweep.Nstar,
                               sweep.Zm, sweep.Zn, field_cur, report)


def value_process(sol: EquilibriumSolution, u: float, player: Optional[int] = None) -> np.ndarray:
    """Pathwise value at grid time ``u``, (M, N) or (M,) for one player."""
    k = sol.grid.index_of(u)
    v = sol.Y[:, :, k]
    return v if player is None else v[:, player]


@dataclass
class DeviationResult:
    gap: float
    se: float
    threshold: float
    passed: bool


def _payoffs(spec, grid, states, controls, k0, groups, player):
    """Per-group payoff of ``player`` from step ``k0`` on; rows are grouped contiguously."""
    dt = grid.dt
    run = np.zeros(states.shape[0])
    for k in range(k0, grid.steps):
        run += evaluate_running(spec, grid.time(k), states[:, :, k], controls[:, :, k])[:, player] * dt
    x_t = states[:, :, -1]
    term = evaluate_terminal(spec, x_t)[:, player]
    phi1 = (np.asarray(spec.phi1(x_t), dtype=float) * np.ones_like(x_t))[:, player]
    phi2 = np.broadcast_to(np.asarray(spec.phi2(EmpiricalMeasure(x_t)), dtype=float), phi1.shape)
    size = states.shape[0] // groups
    shape = (groups, size)
    base = (run + term).reshape(shape).mean(axis=1)
    return base + spec.aggregator.value(phi1.reshape(shape).mean(axis=1), phi2.reshape(shape).mean(axis=1))


def epsilon_deviation_test(spec: GameSpec, sol: EquilibriumSolution, t: float, window: int, deviation,
                           num_test: int = 2048, player: int = 0, pivots: int = 16, epsilon: float = 0.05,
                           batches: int = 8, rng: Optional[RngSpec] = None) -> DeviationResult:
    """Payoff loss of a spike deviation ``deviation`` on ``[t, t + window dt]`` for one player.

    ``pivots`` solved paths provide the conditioning states at ``t``; each
    is continued with ``num_test`` fresh paths shared by the equilibrium and
    the deviating strategy. ``deviation=None`` replays the equilibrium. The
    standard error comes from batch means within each pivot.
    """
    grid = sol.grid
    k0 = grid.index_of(t)
    if k0 + window > grid.steps:
        raise GridError("deviation window extends beyond the horizon")
    rng = rng or RngSpec(sol.ensemble.seed, stream=7)
    n_pl = spec.num_players
    pivots = min(pivots, sol.ensemble.num_paths)
    num_test -= num_test % batches
    total = pivots * num_test
    fresh = rng.normals(total, (grid.steps - k0, n_pl)) * np.sqrt(grid.dt)
    start = np.repeat(sol.ensemble.states[:pivots, :, k0], num_test, axis=0)

    def run(dev):
        states = np.empty((total, n_pl, grid.steps + 1))
        states[:, :, k0] = start
        controls = np.zeros((total, n_pl, grid.steps))
        for k in range(k0, grid.steps):
            xk = states[:, :, k]
            ak = sol.control(k, xk)
            if dev is not None and k < k0 + window:
                ak[:, player] = spec.control_set.project(dev)
            controls[:, :, k] = ak
            b = evaluate_drift(spec, grid.time(k), xk, ak)
            states[:, :, k + 1] = xk + spec.sigma * b * grid.dt + spec.sigma * fresh[:, k - k0, :]
        return states, controls

    eq_states, eq_controls = run(None)
    if deviation is None:
        dev_states, dev_controls = eq_states, eq_controls
    else:
        dev_states, dev_controls = run(float(deviation))
    groups = pivots * batches
    gaps = (_payoffs(spec, grid, eq_states, eq_controls, k0, groups, player)
            - _payoffs(spec, grid, dev_states, dev_controls, k0, groups, player))
    full = (_payoffs(spec, grid, eq_states, eq_controls, k0, pivots, player)
            - _payoffs(spec, grid, dev_states, dev_controls, k0, pivots, player))
    gap = float(full.mean())
    se = float(gaps.std(ddof=1) / np.sqrt(groups)) if groups > 1 else 0.0
    threshold = -(epsilon * window * grid.dt + 3.0 * se)
    return DeviationResult(gap, se, threshold, gap >= threshold)


@dataclass
class Check:
    name: str
    value: float
    bound: float
    passed: bool


def appendix_diagnostics(sol: EquilibriumSolution) -> List[Check]:
    """Moment bounds on the auxiliary martingales and their integrands."""
    spec = sol.spec
    c1, c2 = spec.bound_phi1, spec.bound_phi2
    checks = []
    sup_m = float(np.max(np.abs(sol.Mstar)))
    sup_n = float(np.max(np.abs(sol.Nstar)))
    checks.append(Check("sup_abs_mstar", sup_m, c1, sup_m <= c1))
    checks.append(Check("sup_abs_nstar", sup_n, c2, sup_n <= c2))
    dt = sol.grid.dt
    for i in range(spec.num_players):
        energy = np.sum(sol.Zm[:, i, :, :] ** 2, axis=(1, 2)) * dt
        mean = float(energy.mean())
        se = float(energy.std(ddof=1) / np.sqrt(energy.size))
        checks.append(Check(f"zm_energy_player{i}", mean, c1**2 + 3.0 * se, mean <= c1**2 + 3.0 * se))
    return checks


def write_step_csv(sol: EquilibriumSolution, path) -> None:
    """Per-step summary: t, player, mean_Y, mean_alpha, fixed_point_residual, mstar_bound_slack."""
    grid = sol.grid
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "player", "mean_Y", "mean_alpha", "fixed_point_residual", "mstar_bound_slack"])
        for k in range(grid.steps + 1):
            for i in range(sol.spec.num_players):
                alpha = sol.controls[:, i, min(k, grid.steps - 1)].mean()
                res = sol.report.residual_trace[min(k, grid.steps - 1)]
                slack = sol.spec.bound_phi1 - np.max(np.abs(sol.Mstar[:, i, k]))
                w.writerow([repr(float(grid.time(k))), i, repr(float(sol.Y[:, i, k].mean())),
                            repr(float(alpha)), repr(float(res)), repr(float(slack))])
