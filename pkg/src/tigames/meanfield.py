"""Mean-field equilibrium by fixed-point iteration on a particle law flow.

The representative agent faces a flow of (state, control) clouds. Each outer
iteration simulates the agent under the flow and the current control field,
solves its single BSDE pair backward, updates the control by maximizing the
reduced Hamiltonian and rebuilds the flow from a fresh simulation under the
new control.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import List, Optional

import numpy as np

from .core import EmpiricalMeasure, GameSpec, HamiltonianInput, TimeGrid, grid_maximize, wasserstein_1d
from .errors import EmptyEnsembleError, GridError, SimulationError, SpecError
from .regression import Projector, RegressionBasis
from .rng import RngSpec
from .sde import EXPLOSION_LIMIT, draw_noise


@dataclass(frozen=True)
class OuterConfig:
    max_outer: int = 10
    tol_scale: float = 5e-3
    damping: float = 1.0

    def __post_init__(self):
        if self.max_outer < 1:
            raise SpecError("max_outer must be >= 1")
        if not 0.0 < self.damping <= 1.0:
            raise SpecError("damping must lie in (0, 1]")


@dataclass
class LawFlow:
    """Particle clouds per grid step; ``states`` is (P, n+1), ``controls`` is (P, n)."""

    grid: TimeGrid
    states: np.ndarray
    controls: np.ndarray
    iteration: int = 0
    distance: float = float("nan")

    def law(self, k: int) -> EmpiricalMeasure:
        ctrl = self.controls[:, min(k, self.grid.steps - 1)]
        return EmpiricalMeasure(self.states[None, :, k], ctrl[None, :])

    def state_law(self, k: int) -> EmpiricalMeasure:
        return EmpiricalMeasure(self.states[None, :, k])


def lawflow_distance(xi: LawFlow, other: LawFlow) -> float:
    """Largest over grid steps of W2 between state clouds plus W2 between control clouds."""
    if xi.states.shape != other.states.shape or xi.grid != other.grid:
        raise GridError("law flows live on different grids or cloud sizes")
    n = xi.grid.steps
    best = 0.0
    for k in range(n + 1):
        d = wasserstein_1d(xi.states[:, k], other.states[:, k], 2)
        if k < n:
            d += wasserstein_1d(xi.controls[:, k], other.controls[:, k], 2)
        best = max(best, d)
    return best


def n_star(spec: GameSpec, cloud) -> float:
    """Second terminal functional evaluated at the empirical terminal law."""
    cloud = np.asarray(cloud, dtype=float).ravel()
    if cloud.size == 0:
        raise EmptyEnsembleError("empty ensemble")
    return float(np.asarray(spec.phi2(EmpiricalMeasure(cloud[None, :]))).ravel()[0])


class ScalarField:
    """Control field ``a_k(x) = P_A(basis(x) . coef[k])`` for the representative agent."""

    def __init__(self, basis: RegressionBasis, coef: np.ndarray, control_set):
        self.basis = basis
        self.coef = np.asarray(coef, dtype=float)
        self.cs = control_set

    def __call__(self, k: int, x: np.ndarray) -> np.ndarray:
        return self.cs.project(self.basis.features(x) @ self.coef[k])


def _simulate(spec, grid, field, flow: Optional[LawFlow], noise, x0):
    """Representative paths; ``flow=None`` lets the particles interact with their own cloud."""
    p, n = noise.shape[0], grid.steps
    x = np.empty((p, n + 1))
    a = np.empty((p, n))
    x[:, 0] = x0
    dt = grid.dt
    for k in range(n):
        a[:, k] = field(k, x[:, k])
        law = flow.law(k) if flow is not None else EmpiricalMeasure(x[None, :, k], a[None, :, k])
        b = spec.drift_of(0)(grid.time(k), x[:, k], law, a[:, k])
        x[:, k + 1] = x[:, k] + spec.sigma * b * dt + spec.sigma * noise[:, k]
        if not np.all(np.isfinite(x[:, k + 1])) or np.max(np.abs(x[:, k + 1])) > EXPLOSION_LIMIT:
            raise SimulationError(f"particle state exploded at step {k + 1}")
    return x, a


def _maximize_reduced(spec, t, x, law, z):
    """Maximizer of ``f + z b`` over the control set, per particle."""
    if spec.lambda_max is not None:
        inp = HamiltonianInput(t, x[:, None], 0, z[:, None], 0.0, 0.0, 0.0, 0.0, 0.0, 0.0)
        return spec.control_set.project(np.broadcast_to(spec.lambda_max(inp, spec.aleph), x.shape))
    f = spec.running_of(0)
    b = spec.drift_of(0)

    def objective(rows, cand):
        xr = x[rows][:, None]
        return f(t, xr, law, cand) + z[rows][:, None] * b(t, xr, law, cand)

    a, _ = grid_maximize(objective, x.size, spec.control_set)
    return a


@dataclass
class OuterReport:
    iterations: int
    converged: bool
    tolerance: float
    distance_trace: List[float]
    alpha_change_trace: List[float]
    y0_trace: List[float]


@dataclass
class MeanFieldSolution:
    grid: TimeGrid
    states: np.ndarray
    Y: np.ndarray
    Z: np.ndarray
    Mstar: np.ndarray
    Zm: np.ndarray
    Zn: np.ndarray
    nstar: float
    control: ScalarField
    flow: LawFlow
    report: OuterReport

    @property
    def converged(self) -> bool:
        return self.report.converged


def _backward(spec, grid, basis, x, a, flow, fp_rows):
    """Single-agent backward sweep; returns values and new control coefficients."""
    p, n = a.shape
    dt = grid.dt
    agg = spec.aggregator
    c1 = spec.bound_phi1
    nstar = n_star(spec, flow.states[:, n])
    Y = np.empty((p, n + 1))
    Ms = np.empty((p, n + 1))
    Z = np.empty((p, n))
    Zm = np.empty((p, n))
    x_t = x[:, n]
    Ms[:, n] = spec.phi1(x_t)
    Y[:, n] = spec.terminal_of(0)(x_t, flow.state_law(n)) + agg.value(Ms[:, n], nstar)
    coef = np.empty((n, basis.size))
    dw = (x[:, 1:] - x[:, :-1]) / spec.sigma if spec.sigma > 0 else np.zeros((p, n))
    for k in range(n - 1, -1, -1):
        t = grid.time(k)
        law = flow.law(k)
        drift = spec.drift_of(0)(t, x[:, k], law, a[:, k])
        w = dw[:, k] - drift * dt  # increment of the tilted Brownian motion
        proj = Projector(basis.features(x[:, k]), basis.ridge)
        fitted = proj.fit(np.column_stack([Y[:, k + 1], Ms[:, k + 1]]))
        resid = np.column_stack([Y[:, k + 1], Ms[:, k + 1]]) - fitted
        zz = proj.fit(resid * w[:, None] / dt)
        Z[:, k], Zm[:, k] = zz[:, 0], zz[:, 1]
        Ms[:, k] = np.clip(proj.fit(Ms[:, k + 1] - Zm[:, k] * w), -c1, c1)
        driver = (spec.running_of(0)(t, x[:, k], law, a[:, k])
                  - 0.5 * agg.d_mm(Ms[:, k], nstar) * Zm[:, k] ** 2)
        Y[:, k] = proj.fit(Y[:, k + 1] - Z[:, k] * w) + dt * driver
        rows = fp_rows
        alpha = _maximize_reduced(spec, t, x[rows, k], law, Z[rows, k])
        coef[k] = Projector(basis.features(x[rows, k]), basis.ridge).raw_coefficients(alpha)
    for arr, name in ((Y, "Y"), (Z, "Z"), (Ms, "Mstar"), (Zm, "Zm")):
        if not np.all(np.isfinite(arr)):
            raise SimulationError(f"non-finite regression output for {name}")
    return Y, Z, Ms, Zm, nstar, coef


def _interpolate(new: LawFlow, old: LawFlow, theta: float) -> LawFlow:
    """Quantile interpolation of each marginal cloud (a Wasserstein geodesic step)."""
    s = theta * np.sort(new.states, axis=0) + (1.0 - theta) * np.sort(old.states, axis=0)
    c = theta * np.sort(new.controls, axis=0) + (1.0 - theta) * np.sort(old.controls, axis=0)
    return LawFlow(new.grid, s, c, new.iteration)


def solve_meanfield(spec: GameSpec, grid: TimeGrid, particles: int, basis: Optional[RegressionBasis] = None,
                    outer: Optional[OuterConfig] = None, rng: Optional[RngSpec] = None,
                    initial_flow: Optional[LawFlow] = None, fixed_point_paths: int = 4096) -> MeanFieldSolution:
    """Iterate the law flow to a mean-field equilibrium.

    Convergence is declared when consecutive flows are closer than
    ``outer.tol_scale`` times the standard deviation of the terminal state
    cloud. Without ``initial_flow`` the first flow comes from particles that
    play the projected zero control and interact with their own cloud.
    """
    if particles < 1000:
        raise SpecError("need at least 1000 particles")
    basis = basis or RegressionBasis(degree=2, use_mean=False)
    if basis.use_mean:
        basis = RegressionBasis(basis.degree, basis.ridge, use_mean=False)
    outer = outer or OuterConfig()
    rng = rng or RngSpec(0)
    noise_all = draw_noise(rng, particles, 1, grid.steps)
    x0 = spec.x0 + spec.x0_std * noise_all[:, 0, 0]
    noise = noise_all[:, 1:, 0] * np.sqrt(grid.dt)
    fp_rows = np.arange(min(max(fixed_point_paths, 4 * basis.size), particles))

    field = ScalarField(basis, np.zeros((grid.steps, basis.size)), spec.control_set)
    field.coef[:, 0] = float(spec.control_set.project(0.0))
    if initial_flow is None:
        xs, acts = _simulate(spec, grid, field, None, noise, x0)
        flow = LawFlow(grid, xs, acts, 0)
    else:
        flow = initial_flow

    dist_trace, change_trace, y0_trace = [], [], []
    converged = False
    tol = float("nan")
    for it in range(1, outer.max_outer + 1):
        x, a = _simulate(spec, grid, field, flow, noise, x0)
        Y, Z, Ms, Zm, nstar, coef = _backward(spec, grid, basis, x, a, flow, fp_rows)
        y0_trace.append(float(Y[:, 0].mean()))
        new_field = ScalarField(basis, coef, spec.control_set)
        change_trace.append(float(max(np.max(np.abs(new_field(k, x[:, k]) - a[:, k])) for k in range(grid.steps))))
        xs, acts = _simulate(spec, grid, new_field, flow, noise, x0)
        new_flow = LawFlow(grid, xs, acts, it)
        dist = lawflow_distance(new_flow, flow)
        new_flow.distance = dist
        dist_trace.append(dist)
        tol = outer.tol_scale * float(np.std(xs[:, -1]))
        if outer.damping < 1.0:
            new_flow = _interpolate(new_flow, flow, outer.damping)
            new_flow.distance = dist
        field, flow = new_field, new_flow
        if dist < tol:
            converged = True
            break

    # final values under the returned field and flow
    x, a = _simulate(spec, grid, field, flow, noise, x0)
    Y, Z, Ms, Zm, nstar, _ = _backward(spec, grid, basis, x, a, flow, fp_rows[:basis.size * 4])
    report = OuterReport(len(dist_trace), converged, tol, dist_trace, change_trace, y0_trace)
    return MeanFieldSolution(grid, x, Y, Z, Ms, Zm, np.zeros_like(Z), nstar, field, flow, report)


def meanfield_value_process(sol: MeanFieldSolution, u: float) -> np.ndarray:
    """Per-particle value at grid time ``u``."""
    return sol.Y[:, sol.grid.index_of(u)]


def resimulate_flow(spec: GameSpec, sol: MeanFieldSolution, rng: RngSpec, particles: Optional[int] = None) -> LawFlow:
    """Flow produced by the returned control against the returned flow, with fresh noise."""
    p = particles or sol.flow.states.shape[0]
    noise_all = draw_noise(rng, p, 1, sol.grid.steps)
    x0 = spec.x0 + spec.x0_std * noise_all[:, 0, 0]
    xs, acts = _simulate(spec, sol.grid, sol.control, sol.flow, noise_all[:, 1:, 0] * np.sqrt(sol.grid.dt), x0)
    return LawFlow(sol.grid, xs, acts)


def write_outer_csv(sol: MeanFieldSolution, path) -> None:
    """One row per outer iteration: iter, sup_t_W2, Y0_mean, alpha_sup_change."""
    r = sol.report
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iter", "sup_t_W2", "Y0_mean", "alpha_sup_change"])
        for j in range(r.iterations):
            w.writerow([j + 1, repr(r.distance_trace[j]), repr(r.y0_trace[j]), repr(r.alpha_change_trace[j])])
