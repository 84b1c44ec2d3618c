"""Two-player zero-sum games: Isaacs verification on control grids and the single BSDE pair solve.

One player picks ``a`` and minimizes the reward ``J``; the other picks
``a_max`` and maximizes it. ``J`` combines a running reward ``f``, a terminal
reward ``g`` and a nonlinear function ``G`` of the expected terminal
functional ``phi``. Costs may be given in additive form, one part per
player, plus optional joint terms. The additive part is evaluated as a
single outer sum so that grid inf-sup and sup-inf agree bit for bit.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .core import ControlSet, TimeGrid
from .errors import IsaacsViolation, SimulationError, SpecError
from .regression import Projector, RegressionBasis
from .rng import RngSpec
from .sde import EXPLOSION_LIMIT, draw_noise


def _zero(t, x, a):
    return np.zeros(np.broadcast_shapes(np.shape(x), np.shape(a)))


@dataclass
class ZeroSumSpec:
    """Coefficients of a zero-sum game with scalar state.

    ``running_min``/``drift_min`` take ``(t, x, a)`` for the minimizer's
    control, ``running_max``/``drift_max`` take ``(t, x, a_max)``. The joint
    terms ``running_joint`` and ``drift_joint`` take ``(t, x, a, a_max)``.
    ``G`` comes with its second derivative ``G_second``.
    """

    sigma: float
    control_set: ControlSet
    terminal: Callable
    G: Callable
    G_second: Callable
    phi: Callable
    running_min: Callable = _zero
    running_max: Callable = _zero
    drift_min: Callable = _zero
    drift_max: Callable = _zero
    running_joint: Optional[Callable] = None
    drift_joint: Optional[Callable] = None
    x0: float = 0.0
    bound_phi: float = 1.0
    bound_b: float = 1.0
    name: str = "zero-sum"

    def __post_init__(self):
        if self.sigma < 0:
            raise SpecError("sigma must be nonnegative")
        if self.bound_phi <= 0:
            raise SpecError("bound_phi must be positive")

    @property
    def separable(self) -> bool:
        return self.running_joint is None and self.drift_joint is None

    def drift(self, t, x, a, am):
        b = self.drift_min(t, x, a) + self.drift_max(t, x, am)
        if self.drift_joint is not None:
            b = b + self.drift_joint(t, x, a, am)
        return b

    def running(self, t, x, a, am):
        f = self.running_min(t, x, a) + self.running_max(t, x, am)
        if self.running_joint is not None:
            f = f + self.running_joint(t, x, a, am)
        return f


def lq_zero_sum(sigma: float = 1.0, kappa: float = 0.5, weight: float = 2.0, abar: float = 10.0,
                grid_points: int = 401, cap: float = 10.0) -> ZeroSumSpec:
    """Separable LQ instance: ``b = a + weight a_max``, ``f = (a^2 - a_max^2)/2``,
    ``g = x - kappa x^2/2``, ``G(m) = kappa m^2/2``, ``phi = x`` capped.

    The saddle point is ``a = -z``, ``a_max = weight z`` and the value is
    ``x + sigma^2 ((weight^2 - 1)/2 - kappa/2)(T - t)``.
    """
    return ZeroSumSpec(
        sigma=sigma, control_set=ControlSet(-abar, abar, grid_points),
        terminal=lambda x: x - 0.5 * kappa * x * x,
        G=lambda m: 0.5 * kappa * m * m, G_second=lambda m: kappa * np.ones_like(m),
        phi=lambda x: np.clip(x, -cap, cap),
        running_min=lambda t, x, a: 0.5 * a * a, running_max=lambda t, x, am: -0.5 * am * am,
        drift_min=lambda t, x, a: a + 0.0 * x, drift_max=lambda t, x, am: weight * am + 0.0 * x,
        bound_phi=cap, bound_b=(1.0 + abs(weight)) * abar, name="lq-zero-sum",
    )


def lq_zero_sum_value(sigma: float, kappa: float, weight: float, t, x, T: float = 1.0):
    return x + sigma**2 * (0.5 * (weight**2 - 1.0) - 0.5 * kappa) * (T - np.asarray(t, dtype=float))


@dataclass
class SaddleReport:
    """Isaacs gaps and saddle controls on sampled states; ``gap`` is (steps, rows)."""

    gap: np.ndarray
    tolerance: np.ndarray
    a_min: np.ndarray
    a_max: np.ndarray

    @property
    def max_gap(self) -> float:
        return float(np.max(self.gap)) if self.gap.size else 0.0

    @property
    def ok(self) -> bool:
        return bool(np.all(self.gap <= self.tolerance))


_CHUNK = 1 << 22


def _hamiltonian_matrix(spec, t, x, z, grid):
    """``f + z b`` on the control grid, shape (B, G, G) with the minimizer on axis 1."""
    xr = x[:, None]
    zr = z[:, None]
    u = spec.running_min(t, xr, grid[None, :]) + zr * spec.drift_min(t, xr, grid[None, :])
    v = spec.running_max(t, xr, grid[None, :]) + zr * spec.drift_max(t, xr, grid[None, :])
    h = u[:, :, None] + v[:, None, :]
    if not spec.separable:
        x3, z3 = x[:, None, None], z[:, None, None]
        a, am = grid[None, :, None], grid[None, None, :]
        if spec.running_joint is not None:
            h = h + spec.running_joint(t, x3, a, am)
        if spec.drift_joint is not None:
            h = h + z3 * spec.drift_joint(t, x3, a, am)
    return h


def _saddle_separable(spec, t, x, z, grid):
    xr, zr = x[:, None], z[:, None]
    u = spec.running_min(t, xr, grid[None, :]) + zr * spec.drift_min(t, xr, grid[None, :])
    v = spec.running_max(t, xr, grid[None, :]) + zr * spec.drift_max(t, xr, grid[None, :])
    i = np.argmin(u, axis=1)
    j = np.argmax(v, axis=1)
    rows = np.arange(x.size)
    return u[rows, i] + v[rows, j], grid[i], grid[j]


def saddle(spec: ZeroSumSpec, t: float, x, z):
    """Inf-sup value and the inf-sup control pair per state; ties go to the smallest control."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    z = np.broadcast_to(np.asarray(z, dtype=float), x.shape)
    grid = spec.control_set.grid
    if spec.separable:
        return _saddle_separable(spec, t, x, z, grid)
    g = grid.size
    val = np.empty(x.size)
    amin = np.empty(x.size)
    amax = np.empty(x.size)
    step = max(1, _CHUNK // (g * g))
    for s in range(0, x.size, step):
        sl = slice(s, s + step)
        h = _hamiltonian_matrix(spec, t, x[sl], z[sl], grid)
        upper = h.max(axis=2)
        i = np.argmin(upper, axis=1)
        rows = np.arange(i.size)
        val[sl] = upper[rows, i]
        amin[sl] = grid[i]
        amax[sl] = grid[np.argmax(h[rows, i, :], axis=1)]
    return val, amin, amax


def isaacs_gap(spec: ZeroSumSpec, t: float, x, z):
    """``(gap, a*, a_max*)`` per state; gap is inf-sup minus sup-inf over the control grid."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    z = np.broadcast_to(np.asarray(z, dtype=float), x.shape)
    h = _hamiltonian_matrix(spec, t, x, z, spec.control_set.grid)
    upper = h.max(axis=2)
    lower = h.min(axis=1)
    grid = spec.control_set.grid
    i = np.argmin(upper, axis=1)
    rows = np.arange(x.size)
    amax = grid[np.argmax(h[rows, i, :], axis=1)]
    return upper.min(axis=1) - lower.max(axis=1), grid[i], amax


def _tolerance_of(h):
    if h.shape[1] < 2:
        return np.zeros(h.shape[0])
    d1 = np.abs(np.diff(h, axis=1)).max(axis=(1, 2))
    d2 = np.abs(np.diff(h, axis=2)).max(axis=(1, 2))
    return 2.0 * np.maximum(d1, d2)


def isaacs_tolerance(spec: ZeroSumSpec, t: float, x, z):
    """Twice the largest change of ``f + z b`` between neighbouring grid controls."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    z = np.broadcast_to(np.asarray(z, dtype=float), x.shape)
    return _tolerance_of(_hamiltonian_matrix(spec, t, x, z, spec.control_set.grid))


def _gap_and_tolerance(spec, t, x, z):
    h = _hamiltonian_matrix(spec, t, x, z, spec.control_set.grid)
    return h.max(axis=2).min(axis=1) - h.min(axis=1).max(axis=1), _tolerance_of(h)


@dataclass
class ZeroSumSolution:
    spec: ZeroSumSpec
    grid: TimeGrid
    states: np.ndarray
    increments: np.ndarray
    Y: np.ndarray
    Z: np.ndarray
    Mstar: np.ndarray
    Zm: np.ndarray
    a_min: np.ndarray
    a_max: np.ndarray
    coef_min: np.ndarray
    coef_max: np.ndarray
    basis: RegressionBasis
    report: SaddleReport
    payoff_se: float = 0.0
    extras: dict = field(default_factory=dict)

    def feedback(self, which: str, k: int, x):
        coef = self.coef_min if which == "min" else self.coef_max
        return self.spec.control_set.project(self.basis.features(x) @ coef[k])


def _reference_paths(spec, grid, num_paths, rng):
    noise = draw_noise(rng, num_paths, 1, grid.steps)[:, 1:, 0] * np.sqrt(grid.dt)
    x = np.empty((num_paths, grid.steps + 1))
    x[:, 0] = spec.x0
    x[:, 1:] = spec.x0 + spec.sigma * np.cumsum(noise, axis=1)
    return x, noise


def _backward(spec, grid, x, dw, basis, driver_fn, check_rows):
    m, n = dw.shape
    dt = grid.dt
    Y = np.empty((m, n + 1))
    Ms = np.empty((m, n + 1))
    Z = np.empty((m, n))
    Zm = np.empty((m, n))
    amin = np.empty((m, n))
    amax = np.empty((m, n))
    cmin = np.empty((n, basis.size))
    cmax = np.empty((n, basis.size))
    gaps = np.zeros((n, check_rows.size))
    tols = np.zeros((n, check_rows.size))
    crude = np.zeros(m)
    Ms[:, n] = spec.phi(x[:, n])
    Y[:, n] = spec.terminal(x[:, n]) + spec.G(Ms[:, n])
    for k in range(n - 1, -1, -1):
        t = grid.time(k)
        feats = basis.features(x[:, k])
        proj = Projector(feats, basis.ridge)
        nxt = np.column_stack([Y[:, k + 1], Ms[:, k + 1]])
        zz = proj.fit((nxt - proj.fit(nxt)) * dw[:, k, None] / dt)
        Z[:, k], Zm[:, k] = zz[:, 0], zz[:, 1]
        if check_rows.size:
            gaps[k], tols[k] = _gap_and_tolerance(spec, t, x[check_rows, k], Z[check_rows, k])
            if np.any(gaps[k] > tols[k]):
                rep = SaddleReport(gaps[k:], tols[k:], amin[check_rows, k:], amax[check_rows, k:])
                raise IsaacsViolation(f"Isaacs gap {gaps[k].max():.3g} exceeds grid tolerance at t={t:.4g}", rep)
        hval, amin[:, k], amax[:, k] = driver_fn(t, x[:, k], Z[:, k])
        b = spec.drift(t, x[:, k], amin[:, k], amax[:, k])
        Ms[:, k] = np.clip(proj.fit(Ms[:, k + 1] - Zm[:, k] * dw[:, k]) + dt * Zm[:, k] * b,
                           -spec.bound_phi, spec.bound_phi)
        drv = hval - 0.5 * spec.G_second(Ms[:, k]) * Zm[:, k] ** 2
        Y[:, k] = proj.fit(Y[:, k + 1] - Z[:, k] * dw[:, k]) + dt * drv
        crude += dt * drv
        cmin[k] = proj.raw_coefficients(amin[:, k])
        cmax[k] = proj.raw_coefficients(amax[:, k])
    for arr, name in ((Y, "Y"), (Z, "Z"), (Ms, "Mstar")):
        if not np.all(np.isfinite(arr)):
            raise SimulationError(f"non-finite regression output for {name}")
    crude += Y[:, n]
    se = float(np.std(crude) / np.sqrt(m))
    report = SaddleReport(gaps, tols, amin[check_rows], amax[check_rows])
    return Y, Z, Ms, Zm, amin, amax, cmin, cmax, report, se


def solve_zero_sum(spec: ZeroSumSpec, grid: TimeGrid, num_paths: int, basis: Optional[RegressionBasis] = None,
                   rng: Optional[RngSpec] = None, check_paths: int = 64, order: str = "infsup") -> ZeroSumSolution:
    """Regression solve of the value/tracking BSDE pair under the reference measure.

    Isaacs gaps are checked on the first ``check_paths`` paths at every step;
    a gap above tolerance raises :class:`IsaacsViolation` carrying the report.
    ``order="supinf"`` swaps the driver for the lower value (the Isaacs check
    is then skipped so the two one-sided values can be compared).
    """
    if order not in ("infsup", "supinf"):
        raise SpecError("order must be 'infsup' or 'supinf'")
    basis = basis or RegressionBasis(degree=2, use_mean=False)
    if basis.use_mean:
        basis = RegressionBasis(basis.degree, basis.ridge, use_mean=False)
    rng = rng or RngSpec(0)
    x, dw = _reference_paths(spec, grid, num_paths, rng)
    rows = np.arange(min(check_paths, num_paths))

    if order == "infsup":
        driver = lambda t, xs, z: saddle(spec, t, xs, z)
    else:
        rows = rows[:0]
        driver = lambda t, xs, z: _lower_value(spec, t, xs, z)
    Y, Z, Ms, Zm, amin, amax, cmin, cmax, report, se = _backward(spec, grid, x, dw, basis, driver, rows)
    return ZeroSumSolution(spec, grid, x, dw, Y, Z, Ms, Zm, amin, amax, cmin, cmax, basis, report, se)


def _lower_value(spec, t, x, z):
    grid = spec.control_set.grid
    if spec.separable:
        return _saddle_separable(spec, t, x, z, grid)
    val = np.empty(x.size)
    amin = np.empty(x.size)
    amax = np.empty(x.size)
    step = max(1, _CHUNK // (grid.size * grid.size))
    for s in range(0, x.size, step):
        sl = slice(s, s + step)
        h = _hamiltonian_matrix(spec, t, x[sl], z[sl], grid)
        lower = h.min(axis=1)
        j = np.argmax(lower, axis=1)
        rows = np.arange(j.size)
        val[sl] = lower[rows, j]
        amax[sl] = grid[j]
        amin[sl] = grid[np.argmin(h[rows, :, j], axis=1)]
    return val, amin, amax


@dataclass
class OneSided:
    Y: np.ndarray
    Z: np.ndarray
    Mstar: np.ndarray
    Zm: np.ndarray


def one_sided_solve(sol: ZeroSumSolution, side: str) -> OneSided:
    """Best-response BSDE of one player against the opponent's saddle controls, on the solve's paths.

    ``side="max"`` gives the maximizer's value of ``J``; ``side="min"`` the
    minimizer's value of ``-J``. Each player maximizes its own Hamiltonian.
    """
    if side not in ("max", "min"):
        raise SpecError("side must be 'max' or 'min'")
    spec, grid = sol.spec, sol.grid
    x, dw = sol.states, sol.increments
    m, n = dw.shape
    dt = grid.dt
    sgn = 1.0 if side == "max" else -1.0
    cs = spec.control_set.grid
    Y = np.empty((m, n + 1))
    Ms = np.empty((m, n + 1))
    Z = np.empty((m, n))
    Zm = np.empty((m, n))
    Ms[:, n] = spec.phi(x[:, n])
    Y[:, n] = sgn * (spec.terminal(x[:, n]) + spec.G(Ms[:, n]))
    for k in range(n - 1, -1, -1):
        t = grid.time(k)
        proj = Projector(sol.basis.features(x[:, k]), sol.basis.ridge)
        nxt = np.column_stack([Y[:, k + 1], Ms[:, k + 1]])
        zz = proj.fit((nxt - proj.fit(nxt)) * dw[:, k, None] / dt)
        Z[:, k], Zm[:, k] = zz[:, 0], zz[:, 1]
        xr, zr = x[:, k, None], Z[:, k, None]
        if side == "max":
            opp = sol.a_min[:, k, None]
            h = sgn * spec.running(t, xr, opp, cs[None, :]) + zr * spec.drift(t, xr, opp, cs[None, :])
        else:
            opp = sol.a_max[:, k, None]
            h = sgn * spec.running(t, xr, cs[None, :], opp) + zr * spec.drift(t, xr, cs[None, :], opp)
        j = np.argmax(h, axis=1)
        own = cs[j]
        hval = h[np.arange(m), j]
        b = spec.drift(t, x[:, k], sol.a_min[:, k], own) if side == "max" else spec.drift(t, x[:, k], own, sol.a_max[:, k])
        Ms[:, k] = np.clip(proj.fit(Ms[:, k + 1] - Zm[:, k] * dw[:, k]) + dt * Zm[:, k] * b,
                           -spec.bound_phi, spec.bound_phi)
        drv = hval - sgn * 0.5 * spec.G_second(Ms[:, k]) * Zm[:, k] ** 2
        Y[:, k] = proj.fit(Y[:, k + 1] - Z[:, k] * dw[:, k]) + dt * drv
    return OneSided(Y, Z, Ms, Zm)


def antisymmetry_check(first: OneSided, second: OneSided):
    """Sup-norm defects ``max |Y1 + Y2|`` and ``max |Z1 + Z2|``."""
    return float(np.max(np.abs(first.Y + second.Y))), float(np.max(np.abs(first.Z + second.Z)))


@dataclass
class ZeroSumDeviation:
    t: float
    window: float
    deviation: float
    side: str
    gap: float
    se: float
    epsilon: float

    @property
    def threshold(self) -> float:
        return -(self.epsilon * self.window + 3.0 * self.se)

    @property
    def passed(self) -> bool:
        return self.gap >= self.threshold


def _payoff_batches(spec, grid, sol, noise, dev_side, dev, k0, k1, batches):
    m = noise.shape[0]
    dt = grid.dt
    x = np.full(m, spec.x0, dtype=float)
    run = np.zeros(m)
    for k in range(grid.steps):
        t = grid.time(k)
        a = sol.feedback("min", k, x)
        am = sol.feedback("max", k, x)
        if dev_side is not None and k0 <= k < k1:
            if dev_side == "min":
                a = spec.control_set.project(a + dev)
            else:
                am = spec.control_set.project(am + dev)
        run += dt * spec.running(t, x, a, am)
        x = x + spec.sigma * spec.drift(t, x, a, am) * dt + spec.sigma * noise[:, k]
        if np.max(np.abs(x)) > EXPLOSION_LIMIT:
            raise SimulationError("state exploded in payoff simulation")
    run += spec.terminal(x)
    phi = spec.phi(x)
    b = np.array_split(np.arange(m), batches)
    return np.array([run[i].mean() + spec.G(phi[i].mean()) for i in b])


def zero_sum_deviation_test(sol: ZeroSumSolution, t: float, window: float, deviation: float, side: str = "max",
                            num_test: int = 8192, epsilon: float = 0.05, batches: int = 16,
                            rng: Optional[RngSpec] = None) -> ZeroSumDeviation:
    """Payoff change when one player adds ``deviation`` to its saddle control on ``[t, t + window)``.

    The gap is the deviator's loss: ``J_eq - J_dev`` for the maximizer and
    ``J_dev - J_eq`` for the minimizer. Both runs share their noise.
    """
    if side not in ("max", "min"):
        raise SpecError("side must be 'max' or 'min'")
    grid, spec = sol.grid, sol.spec
    k0 = grid.index_of(t)
    k1 = min(grid.steps, k0 + max(1, int(round(window / grid.dt))))
    rng = rng or RngSpec(1, stream=7)
    noise = draw_noise(rng, num_test, 1, grid.steps)[:, 1:, 0] * np.sqrt(grid.dt)
    base = _payoff_batches(spec, grid, sol, noise, None, 0.0, k0, k1, batches)
    dev = _payoff_batches(spec, grid, sol, noise, side, deviation, k0, k1, batches)
    diff = base - dev if side == "max" else dev - base
    se = float(np.std(diff, ddof=1) / np.sqrt(batches)) if batches > 1 else 0.0
    return ZeroSumDeviation(t, (k1 - k0) * grid.dt, deviation, side, float(diff.mean()), se, epsilon)


def write_zero_sum_csv(sol: ZeroSumSolution, path, first: Optional[OneSided] = None,
                       second: Optional[OneSided] = None) -> None:
    """Columns: t, mean_Y, gap_max, antisymmetry_defect (empty without one-sided solves)."""
    n = sol.grid.steps
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "mean_Y", "gap_max", "antisymmetry_defect"])
        for k in range(n + 1):
            gap = repr(float(sol.report.gap[k].max())) if k < n and sol.report.gap.shape[1] else ""
            defect = repr(float(np.max(np.abs(first.Y[:, k] + second.Y[:, k])))) if first is not None else ""
            w.writerow([repr(float(sol.grid.time(k))), repr(float(sol.Y[:, k].mean())), gap, defect])
