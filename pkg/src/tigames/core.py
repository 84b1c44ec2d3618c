"""Domain types and the Hamiltonian algebra shared by every solver.

Conventions
-----------
State and noise are scalar. Coefficient callables are vectorized numpy
functions with signature ``(t, x, law, a)`` where ``x`` and ``a`` are arrays
of the agent's own state and control and ``law`` is an
:class:`EmpiricalMeasure` whose atoms sit on the last axis. Leading axes of
``law`` broadcast against ``x``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import EmptyEnsembleError, GridError, SpecError

# Largest number of (path, candidate) Hamiltonian evaluations done at once.
_CHUNK = 1 << 21


@dataclass(frozen=True)
class ControlSet:
    """Closed control interval with a uniform grid used for maximization.

    ``refine`` switches on a parabolic polish of the grid maximizer inside its
    two neighbouring cells, which makes maximizers of smooth concave
    Hamiltonians exact up to round-off instead of up to the grid spacing.
    """

    lower: float
    upper: float
    grid_points: int = 201
    refine: bool = False

    def __post_init__(self):
        if not (math.isfinite(self.lower) and math.isfinite(self.upper)):
            raise SpecError("control bounds must be finite")
        if not self.lower < self.upper:
            raise SpecError("control set needs lower < upper")
        if int(self.grid_points) < 2:
            raise SpecError("control set needs at least 2 grid points")

    @property
    def grid(self) -> np.ndarray:
        return np.linspace(self.lower, self.upper, int(self.grid_points))

    @property
    def spacing(self) -> float:
        return (self.upper - self.lower) / (int(self.grid_points) - 1)

    def project(self, a):
        return np.clip(a, self.lower, self.upper)


def project_to_A(a, cs: ControlSet):
    """Clamp ``a`` into the control interval (idempotent, 1-Lipschitz)."""
    return cs.project(a)


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid ``t_k = k T / n`` on ``[0, T]``."""

    horizon: float
    steps: int

    def __post_init__(self):
        if not self.horizon > 0:
            raise SpecError("horizon must be positive")
        if int(self.steps) < 1:
            raise SpecError("time grid needs at least one step")

    @property
    def dt(self) -> float:
        return self.horizon / self.steps

    @property
    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.horizon, self.steps + 1)

    def time(self, k: int) -> float:
        return k * self.horizon / self.steps

    def index_of(self, t: float) -> int:
        """Grid index of time ``t``; raises :class:`GridError` when off grid."""
        pos = t / self.dt
        k = int(round(pos))
        if abs(pos - k) > 1e-9 * max(1.0, abs(pos)) or k < 0 or k > self.steps:
            raise GridError(f"time {t!r} is not on the grid of {self.steps} steps")
        return k


@dataclass(frozen=True)
class Aggregator:
    """Function ``G(m, n)`` of the two expected terminal functionals and its partials."""

    value: Callable
    d_m: Callable
    d_n: Callable
    d_mm: Callable
    d_mn: Callable
    d_nn: Callable


def quadratic_aggregator(mm=0.0, mn=0.0, nn=0.0, m=0.0, n=0.0) -> Aggregator:
    """``G = mm m^2/2 + mn m n + nn n^2/2 + m*m_ + n*n_`` with constant curvature."""

    def value(x, y):
        return 0.5 * mm * x * x + mn * x * y + 0.5 * nn * y * y + m * x + n * y

    def const(c):
        return lambda x, y: np.full(np.broadcast(x, y).shape, float(c))

    return Aggregator(
        value=value,
        d_m=lambda x, y: mm * x + mn * y + m,
        d_n=lambda x, y: mn * x + nn * y + n,
        d_mm=const(mm),
        d_mn=const(mn),
        d_nn=const(nn),
    )


class EmpiricalMeasure:
    """Uniform-weight atoms over state x control.

    ``states`` and ``controls`` carry atoms on the last axis; any leading axes
    are batch axes (one measure per simulated path, for instance).
    ``controls`` may be ``None`` for a state-only law.
    """

    __slots__ = ("states", "controls")

    def __init__(self, states, controls=None):
        states = np.asarray(states, dtype=float)
        if states.ndim == 0:
            states = states.reshape(1)
        if states.shape[-1] == 0:
            raise EmptyEnsembleError("empty ensemble")
        if controls is not None:
            controls = np.asarray(controls, dtype=float)
            if controls.ndim == 0:
                controls = controls.reshape(1)
            if controls.shape[-1] != states.shape[-1]:
                raise SpecError("states and controls must have the same number of atoms")
        self.states = states
        self.controls = controls

    @property
    def num_atoms(self) -> int:
        return self.states.shape[-1]

    @property
    def weights(self) -> np.ndarray:
        return np.full(self.num_atoms, 1.0 / self.num_atoms)

    def mean_state(self):
        return self.states.mean(axis=-1)

    def mean_control(self):
        if self.controls is None:
            raise SpecError("law carries no control marginal")
        return self.controls.mean(axis=-1)

    def state_moment(self, p: int):
        return (self.states**p).mean(axis=-1)

    def __repr__(self):
        return f"EmpiricalMeasure(atoms={self.num_atoms}, batch={self.states.shape[:-1]})"


def empirical_measure(samples: Sequence) -> EmpiricalMeasure:
    """Build the uniform measure on a list of ``(state, control)`` pairs."""
    samples = list(samples)
    if not samples:
        raise EmptyEnsembleError("empty ensemble")
    states = np.array([float(s[0]) for s in samples])
    controls = np.array([float(s[1]) for s in samples])
    return EmpiricalMeasure(states, controls)


def wasserstein_1d(mu, nu, p: int = 2, grid_points: Optional[int] = None) -> float:
    """Wasserstein-p distance between two 1-d samples via quantile coupling.

    Samples need not be sorted. When the sizes differ the two piecewise
    constant quantile functions are integrated exactly over the merged
    breakpoints; pass ``grid_points`` to use a midpoint grid instead.
    """
    if p not in (1, 2):
        raise ValueError("p must be 1 or 2")
    x = np.sort(np.asarray(mu, dtype=float).ravel())
    y = np.sort(np.asarray(nu, dtype=float).ravel())
    n, m = x.size, y.size
    if n == 0 or m == 0:
        raise EmptyEnsembleError("empty ensemble")
    if grid_points is not None:
        u = (np.arange(grid_points) + 0.5) / grid_points
        d = np.abs(x[np.minimum((u * n).astype(int), n - 1)] - y[np.minimum((u * m).astype(int), m - 1)])
        return float(np.mean(d**p) ** (1.0 / p))
    if n == m:
        d = np.abs(x - y)
        return float(np.mean(d**p) ** (1.0 / p))
    # breakpoints i/n and j/m expressed on the integer lattice of step 1/(n m)
    pts = np.union1d(np.arange(n + 1, dtype=np.int64) * m, np.arange(m + 1, dtype=np.int64) * n)
    left = pts[:-1]
    length = np.diff(pts) / (n * m)
    d = np.abs(x[left // m] - y[left // n])
    return float(np.sum(length * d**p) ** (1.0 / p))


def _per_player(value, n_players, name):
    if callable(value) or value is None:
        return [value] * n_players
    value = list(value)
    if len(value) != n_players:
        raise SpecError(f"{name} must be a callable or a list of {n_players} callables")
    return value


@dataclass
class GameSpec:
    """Coefficients of an N-player game with mean-variance type preferences.

    The controlled state of player ``i`` follows
    ``dX = sigma * drift(t, X, law, a) dt + sigma dW``. Player ``i`` receives
    ``E[int running + terminal] + G(E phi1(X_T^i), E phi2(law_T))``.

    ``drift``, ``running`` and ``terminal`` may be a single callable (symmetric
    game) or a list with one callable per player (only allowed for N = 2).
    ``lambda_max``, when given, maps ``(HamiltonianInput, aleph)`` to the
    player's fixed-point control and replaces numerical maximization.
    """

    num_players: int
    drift: object
    running: object
    terminal: object
    aggregator: Aggregator
    phi1: Callable
    phi2: Callable
    control_set: ControlSet
    sigma: float = 1.0
    x0: float = 0.0
    x0_std: float = 0.0
    lambda_max: Optional[Callable] = None
    aleph: float = 0.0
    bound_b: float = math.inf
    bound_phi1: float = math.inf
    bound_phi2: float = math.inf
    dissipativity: float = 0.0
    state_dim: int = 1
    noise_dim: int = 1
    name: str = "custom"
    _drift: list = field(init=False, repr=False)
    _running: list = field(init=False, repr=False)
    _terminal: list = field(init=False, repr=False)

    def __post_init__(self):
        if int(self.num_players) < 1:
            raise SpecError("num_players must be >= 1")
        if self.state_dim != 1 or self.noise_dim != 1:
            raise SpecError("only scalar state and noise are supported")
        if not self.sigma >= 0:
            raise SpecError("sigma must be nonnegative")
        n = int(self.num_players)
        self._drift = _per_player(self.drift, n, "drift")
        self._running = _per_player(self.running, n, "running")
        self._terminal = _per_player(self.terminal, n, "terminal")
        if not self.symmetric and n > 2:
            raise SpecError("player-specific coefficients are only supported for N = 2")

    @property
    def symmetric(self) -> bool:
        return all(not isinstance(c, (list, tuple)) for c in (self.drift, self.running, self.terminal))

    def drift_of(self, i: int) -> Callable:
        return self._drift[i]

    def running_of(self, i: int) -> Callable:
        return self._running[i]

    def terminal_of(self, i: int) -> Callable:
        return self._terminal[i]

    def with_players(self, n: int) -> "GameSpec":
        if not self.symmetric:
            raise SpecError("cannot resize a game with player-specific coefficients")
        return replace(self, num_players=n)


@dataclass
class HamiltonianInput:
    """Arguments of one player's Hamiltonian, batched over paths.

    Shapes (``B`` paths, ``N`` players): ``x`` (B, N); ``z``, ``zm``, ``zn``
    (B, N) rows of the player's integrands against every Brownian motion;
    ``mstar`` and ``nstar`` (B,); ``control`` (B,) or (B, G); ``others``
    (B, N) with the player's own entry ignored.
    """

    t: float
    x: np.ndarray
    player: int
    z: np.ndarray
    zm: np.ndarray
    zn: np.ndarray
    mstar: np.ndarray
    nstar: np.ndarray
    control: np.ndarray
    others: np.ndarray

    def __post_init__(self):
        self.x = np.atleast_2d(np.asarray(self.x, dtype=float))
        b, n = self.x.shape
        try:
            for name in ("z", "zm", "zn", "others"):
                setattr(self, name, np.broadcast_to(np.asarray(getattr(self, name), dtype=float), (b, n)))
            self.mstar = np.broadcast_to(np.asarray(self.mstar, dtype=float), (b,))
            self.nstar = np.broadcast_to(np.asarray(self.nstar, dtype=float), (b,))
        except ValueError as exc:
            raise SpecError(f"dimension mismatch in Hamiltonian input: {exc}") from None
        self.control = np.asarray(self.control, dtype=float)
        if self.control.ndim == 0:
            self.control = np.full(b, float(self.control))
        if self.control.shape[0] != b:
            raise SpecError("control batch size does not match states")
        if not 0 <= self.player < n:
            raise SpecError("player index out of range")


@dataclass
class HamiltonianState:
    """Everything but the controls, for all players at one time, batched over paths.

    ``z[b, i, l]`` and ``zm[b, i, l]`` are player ``i``'s integrands against
    ``W^l``; ``zn[b, l]`` and ``nstar[b]`` are shared by all players.
    """

    t: float
    x: np.ndarray
    z: np.ndarray
    zm: np.ndarray
    zn: np.ndarray
    mstar: np.ndarray
    nstar: np.ndarray

    @property
    def batch(self) -> int:
        return self.x.shape[0]

    @property
    def players(self) -> int:
        return self.x.shape[1]

    def input_for(self, i: int, controls: np.ndarray) -> HamiltonianInput:
        return HamiltonianInput(
            t=self.t, x=self.x, player=i, z=self.z[:, i, :], zm=self.zm[:, i, :], zn=self.zn,
            mstar=self.mstar[:, i], nstar=self.nstar, control=controls[:, i], others=controls,
        )

    def subset(self, rows) -> "HamiltonianState":
        return HamiltonianState(self.t, self.x[rows], self.z[rows], self.zm[rows], self.zn[rows],
                                self.mstar[rows], self.nstar[rows])


def _expand(arr, extra):
    return arr.reshape(arr.shape + (1,) * extra)


def hamiltonian_i(spec: GameSpec, inp: HamiltonianInput, control=None, penalty: bool = True) -> np.ndarray:
    """Player ``inp.player``'s Hamiltonian, one value per path (and candidate).

    ``control`` overrides ``inp.control`` and may carry an extra trailing axis
    of candidate controls. ``penalty=False`` drops the control-free
    variance-penalty terms, which is all that maximization needs.
    """
    a = inp.control if control is None else np.asarray(control, dtype=float)
    if a.ndim == 0:
        a = np.full(inp.x.shape[0], float(a))
    b, n = inp.x.shape
    if a.shape[0] != b:
        raise SpecError("dimension mismatch between control and state batch")
    i = inp.player
    extra = a.ndim - 1
    lead = (b,) + (1,) * extra
    ctrl = np.empty(a.shape + (n,))
    ctrl[...] = inp.others.reshape(lead + (n,))
    ctrl[..., i] = a
    law = EmpiricalMeasure(inp.x.reshape(lead + (n,)), ctrl)
    x_own = inp.x[:, i].reshape(lead)
    value = spec.running_of(i)(inp.t, x_own, law, a)
    value = value + inp.z[:, i].reshape(lead) * spec.drift_of(i)(inp.t, x_own, law, a)
    for ell in range(n):
        if ell == i or not np.any(inp.z[:, ell]):
            continue
        drift = spec.drift_of(ell)(inp.t, inp.x[:, ell].reshape(lead), law, ctrl[..., ell])
        value = value + inp.z[:, ell].reshape(lead) * drift
    if not penalty:
        return value
    agg = spec.aggregator
    penalty = (0.5 * agg.d_mm(inp.mstar, inp.nstar) * np.sum(inp.zm**2, axis=1)
               + agg.d_mn(inp.mstar, inp.nstar) * np.sum(inp.zm * inp.zn, axis=1)
               + 0.5 * agg.d_nn(inp.mstar, inp.nstar) * np.sum(inp.zn**2, axis=1))
    return value - _expand(penalty, extra)


def grid_maximize(objective: Callable, batch: int, cs: ControlSet, refine: Optional[bool] = None):
    """Maximize ``objective(rows, candidates)`` over the control grid per row.

    ``objective`` receives row indices and a ``(rows, G)`` candidate array and
    returns values of the same shape. Ties go to the smallest control. Returns
    ``(argmax, max_value)`` arrays of length ``batch``.
    """
    refine = cs.refine if refine is None else refine
    grid = cs.grid
    g = grid.size
    best_a = np.empty(batch)
    best_v = np.empty(batch)
    step = max(1, _CHUNK // g)
    h = cs.spacing
    for start in range(0, batch, step):
        rows = np.arange(start, min(batch, start + step))
        cand = np.broadcast_to(grid, (rows.size, g))
        vals = np.asarray(objective(rows, cand), dtype=float)
        vals = np.where(np.isnan(vals), -np.inf, vals)
        idx = np.argmax(vals, axis=1)
        a = grid[idx]
        v = vals[np.arange(rows.size), idx]
        if refine and g >= 3:
            # parabola through three neighbouring nodes; at the ends the stencil moves inward
            r = np.arange(rows.size)
            c = np.clip(idx, 1, g - 2)
            y0, y1, y2 = vals[r, c - 1], vals[r, c], vals[r, c + 1]
            curv = y0 - 2.0 * y1 + y2
            with np.errstate(divide="ignore", invalid="ignore"):
                shift = np.where(curv < 0, 0.5 * h * (y0 - y2) / curv, 0.0)
            shift = np.clip(np.nan_to_num(shift), -h, h)
            cand_a = np.clip(grid[c] + shift, cs.lower, cs.upper)
            cand_v = np.asarray(objective(rows, cand_a[:, None]), dtype=float)[:, 0]
            better = cand_v > v
            a[better] = cand_a[better]
            v[better] = cand_v[better]
        best_a[rows] = a
        best_v[rows] = v
    return best_a, best_v


def _sub_input(inp: HamiltonianInput, rows) -> HamiltonianInput:
    return HamiltonianInput(inp.t, inp.x[rows], inp.player, inp.z[rows], inp.zm[rows], inp.zn[rows],
                            inp.mstar[rows], inp.nstar[rows], inp.control[rows], inp.others[rows])


def argmax_control(spec: GameSpec, inp: HamiltonianInput, refine: Optional[bool] = None) -> np.ndarray:
    """Maximizer of the player's Hamiltonian over the control set, per path.

    Uses ``spec.lambda_max`` when supplied; otherwise scans the control grid
    (smallest control wins ties) with an optional parabolic polish.
    """
    if spec.lambda_max is not None:
        return spec.control_set.project(np.broadcast_to(spec.lambda_max(inp, spec.aleph), inp.mstar.shape))

    def objective(rows, cand):
        return hamiltonian_i(spec, _sub_input(inp, rows), cand, penalty=False)

    a, _ = grid_maximize(objective, inp.x.shape[0], spec.control_set, refine)
    return a


def best_response_gap(spec: GameSpec, inp: HamiltonianInput) -> np.ndarray:
    """``sup_a H(a) - H(current control)`` per path, never negative."""

    def objective(rows, cand):
        return hamiltonian_i(spec, _sub_input(inp, rows), cand, penalty=False)

    _, best = grid_maximize(objective, inp.x.shape[0], spec.control_set)
    current = hamiltonian_i(spec, inp, penalty=False)
    return np.maximum(best - current, 0.0)


def fixed_point_residuals(spec: GameSpec, state: HamiltonianState, controls: np.ndarray) -> np.ndarray:
    """Per-path residual ``max_i [sup_a H^i(a, e) - H^i(e_i, e)]``."""
    controls = np.asarray(controls, dtype=float)
    res = np.zeros(state.batch)
    for i in range(state.players):
        res = np.maximum(res, best_response_gap(spec, state.input_for(i, controls)))
    return res


def fixed_point_residual(spec: GameSpec, state: HamiltonianState, controls: np.ndarray) -> float:
    """Largest per-path fixed-point residual; zero at a discretized fixed point."""
    return float(np.max(fixed_point_residuals(spec, state, controls)))


def _own_gradient(spec, state, controls, h):
    """Central-difference derivative of each player's Hamiltonian in its own control."""
    grad = np.empty_like(controls)
    for i in range(state.players):
        inp = state.input_for(i, controls)
        a = controls[:, i]
        vals = hamiltonian_i(spec, inp, np.stack([a + h, a - h], axis=1), penalty=False)
        grad[:, i] = (vals[:, 0] - vals[:, 1]) / (2.0 * h)
    return grad


def hamiltonian_fixed_point(spec: GameSpec, state: HamiltonianState, init=None, *,
                            max_newton: int = 30, tol: float = 1e-11, br_iters: int = 200):
    """Control vector at which every player maximizes its own Hamiltonian.

    With ``lambda_max`` the map is applied per player. Otherwise a projected
    Newton iteration on the first-order conditions runs first; rows where it
    fails (singular Jacobian, not a local maximum, no convergence) fall back
    to synchronous damped best-response iteration. Returns ``(controls, ok)``
    where ``ok`` flags rows certified by either method.
    """
    cs = spec.control_set
    b, n = state.batch, state.players
    if init is None:
        controls = np.full((b, n), float(cs.project(0.0)))
    else:
        controls = cs.project(np.array(init, dtype=float, copy=True))
    if spec.lambda_max is not None:
        out = np.empty((b, n))
        for i in range(n):
            out[:, i] = cs.project(np.broadcast_to(spec.lambda_max(state.input_for(i, controls), spec.aleph), (b,)))
        return out, np.ones(b, dtype=bool)
    if n == 1:
        out = argmax_control(spec, state.input_for(0, controls), refine=True)[:, None]
        return out, np.ones(b, dtype=bool)

    h = 1e-4 * (cs.upper - cs.lower)
    ok = np.ones(b, dtype=bool)
    active = np.ones(b, dtype=bool)
    for _ in range(max_newton):
        rows = np.nonzero(active)[0]
        if rows.size == 0:
            break
        sub = state.subset(rows)
        a = controls[rows]
        grad = _own_gradient(spec, sub, a, h)
        lo, hi = a <= cs.lower, a >= cs.upper
        done = np.all(np.where(lo, grad <= 1e-9, np.where(hi, grad >= -1e-9, np.abs(grad) <= 1e-9)), axis=1)
        if np.any(done):
            active[rows[done]] = False
            keep = ~done
            rows, a, grad = rows[keep], a[keep], grad[keep]
            if rows.size == 0:
                break
            sub = state.subset(rows)
        jac = np.empty((rows.size, n, n))
        for j in range(n):
            up = a.copy()
            dn = a.copy()
            up[:, j] += h
            dn[:, j] -= h
            jac[:, :, j] = (_own_gradient(spec, sub, up, h) - _own_gradient(spec, sub, dn, h)) / (2.0 * h)
        det = np.linalg.det(jac)
        scale = np.max(np.abs(jac), axis=(1, 2)) ** n
        singular = ~(np.abs(det) > 1e-12 * np.maximum(scale, 1e-300))
        jac[singular] = np.eye(n)
        step = np.linalg.solve(jac, grad[:, :, None])[:, :, 0]
        new = cs.project(a - step)
        new[singular] = a[singular]
        ok[rows[singular]] = False
        controls[rows] = new
        moved = np.max(np.abs(new - a), axis=1)
        active[rows[(moved < tol) | singular]] = False

    # certify: first-order conditions with the right sign at active bounds, and
    # negative own curvature
    a = controls
    grad = _own_gradient(spec, state, a, h)
    g_tol = 1e-6 * (1.0 + np.abs(grad))
    at_low = a <= cs.lower
    at_up = a >= cs.upper
    foc = np.where(at_low, grad <= g_tol, np.where(at_up, grad >= -g_tol, np.abs(grad) <= 1e-6))
    curv = np.empty_like(a)
    for i in range(n):
        inp = state.input_for(i, a)
        v = hamiltonian_i(spec, inp, np.stack([a[:, i] - h, a[:, i], a[:, i] + h], axis=1), penalty=False)
        curv[:, i] = v[:, 0] - 2.0 * v[:, 1] + v[:, 2]
    interior = ~(at_low | at_up)
    concave = np.where(interior, curv < 0, True)
    ok &= np.all(foc & concave, axis=1) & ~active

    bad = np.nonzero(~ok)[0]
    if bad.size:
        sub = state.subset(bad)
        a = controls[bad]
        a[...] = cs.project(0.0) if init is None else cs.project(np.asarray(init, dtype=float)[bad])
        for _ in range(br_iters):
            br = np.column_stack([argmax_control(spec, sub.input_for(i, a), refine=True) for i in range(n)])
            new = 0.5 * a + 0.5 * br
            done = np.max(np.abs(new - a)) < tol
            a = new
            if done:
                break
        controls[bad] = a
        ok[bad] = fixed_point_residuals(spec, sub, a) <= 1e-8
    return controls, ok
