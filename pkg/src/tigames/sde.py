"""Euler-Maruyama simulation of the players' states with Girsanov bookkeeping."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .core import EmpiricalMeasure, GameSpec, TimeGrid
from .errors import GridError, SimulationError, SpecError
from .rng import RngSpec

EXPLOSION_LIMIT = 1e8
MAGIC = b"TIGE1"

# control_field(k, states) -> controls; states and controls are (M, N) arrays
ControlField = Callable[[int, np.ndarray], np.ndarray]


@dataclass(frozen=True)
class PathEnsemble:
    """Simulated trajectories on a uniform grid.

    ``states`` is (M, N, n+1), ``increments`` and ``controls`` are (M, N, n)
    and ``log_weights`` is (M,). Under ``measure="tilted"`` the drift is part
    of the dynamics and the weights are zero; under ``"reference"`` states are
    driftless and the weights carry the stochastic-exponential density.
    """

    grid: TimeGrid
    states: np.ndarray
    increments: np.ndarray
    controls: np.ndarray
    log_weights: np.ndarray
    seed: int
    measure: str = "tilted"

    @property
    def num_paths(self) -> int:
        return self.states.shape[0]

    @property
    def num_players(self) -> int:
        return self.states.shape[1]

    def weights(self) -> np.ndarray:
        return np.exp(self.log_weights)


def constant_field(value: float) -> ControlField:
    def field(k, states):
        return np.full(states.shape, float(value))
    return field


def girsanov_log_weight(b_values, increments, dt: float):
    """``sum_k (b_k dW_k - b_k^2 dt / 2)`` along the last axis."""
    b = np.asarray(b_values, dtype=float)
    w = np.asarray(increments, dtype=float)
    if b.shape != w.shape:
        raise SpecError(f"length mismatch between drifts {b.shape} and increments {w.shape}")
    return np.sum(b * w - 0.5 * b * b * dt, axis=-1)


def draw_noise(rng: RngSpec, num_paths: int, num_players: int, steps: int) -> np.ndarray:
    """Per-path normals laid out as (M, n+1, N); slice 0 seeds the initial law."""
    return rng.normals(num_paths, (steps + 1, num_players))


def evaluate_drift(spec: GameSpec, t: float, states: np.ndarray, controls: np.ndarray) -> np.ndarray:
    """Drift of every player given the joint states and controls, (M, N)."""
    if spec.symmetric:
        law = EmpiricalMeasure(states[:, None, :], controls[:, None, :])
        return np.broadcast_to(spec.drift_of(0)(t, states, law, controls), states.shape)
    law = EmpiricalMeasure(states, controls)
    out = np.empty_like(states)
    for i in range(states.shape[1]):
        out[:, i] = spec.drift_of(i)(t, states[:, i], law, controls[:, i])
    return out


def evaluate_running(spec: GameSpec, t: float, states: np.ndarray, controls: np.ndarray) -> np.ndarray:
    """Running reward of every player, (M, N)."""
    if spec.symmetric:
        law = EmpiricalMeasure(states[:, None, :], controls[:, None, :])
        return np.broadcast_to(spec.running_of(0)(t, states, law, controls), states.shape)
    law = EmpiricalMeasure(states, controls)
    out = np.empty_like(states)
    for i in range(states.shape[1]):
        out[:, i] = spec.running_of(i)(t, states[:, i], law, controls[:, i])
    return out


def evaluate_terminal(spec: GameSpec, states: np.ndarray) -> np.ndarray:
    """Terminal reward of every player given terminal states (M, N)."""
    if spec.symmetric:
        law = EmpiricalMeasure(states[:, None, :])
        return np.broadcast_to(spec.terminal_of(0)(states, law), states.shape)
    law = EmpiricalMeasure(states)
    out = np.empty_like(states)
    for i in range(states.shape[1]):
        out[:, i] = spec.terminal_of(i)(states[:, i], law)
    return out


def _evolve(spec, grid, field, states, increments, controls, log_w, start, measure):
    dt = grid.dt
    sig = spec.sigma
    for k in range(start, grid.steps):
        xk = states[:, :, k]
        ak = spec.control_set.project(np.asarray(field(k, xk), dtype=float))
        controls[:, :, k] = ak
        b = evaluate_drift(spec, grid.time(k), xk, ak)
        dw = increments[:, :, k]
        if measure == "tilted":
            nxt = xk + sig * b * dt + sig * dw
        else:
            nxt = xk + sig * dw
            log_w += np.sum(b * dw - 0.5 * b * b * dt, axis=1)
        bad = ~np.isfinite(nxt) | (np.abs(nxt) > EXPLOSION_LIMIT)
        if np.any(bad):
            path = int(np.nonzero(bad.any(axis=1))[0][0])
            raise SimulationError(f"state exploded on path {path} at step {k + 1}", path_index=path)
        states[:, :, k + 1] = nxt


def simulate_paths(spec: GameSpec, grid: TimeGrid, control_field: ControlField, num_paths: int,
                   rng: RngSpec, measure: str = "tilted", noise: Optional[np.ndarray] = None) -> PathEnsemble:
    """Simulate ``num_paths`` joint trajectories of all players.

    ``noise`` may hold pre-drawn normals from :func:`draw_noise` so repeated
    calls share random numbers.
    """
    if num_paths < 1:
        raise SpecError("need at least one path")
    if measure not in ("tilted", "reference"):
        raise SpecError("measure must be 'tilted' or 'reference'")
    n_pl = spec.num_players
    if noise is None:
        noise = draw_noise(rng, num_paths, n_pl, grid.steps)
    if noise.shape != (num_paths, grid.steps + 1, n_pl):
        raise SpecError("noise array has the wrong shape")
    increments = np.ascontiguousarray(np.transpose(noise[:, 1:, :], (0, 2, 1))) * np.sqrt(grid.dt)
    states = np.empty((num_paths, n_pl, grid.steps + 1))
    states[:, :, 0] = spec.x0 + spec.x0_std * noise[:, 0, :]
    controls = np.empty((num_paths, n_pl, grid.steps))
    log_w = np.zeros(num_paths)
    _evolve(spec, grid, control_field, states, increments, controls, log_w, 0, measure)
    return PathEnsemble(grid, states, increments, controls, log_w, int(rng.seed), measure)


def conditional_subensemble(spec: GameSpec, ens: PathEnsemble, u: float, pivot: int,
                            control_field: ControlField, num_paths: int, rng: RngSpec) -> PathEnsemble:
    """Re-simulate from the pivot path's state at time ``u`` with fresh streams.

    History up to ``u`` is copied from the pivot; ``rng`` should name a stream
    different from the one that produced ``ens``.
    """
    k = ens.grid.index_of(u)
    if not 0 <= pivot < ens.num_paths:
        raise SpecError("pivot index out of range")
    n_pl, n = ens.num_players, ens.grid.steps
    states = np.empty((num_paths, n_pl, n + 1))
    states[:, :, : k + 1] = ens.states[pivot, :, : k + 1]
    increments = np.empty((num_paths, n_pl, n))
    increments[:, :, :k] = ens.increments[pivot, :, :k]
    controls = np.empty((num_paths, n_pl, n))
    controls[:, :, :k] = ens.controls[pivot, :, :k]
    if k < n:
        fresh = rng.normals(num_paths, (n - k, n_pl))
        increments[:, :, k:] = np.transpose(fresh, (0, 2, 1)) * np.sqrt(ens.grid.dt)
    # conditional density of the tilt given the history up to u
    log_w = np.zeros(num_paths)
    _evolve(spec, ens.grid, control_field, states, increments, controls, log_w, k, ens.measure)
    return PathEnsemble(ens.grid, states, increments, controls, log_w, int(rng.seed), ens.measure)


def _leave_one_out(values, weights, statistic):
    w = weights
    sw = w.sum()
    if statistic == "mean":
        s1 = np.sum(w * values)
        full = s1 / sw
        loo = (s1 - w * values) / (sw - w)
    elif statistic == "variance":
        s1 = np.sum(w * values)
        s2 = np.sum(w * values**2)
        full = s2 / sw - (s1 / sw) ** 2
        loo = (s2 - w * values**2) / (sw - w) - ((s1 - w * values) / (sw - w)) ** 2
    else:
        a = np.abs(values)
        order = np.argsort(a)
        full = a[order[-1]]
        loo = np.full(a.size, full)
        loo[order[-1]] = a[order[-2]]
    return full, loo


def moment_estimate(ens: PathEnsemble, statistic: str, player: int, step: int):
    """Weighted sample ``mean`` / ``variance`` / ``sup-norm`` of one player's state at one step.

    Returns ``(estimate, jackknife standard error)``. Weights are the
    Girsanov densities for reference-measure ensembles and one otherwise.
    """
    if statistic not in ("mean", "variance", "sup-norm"):
        raise SpecError(f"unknown statistic {statistic!r}")
    if not 0 <= step <= ens.grid.steps:
        raise GridError(f"step {step} outside grid")
    values = ens.states[:, player, step]
    weights = ens.weights() if ens.measure == "reference" else np.ones_like(values)
    m = values.size
    if m < 2:
        full, _ = _leave_one_out(np.append(values, values), np.append(weights, weights), statistic)
        return float(full), 0.0
    full, loo = _leave_one_out(values, weights, statistic)
    se = np.sqrt((m - 1) / m * np.sum((loo - loo.mean()) ** 2))
    return float(full), float(se)


def dump_ensemble(ens: PathEnsemble, path) -> None:
    """Write the ensemble as a ``TIGE1`` binary file.

    Layout: magic, then little-endian uint64 ``state_dim, noise_dim, M, N, n,
    seed``, float64 horizon, then row-major float64 arrays ``states``,
    ``increments``, ``controls``, ``log_weights``.
    """
    m, n_pl, n1 = ens.states.shape
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<6Q", 1, 1, m, n_pl, n1 - 1, int(ens.seed)))
        fh.write(struct.pack("<d", float(ens.grid.horizon)))
        for arr in (ens.states, ens.increments, ens.controls, ens.log_weights):
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_ensemble(path, measure: str = "tilted") -> PathEnsemble:
    with open(path, "rb") as fh:
        if fh.read(len(MAGIC)) != MAGIC:
            raise SpecError("not a TIGE1 file")
        _, _, m, n_pl, n, seed = struct.unpack("<6Q", fh.read(48))
        (horizon,) = struct.unpack("<d", fh.read(8))
        data = np.frombuffer(fh.read(), dtype="<f8")
    sizes = [m * n_pl * (n + 1), m * n_pl * n, m * n_pl * n, m]
    parts = np.split(data, np.cumsum(sizes)[:-1])
    return PathEnsemble(TimeGrid(horizon, int(n)), parts[0].reshape(m, n_pl, n + 1).copy(),
                        parts[1].reshape(m, n_pl, n).copy(), parts[2].reshape(m, n_pl, n).copy(),
                        parts[3].copy(), int(seed), measure)
