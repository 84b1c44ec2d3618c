"""N-sweeps comparing the symmetric N-player game with its mean-field limit.

Two modes are available for the mean-reverting benchmark family. The
``closed_form`` mode differences exact expected values and needs no
simulation except for the law-distance statistic. The ``numerical`` mode
solves each N-player game and the mean-field game by regression.
"""

from __future__ import annotations

import csv
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np
from scipy import stats

from .core import TimeGrid
from .errors import SpecError, TigamesError
from .lq import (LQParams, fit_bound_constant, rep_control_unprojected, rep_convergence_bound, rep_eta,
                 rep_meanfield_eta, rep_meanfield_mean, rep_nplayer_mean, simpson)
from .rng import RngSpec
from .sde import draw_noise

# closed-form differences below this are rounding noise and reported as exact zeros
ZERO_TOL = 1e-12


@dataclass
class RateFit:
    slope: float
    intercept: float
    ci: tuple
    used: int


def estimate_rate(errors: Sequence[float], Ns: Sequence[float], level: float = 0.95) -> RateFit:
    """Least-squares line through ``(log N, log error)`` with a t-based interval for the slope."""
    e = np.asarray(errors, dtype=float)
    n = np.asarray(Ns, dtype=float)
    if e.shape != n.shape:
        raise SpecError("errors and N list differ in length")
    keep = e > 0
    if not np.all(keep):
        warnings.warn(f"dropping {int((~keep).sum())} nonpositive errors from the rate fit", stacklevel=2)
    if keep.sum() < 3:
        raise SpecError("need at least 3 positive errors to fit a rate")
    lx, ly = np.log(n[keep]), np.log(e[keep])
    design = np.column_stack([lx, np.ones_like(lx)])
    coef, *_ = np.linalg.lstsq(design, ly, rcond=None)
    slope, intercept = float(coef[0]), float(coef[1])
    dof = lx.size - 2
    if dof > 0:
        resid = ly - design @ coef
        s2 = float(resid @ resid) / dof
        se = np.sqrt(s2 / float(np.sum((lx - lx.mean()) ** 2)))
        half = float(stats.t.ppf(0.5 + level / 2.0, dof) * se)
    else:
        half = float("inf")
    return RateFit(slope, intercept, (slope - half, slope + half), int(keep.sum()))


@dataclass
class RNSchedule:
    """Interaction-size sequence ``R_N`` with checks of its two limits on a finite range.

    ``vanishing`` holds when ``N R_N^2`` is nonincreasing and ends strictly
    below where it started (or is identically zero). ``bounded`` holds when
    ``N^2 R_N^2`` varies by at most a factor ``10`` over the upper half of
    the range.
    """

    rate: Callable[[float], float]
    Ns: Sequence[int] = (2, 4, 8, 16, 32, 64)

    def __call__(self, N: float) -> float:
        r = float(self.rate(N))
        if r < 0:
            raise SpecError("R_N must be nonnegative")
        return r

    @property
    def vanishing(self) -> bool:
        v = np.array([n * self(n) ** 2 for n in self.Ns])
        if np.all(v == 0):
            return True
        return bool(np.all(np.diff(v) <= 1e-15 * v[:-1]) and v[-1] < v[0])

    @property
    def bounded(self) -> bool:
        v = np.array([n * n * self(n) ** 2 for n in self.Ns])
        upper = v[len(v) // 2:]
        if np.all(upper == 0):
            return True
        return bool(np.all(upper > 0) and upper.max() <= 10.0 * upper.min())


def rep_schedule(p: LQParams, Ns=(2, 4, 8, 16, 32, 64)) -> RNSchedule:
    """For the benchmark family the Hamiltonian maximizer's N-dependent shift is ``kappa2 / N``."""
    return RNSchedule(lambda N: abs(p.kappa2) / N, Ns)


def eta_statistic(R: float, snapshot, pbar: float = 1.0, C: float = 1.0, player: int = 0) -> float:
    """Moment-weighted interaction size for an N-player state snapshot at one time.

    ``R^2 (1 + |x1|^2 + mean|x|^2) + C N R^2 (1 + |x1|^{2p} + mean|x|^{2p})
    + N R^4 (1 + mean|x|^2)(1 + N)``, with ``x1`` the tagged player.
    """
    x = np.abs(np.asarray(snapshot, dtype=float).ravel())
    if x.size == 0:
        raise SpecError("empty snapshot")
    if R == 0:
        return 0.0
    n = x.size
    m2 = float(np.mean(x**2))
    mp = float(np.mean(x ** (2.0 * pbar)))
    x1 = x[player]
    return (R * R * (1.0 + x1**2 + m2) + C * n * R * R * (1.0 + x1 ** (2.0 * pbar) + mp)
            + n * R**4 * (1.0 + m2) * (1.0 + n))


class SortedCloud:
    """Reference cloud prepared for exact W2 against small samples."""

    def __init__(self, values):
        r = np.sort(np.asarray(values, dtype=float).ravel())
        if r.size == 0:
            raise SpecError("empty reference cloud")
        self.r = r
        self.size = r.size
        self.c1 = np.concatenate([[0.0], np.cumsum(r)])
        self.c2 = np.concatenate([[0.0], np.cumsum(r * r)])

    def _primitive(self, s, cum):
        # integral over [0, s] of Q (cum=c1) or Q^2 (cum=c2); piecewise linear in s
        j = np.minimum(np.floor(s * self.size).astype(int), self.size - 1)
        q = self.r[j] if cum is self.c1 else self.r[j] ** 2
        return cum[j] / self.size + q * (s - j / self.size)

    def w2sq(self, sample) -> float:
        y = np.sort(np.asarray(sample, dtype=float).ravel())
        n = y.size
        edges = np.arange(n + 1) / n
        f1 = np.diff(self._primitive(edges, self.c1))
        f2 = np.diff(self._primitive(edges, self.c2))
        return max(0.0, float(np.sum(y * y / n - 2.0 * y * f1 + f2)))


def gamma_statistic(ref_states, samples, grid: TimeGrid, u: float, ref_controls=None, sample_controls=None) -> float:
    """Mean over sample clouds of the largest (over grid times from ``u``) W2^2 to the reference.

    ``ref_states`` is (P, n+1) and ``samples`` is (R, N, n+1); controls use
    the matching (P, n) and (R, N, n) layouts and add their own W2^2 term.
    """
    ref_states = np.asarray(ref_states, dtype=float)
    samples = np.asarray(samples, dtype=float)
    if samples.ndim == 2:
        samples = samples[None]
    p, n_cloud = ref_states.shape[0], samples.shape[1]
    if p <= n_cloud:
        raise SpecError("reference cloud must be larger than the sample cloud")
    k0 = grid.index_of(u)
    n = grid.steps
    worst = np.zeros(samples.shape[0])
    for k in range(k0, n + 1):
        ref = SortedCloud(ref_states[:, k])
        vals = np.array([ref.w2sq(s[:, k]) for s in samples])
        if ref_controls is not None and k < n:
            rc = SortedCloud(np.asarray(ref_controls)[:, k])
            vals = vals + np.array([rc.w2sq(s[:, k]) for s in np.asarray(sample_controls)])
        worst = np.maximum(worst, vals)
    return float(worst.mean())


@dataclass
class SweepConfig:
    mode: str = "closed_form"
    u_mid: Optional[float] = None
    panels: int = 512
    steps: int = 50
    paths: int = 1 << 14
    particles: int = 1 << 14
    reference_particles: int = 1 << 16
    gamma_reps: int = 32
    compute_gamma: bool = True
    pbar: float = 1.0
    eta_constant: float = 1.0
    workers: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.mode not in ("closed_form", "numerical"):
            raise SpecError("mode must be 'closed_form' or 'numerical'")


@dataclass
class SweepResult:
    Ns: List[int]
    value_err_u0: List[float]
    value_err_umid: List[float]
    control_W2_int: List[float]
    gamma: List[float]
    eta: List[float]
    seconds: List[float]
    failures: Dict[int, str] = field(default_factory=dict)
    rate: Optional[RateFit] = None
    bound_constant: Optional[float] = None
    bound_ok: Optional[bool] = None
    note: str = ""

    @property
    def value_err(self) -> List[float]:
        return [max(a, b) for a, b in zip(self.value_err_u0, self.value_err_umid)]


def _clean(x: float) -> float:
    return 0.0 if abs(x) < ZERO_TOL else abs(x)


def closed_form_value_error(p: LQParams, N: int, u: float, x0: float = 0.0, panels: int = 512) -> float:
    """``|E V^N_u - E V_u|`` for the tagged player, both systems started at ``x0``.

    The mean-field value is evaluated with the population mean at ``u`` as
    interaction anchor.
    """
    e = float(np.exp(p.sigma * p.k * (u - p.T)))
    c = p.kappa1 * (1.0 - e) / (p.sigma * p.k)
    m_n = rep_nplayer_mean(p, u, x0, N, panels)
    m = float(rep_meanfield_mean(p, u, x0))
    vn = e * m_n + c * m_n + rep_eta(p, u, "etaN", panels, N)
    v = e * m + rep_meanfield_eta(p, u, m, panels)
    return _clean(vn - v)


def closed_form_control_gap(p: LQParams, N: int, u: float = 0.0, panels: int = 512) -> float:
    """``int_u^T W2^2`` between the (deterministic) N-player and mean-field controls."""
    def sq(t):
        return (p.project(rep_control_unprojected(p, t, N)) - p.project(p.sigma * np.exp(p.sigma * p.k * (t - p.T)))) ** 2
    return _clean(simpson(sq, u, p.T, panels))


def simulate_meanfield_states(p: LQParams, grid: TimeGrid, num: int, rng: RngSpec, x0: float = 0.0,
                              x0_std: float = 0.0):
    """Euler paths of the mean-field equilibrium state; returns (states (num, n+1), controls (num, n))."""
    noise = draw_noise(rng, num, 1, grid.steps)[:, :, 0]
    x = np.empty((num, grid.steps + 1))
    x[:, 0] = x0 + x0_std * noise[:, 0]
    a = np.empty((num, grid.steps))
    sq = np.sqrt(grid.dt)
    for k in range(grid.steps):
        a[:, k] = p.project(p.sigma * np.exp(p.sigma * p.k * (grid.time(k) - p.T)))
        x[:, k + 1] = x[:, k] + p.sigma * (a[:, k] - p.k * x[:, k]) * grid.dt + p.sigma * sq * noise[:, k + 1]
    return x, a


def _closed_form_point(p: LQParams, N: int, cfg: SweepConfig, u_mid: float, x0: float):
    t0 = time.perf_counter()
    e0 = closed_form_value_error(p, N, 0.0, x0, cfg.panels)
    em = closed_form_value_error(p, N, u_mid, x0, cfg.panels)
    ctrl = closed_form_control_gap(p, N, 0.0, cfg.panels)
    return e0, em, ctrl, time.perf_counter() - t0


def _numerical_point(p: LQParams, N: int, cfg: SweepConfig, u_mid: float, x0: float, mf_summary):
    from .nplayer import solve_nplayer
    from .presets import rep_spec

    t0 = time.perf_counter()
    grid = TimeGrid(p.T, cfg.steps)
    spec = rep_spec(p, N, x0=x0)
    sol = solve_nplayer(spec, grid, cfg.paths, rng=RngSpec(cfg.seed, stream=N))
    if not sol.converged:
        raise TigamesError(f"N={N} solve did not converge")
    y0, ymid, mf_controls = mf_summary
    e0 = _clean(sol.Y[:, 0, 0].mean() - y0)
    em = _clean(sol.Y[:, 0, grid.index_of(u_mid)].mean() - ymid)
    ctrl = 0.0
    for k in range(grid.steps):
        ctrl += grid.dt * SortedCloud(mf_controls[:, k]).w2sq(sol.controls[:, 0, k])
    return e0, em, _clean(ctrl), time.perf_counter() - t0


def _run_point(args):
    p, N, cfg, u_mid, x0, mf_summary = args
    if cfg.mode == "closed_form":
        return _closed_form_point(p, N, cfg, u_mid, x0)
    return _numerical_point(p, N, cfg, u_mid, x0, mf_summary)


def run_sweep(p: LQParams, Ns: Sequence[int], config: Optional[SweepConfig] = None, x0: float = 0.0) -> SweepResult:
    """Value, control and law errors between the N-player game and its mean-field limit, per N.

    Per-N failures are recorded in ``failures`` and the sweep continues.
    Results are sorted by N. The slope of the larger of the two value errors
    is fitted when at least three are positive.
    """
    cfg = config or SweepConfig()
    Ns = sorted(int(n) for n in Ns)
    if any(n < 1 for n in Ns):
        raise SpecError("num_players must be >= 1")
    u_mid = p.T / 2.0 if cfg.u_mid is None else cfg.u_mid
    grid = TimeGrid(p.T, cfg.steps)
    grid.index_of(u_mid)

    mf_summary = None
    if cfg.mode == "numerical":
        from .meanfield import solve_meanfield
        from .presets import rep_meanfield_spec

        mf = solve_meanfield(rep_meanfield_spec(p, x0=x0), grid, cfg.particles, rng=RngSpec(cfg.seed, stream=1000))
        if not mf.converged:
            raise TigamesError("mean-field reference did not converge")
        mf_summary = (float(mf.Y[:, 0].mean()), float(mf.Y[:, grid.index_of(u_mid)].mean()), mf.flow.controls)

    jobs = [(p, N, cfg, u_mid, x0, mf_summary) for N in Ns]
    outcomes = {}
    if cfg.workers > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            futures = {N: pool.submit(_run_point, job) for N, job in zip(Ns, jobs)}
            for N, fut in futures.items():
                try:
                    outcomes[N] = fut.result()
                except Exception as exc:  # recorded per N; the sweep carries on
                    outcomes[N] = exc
    else:
        for N, job in zip(Ns, jobs):
            try:
                outcomes[N] = _run_point(job)
            except Exception as exc:
                outcomes[N] = exc

    res = SweepResult([], [], [], [], [], [], [])
    ref_states = ref_controls = None
    if cfg.compute_gamma:
        ref_states, ref_controls = simulate_meanfield_states(p, grid, cfg.reference_particles,
                                                             RngSpec(cfg.seed, stream=1), x0)
    schedule = rep_schedule(p, Ns)
    for N in Ns:
        out = outcomes[N]
        if isinstance(out, Exception):
            res.failures[N] = f"{type(out).__name__}: {out}"
            continue
        e0, em, ctrl, secs = out
        t0 = time.perf_counter()
        gam = float("nan")
        if cfg.compute_gamma:
            if N < cfg.reference_particles:
                xs, acts = simulate_meanfield_states(p, grid, cfg.gamma_reps * N, RngSpec(cfg.seed, stream=2 + N), x0)
                gam = gamma_statistic(ref_states, xs.reshape(cfg.gamma_reps, N, -1), grid, 0.0,
                                      ref_controls, acts.reshape(cfg.gamma_reps, N, -1))
        snapshot = np.full(N, x0)
        eta = eta_statistic(schedule(N), snapshot, cfg.pbar, cfg.eta_constant)
        res.Ns.append(N)
        res.value_err_u0.append(e0)
        res.value_err_umid.append(em)
        res.control_W2_int.append(ctrl)
        res.gamma.append(gam)
        res.eta.append(eta)
        res.seconds.append(secs + time.perf_counter() - t0)

    errs = np.array(res.value_err)
    if np.sum(errs > 0) >= 3:
        res.rate = estimate_rate(errs[errs > 0], np.array(res.Ns)[errs > 0])
        res.bound_constant = fit_bound_constant(errs, res.Ns)
        res.bound_ok = bool(all(e <= rep_convergence_bound(n, res.bound_constant) * (1 + 1e-12)
                                for e, n in zip(errs, res.Ns)))
    elif res.Ns:
        res.note = "value errors vanish; slope fit skipped"
    return res


def write_sweep_csv(res: SweepResult, path, timings: bool = False) -> None:
    """Columns: N, value_err_u0, value_err_umid, control_W2_int, gamma, eta, seconds.

    Wall times differ between runs, so ``seconds`` stays empty unless
    ``timings`` is set; the rest of the file is reproducible byte for byte.
    """
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["N", "value_err_u0", "value_err_umid", "control_W2_int", "gamma", "eta", "seconds"])
        for row in zip(res.Ns, res.value_err_u0, res.value_err_umid, res.control_W2_int, res.gamma, res.eta,
                       res.seconds):
            secs = repr(float(row[6])) if timings else ""
            w.writerow([row[0]] + [repr(float(v)) for v in row[1:6]] + [secs])


def write_plot_data(res: SweepResult, path) -> None:
    """Two whitespace-separated columns, ``log N`` and ``log value error``, for positive errors."""
    with open(path, "w") as fh:
        fh.write("# log_N log_value_err\n")
        for n, e in zip(res.Ns, res.value_err):
            if e > 0:
                fh.write(f"{np.log(n)!r} {np.log(e)!r}\n")
