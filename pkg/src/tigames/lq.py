"""Closed-form solutions of the linear-quadratic benchmark games.

Three families are covered:

* ``ex1``: two players, ``b = a``, running reward ``a_other^2 - a_own^2``,
  terminal ``x - gamma x^2 / 2`` and ``G(m) = gamma m^2 / 2``.
* ``ex2``: as ``ex1`` with running reward ``a^2/2 - (a - a_other)^2``.
* ``rep``: N symmetric players with mean-reverting drift ``a - k x``,
  running reward ``-a^2/2 + kappa1 mean(x) + kappa2 mean(a)``, terminal
  ``x - gamma x^2 / 2`` and ``G(m) = gamma m^2 / 2``, plus its mean-field limit.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

from .errors import SpecError


@dataclass(frozen=True)
class LQParams:
    sigma: float = 1.0
    gamma: float = 0.5
    T: float = 1.0
    k: float = 1.0
    kappa1: float = 0.0
    kappa2: float = 0.0
    abar: float = 10.0
    N: int = 2

    def __post_init__(self):
        if not self.sigma > 0:
            raise SpecError("sigma must be positive")
        if not self.T > 0:
            raise SpecError("T must be positive")
        if not self.abar > 0:
            raise SpecError("abar must be positive")
        if self.gamma < 0:
            raise SpecError("gamma must be nonnegative")
        if int(self.N) < 1:
            raise SpecError("num_players must be >= 1")

    def project(self, a):
        return np.clip(a, -self.abar, self.abar)


def _check_time(p: LQParams, t):
    if np.any(np.asarray(t) > p.T + 1e-12):
        raise SpecError("time beyond the horizon")


class Ex1Closed(NamedTuple):
    Y: object
    Z_own: float
    Z_cross: float
    Mstar: object
    Zm_own: float
    alpha: float


class Ex2Closed(NamedTuple):
    Y: object
    Z_own: float
    Mstar: object
    alpha: float


def ex1_solution(p: LQParams, t, x) -> Ex1Closed:
    _check_time(p, t)
    tau = p.T - np.asarray(t, dtype=float)
    s2 = p.sigma**2
    y = x + 0.5 * s2 * (1.0 - p.gamma) * tau
    m = x + 0.5 * s2 * tau
    return Ex1Closed(y, p.sigma, 0.0, m, p.sigma, p.sigma / 2.0)


def ex1_mkv_value(p: LQParams, t, mu, s2) -> float:
    """Value of the McKean-Vlasov control problem at a law with mean ``mu`` and second moment ``s2``."""
    _check_time(p, t)
    if s2 < mu * mu - 1e-12 * max(1.0, mu * mu):
        raise SpecError("second moment below squared mean")
    return mu - 0.5 * p.gamma * s2 + 0.5 * p.gamma * mu * mu + 0.5 * p.sigma**2 * (1.0 - p.gamma) * (p.T - t)


def ex2_solution(p: LQParams, t, x) -> Ex2Closed:
    _check_time(p, t)
    tau = p.T - np.asarray(t, dtype=float)
    s2 = p.sigma**2
    return Ex2Closed(x - 0.5 * s2 * (1.0 + p.gamma) * tau, p.sigma, x - s2 * tau, -p.sigma)


# ---------------------------------------------------------------------------
# mean-reverting N-player family and its mean-field limit


def _decay(p: LQParams, t):
    return np.exp(p.sigma * p.k * (np.asarray(t, dtype=float) - p.T))


def rep_interaction(p: LQParams, t):
    """``kappa1 (1 - decay) / k + kappa2``, the N-independent interaction weight."""
    return p.kappa1 / p.k * (1.0 - _decay(p, t)) + p.kappa2


def rep_control_unprojected(p: LQParams, t, N: Optional[int] = None):
    """Equilibrium control of the N-player game before projection."""
    N = p.N if N is None else N
    e = _decay(p, t)
    return p.sigma * e + p.kappa1 / (p.k * N) * (1.0 - e) + p.kappa2 / N


def _eta_rate(p: LQParams, s, which: str, N: int):
    e = _decay(p, s)
    a = rep_control_unprojected(p, s, N)
    if which == "etaN":
        return -a * (0.5 * p.sigma * e + rep_interaction(p, s) * (1.0 - 1.0 / (2.0 * N))) + 0.5 * p.gamma * p.sigma**2 * e * e
    if which == "etamN":
        return -p.sigma * a * e
    raise SpecError("which must be 'etaN' or 'etamN'")


def simpson(fun, a: float, b: float, panels: int) -> float:
    """Composite Simpson rule with ``panels`` (rounded up to even) sub-intervals."""
    panels = int(panels) + (int(panels) % 2)
    if b == a:
        return 0.0
    s = np.linspace(a, b, panels + 1)
    w = np.ones(panels + 1)
    w[1:-1:2] = 4.0
    w[2:-1:2] = 2.0
    return float((b - a) / (3.0 * panels) * np.dot(w, fun(s)))


def rep_eta(p: LQParams, t: float, which: str = "etaN", panels: int = 512, N: Optional[int] = None) -> float:
    """Time-dependent offset of the N-player value (``etaN``) or of the mean-tracking value (``etamN``).

    Integrates the backward ODE with zero terminal value by Simpson's rule.
    """
    if panels < 10:
        raise SpecError("need at least 10 quadrature panels")
    _check_time(p, t)
    N = p.N if N is None else int(N)
    return -simpson(lambda s: _eta_rate(p, s, which, N), float(t), p.T, panels)


def rep_eta_rk4(p: LQParams, t: float, which: str = "etaN", steps: int = 4096, N: Optional[int] = None) -> float:
    """Same offset via classical RK4 on the ODE, integrated backward from the horizon."""
    N = p.N if N is None else int(N)
    h = (p.T - t) / steps
    y = 0.0
    s = p.T
    for _ in range(steps):
        # dy/ds = rate(s); stepping from s to s - h
        k1 = _eta_rate(p, s, which, N)
        k2 = _eta_rate(p, s - h / 2, which, N)
        k4 = _eta_rate(p, s - h, which, N)
        y -= h / 6.0 * (k1 + 4.0 * k2 + k4)
        s -= h
    return float(y)


class RepNPlayer(NamedTuple):
    v: np.ndarray
    v_mean: np.ndarray
    alpha: float
    Z: np.ndarray
    Zm: np.ndarray


def rep_nplayer(p: LQParams, t: float, x, panels: int = 512) -> RepNPlayer:
    """Values, equilibrium control and integrand matrices of the N-player game at ``(t, x)``."""
    _check_time(p, t)
    x = np.asarray(x, dtype=float)
    N = x.size
    e = float(_decay(p, t))
    eta = rep_eta(p, t, "etaN", panels, N)
    eta_m = rep_eta(p, t, "etamN", panels, N)
    v = e * x + p.kappa1 / (p.sigma * p.k * N) * (1.0 - e) * x.sum() + eta
    v_m = e * x + eta_m
    alpha = float(p.project(rep_control_unprojected(p, t, N)))
    eye = np.eye(N)
    z = p.sigma * e * eye + p.kappa1 / (p.k * N) * (1.0 - e)
    zm = p.sigma * e * eye
    return RepNPlayer(v, v_m, alpha, z, zm)


def rep_meanfield_mean(p: LQParams, t, x0: float):
    """Mean of the mean-field equilibrium state started at ``x0`` (projection inactive)."""
    t = np.asarray(t, dtype=float)
    sk = p.sigma * p.k
    return np.exp(-sk * t) * x0 + p.sigma / (2.0 * p.k) * (np.exp(sk * (t - p.T)) - np.exp(-sk * (t + p.T)))


def rep_state_variance(p: LQParams, t, var0: float = 0.0):
    """Variance of the controlled state under a deterministic control, from initial variance ``var0``."""
    t = np.asarray(t, dtype=float)
    sk = p.sigma * p.k
    return p.sigma * (1.0 - np.exp(-2.0 * sk * t)) / (2.0 * p.k) + np.exp(-2.0 * sk * t) * var0


def rep_nplayer_mean(p: LQParams, t: float, x0: float, N: int, panels: int = 512) -> float:
    """Mean state of one player under the N-player equilibrium started at ``x0``."""
    sk = p.sigma * p.k
    if t == 0:
        return float(x0)
    integral = simpson(lambda r: np.exp(-sk * (t - r)) * p.sigma * p.project(rep_control_unprojected(p, r, N)), 0.0, t, panels)
    return float(np.exp(-sk * t) * x0 + integral)


def rep_meanfield_eta(p: LQParams, t: float, anchor: float, panels: int = 512, exponent: str = "s") -> float:
    """Offset of the mean-field value at time ``t``.

    ``anchor`` is the state mean entering the interaction term; passing the
    agent's own state gives the pointwise variant. ``exponent="t"`` evaluates the
    variance-penalty exponential at the outer time instead of the integration
    variable.
    """
    if exponent not in ("s", "t"):
        raise SpecError("exponent must be 's' or 't'")
    sk = p.sigma * p.k
    s2 = p.sigma**2

    def integrand(s):
        e = np.exp(sk * (s - p.T))
        pen = e * e if exponent == "s" else np.exp(2.0 * sk * (t - p.T)) * np.ones_like(s)
        inter = np.exp(-sk * (s - t)) * anchor + p.sigma / (2.0 * p.k) * (e - np.exp(-sk * (s + p.T - 2.0 * t)))
        return p.sigma * e * (0.5 * p.sigma * e + p.kappa2) + p.kappa1 * inter - 0.5 * p.gamma * s2 * pen

    return simpson(integrand, float(t), p.T, panels)


class RepMeanField(NamedTuple):
    Y: object
    Mstar: object
    Z: float
    Zm: float
    alpha: float
    eta: float


def rep_meanfield(p: LQParams, t: float, x, anchor=None, panels: int = 512, exponent: str = "s") -> RepMeanField:
    """Closed-form mean-field equilibrium quantities at ``(t, x)``; ``anchor`` defaults to ``x``."""
    _check_time(p, t)
    x = np.asarray(x, dtype=float)
    e = float(_decay(p, t))
    anchor = x if anchor is None else anchor
    eta = np.vectorize(lambda a: rep_meanfield_eta(p, t, float(a), panels, exponent))(anchor)
    eta = float(eta) if np.ndim(eta) == 0 else eta
    y = e * x + eta
    m = e * x + p.sigma / (2.0 * p.k) * (1.0 - e * e)
    z = p.sigma * e
    return RepMeanField(y, m, z, z, float(p.project(z)), eta)


def fit_bound_constant(errors, Ns) -> float:
    """Smallest ``c`` with ``error_N <= c (1/N + 1/N^2)`` across the sweep."""
    errors = np.asarray(errors, dtype=float)
    Ns = np.asarray(Ns, dtype=float)
    return float(np.max(errors / (1.0 / Ns + 1.0 / Ns**2)))


def rep_convergence_bound(N: float, constant: float) -> float:
    """Bound shape ``c (1/N + 1/N^2)``."""
    if N < 1:
        raise SpecError("N must be >= 1")
    return constant * (1.0 / N + 1.0 / N**2)


def rep_value_gap_u0(p: LQParams, N: int, x0: float = 0.0, panels: int = 512) -> float:
    """Exact gap between the N-player and mean-field values at time zero from a common ``x0``."""
    e = float(_decay(p, 0.0))
    vN = e * x0 + p.kappa1 / (p.sigma * p.k) * (1.0 - e) * x0 + rep_eta(p, 0.0, "etaN", panels, N)
    v = e * x0 + rep_meanfield_eta(p, 0.0, x0, panels)
    return float(vN - v)

