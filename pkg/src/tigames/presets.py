"""Ready-made game specifications for the benchmark families in :mod:`tigames.lq`."""

from __future__ import annotations

import numpy as np

from .core import ControlSet, GameSpec, quadratic_aggregator
from .lq import LQParams

# declared range for the mean-tracking functional; simulated states never get close
PHI_CAP = 10.0


def _terminal(gamma):
    def g(x, law):
        return x - 0.5 * gamma * x * x
    return g


def _capped_identity(cap):
    return lambda x: np.clip(x, -cap, cap)


def _zero_functional(law):
    return 0.0


def _control_set(p: LQParams, grid_points: int) -> ControlSet:
    return ControlSet(-p.abar, p.abar, grid_points, refine=True)


def ex1_spec(p: LQParams, grid_points: int = 401, x0: float = 0.0) -> GameSpec:
    """Two players; each earns the other's squared control minus its own."""

    def running(t, x, law, a):
        return np.sum(law.controls**2, axis=-1) - 2.0 * a * a

    return GameSpec(
        num_players=2, drift=lambda t, x, law, a: a, running=running, terminal=_terminal(p.gamma),
        aggregator=quadratic_aggregator(mm=p.gamma), phi1=_capped_identity(PHI_CAP), phi2=_zero_functional,
        control_set=_control_set(p, grid_points), sigma=p.sigma, x0=x0, bound_b=p.abar,
        bound_phi1=PHI_CAP, bound_phi2=1.0, name="ex1",
    )


def ex2_spec(p: LQParams, grid_points: int = 401, x0: float = 0.0) -> GameSpec:
    """Two players; each earns ``a^2/2 - (a - a_other)^2``."""

    def running(t, x, law, a):
        other = np.sum(law.controls, axis=-1) - a
        return 0.5 * a * a - (a - other) ** 2

    return GameSpec(
        num_players=2, drift=lambda t, x, law, a: a, running=running, terminal=_terminal(p.gamma),
        aggregator=quadratic_aggregator(mm=p.gamma), phi1=_capped_identity(PHI_CAP), phi2=_zero_functional,
        control_set=_control_set(p, grid_points), sigma=p.sigma, x0=x0, bound_b=p.abar,
        bound_phi1=PHI_CAP, bound_phi2=1.0, name="ex2",
    )


def rep_spec(p: LQParams, num_players: int = None, grid_points: int = 401, x0: float = 0.0,
             closed_form_selector: bool = True) -> GameSpec:
    """Mean-reverting N-player game with interaction through mean state and mean control.

    With ``closed_form_selector`` the Hamiltonian maximizer ``P_A(z_own + kappa2/N)``
    is supplied; otherwise it is found numerically.
    """
    n = p.N if num_players is None else int(num_players)
    k, k1, k2 = p.k, p.kappa1, p.kappa2

    def drift(t, x, law, a):
        return a - k * x

    def running(t, x, law, a):
        return -0.5 * a * a + k1 * law.mean_state() + k2 * law.mean_control()

    def selector(inp, aleph):
        return inp.z[:, inp.player] + aleph

    return GameSpec(
        num_players=n, drift=drift, running=running, terminal=_terminal(p.gamma),
        aggregator=quadratic_aggregator(mm=p.gamma), phi1=_capped_identity(PHI_CAP), phi2=_zero_functional,
        control_set=_control_set(p, grid_points), sigma=p.sigma, x0=x0,
        lambda_max=selector if closed_form_selector else None, aleph=k2 / n,
        bound_b=p.abar + k * PHI_CAP, bound_phi1=PHI_CAP, bound_phi2=1.0, dissipativity=p.sigma * k, name="rep",
    )


def rep_meanfield_spec(p: LQParams, grid_points: int = 401, x0: float = 0.0,
                       closed_form_selector: bool = True) -> GameSpec:
    """Representative-agent version of :func:`rep_spec`; the law argument is the population flow."""
    spec = rep_spec(p, 1, grid_points, x0, closed_form_selector)
    spec.aleph = 0.0
    spec.name = "rep-meanfield"
    return spec


def custom_spec(table: dict, num_players: int, sigma: float = 1.0, abar: float = 10.0, x0: float = 0.0,
                grid_points: int = 401) -> GameSpec:
    """Symmetric game built from a table of polynomial coefficients.

    ``table`` holds ``drift``, ``running``, ``terminal`` and ``aggregator``
    blocks (missing entries are zero) plus ``phi1_cap``, ``phi2_mean`` and
    ``phi2_cap``. Mean terms read the law argument, so the same table also
    serves as a representative-agent game with ``num_players=1``.
    """
    d = {k: float(v) for k, v in table.get("drift", {}).items()}
    r = {k: float(v) for k, v in table.get("running", {}).items()}
    g = {k: float(v) for k, v in table.get("terminal", {}).items()}
    agg = {k: float(v) for k, v in table.get("aggregator", {}).items()}
    cap1 = float(table.get("phi1_cap", PHI_CAP))
    mean2 = float(table.get("phi2_mean", 0.0))
    cap2 = float(table.get("phi2_cap", 1.0))

    def drift(t, x, law, a):
        b = d.get("const", 0.0) + d.get("control", 0.0) * a + d.get("state", 0.0) * x
        if d.get("mean_state", 0.0):
            b = b + d["mean_state"] * law.mean_state()
        if d.get("mean_control", 0.0):
            b = b + d["mean_control"] * law.mean_control()
        return b

    def running(t, x, law, a):
        f = (r.get("const", 0.0) + r.get("control", 0.0) * a + r.get("control_sq", 0.0) * a * a
             + r.get("state", 0.0) * x + r.get("state_sq", 0.0) * x * x)
        if r.get("mean_state", 0.0):
            f = f + r["mean_state"] * law.mean_state()
        if r.get("mean_control", 0.0):
            f = f + r["mean_control"] * law.mean_control()
        if r.get("others_control_sq", 0.0):
            f = f + r["others_control_sq"] * (np.sum(law.controls**2, axis=-1) - a * a)
        return f

    def terminal(x, law):
        return g.get("state", 0.0) * x + g.get("state_sq", 0.0) * x * x

    def phi2(law):
        return np.clip(mean2 * law.mean_state(), -cap2, cap2)

    bound_b = (abs(d.get("const", 0.0)) + (abs(d.get("control", 0.0)) + abs(d.get("mean_control", 0.0))) * abar
               + (abs(d.get("state", 0.0)) + abs(d.get("mean_state", 0.0))) * cap1)
    return GameSpec(
        num_players=int(num_players), drift=drift, running=running, terminal=terminal,
        aggregator=quadratic_aggregator(**{k: agg.get(k, 0.0) for k in ("mm", "mn", "nn", "m", "n")}),
        phi1=_capped_identity(cap1), phi2=phi2, control_set=ControlSet(-abar, abar, grid_points, refine=True),
        sigma=sigma, x0=x0, bound_b=max(bound_b, 1e-12), bound_phi1=cap1, bound_phi2=cap2, name="custom",
    )
