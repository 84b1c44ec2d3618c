"""Command-line runner: ``tigames <command> --config path [--seed u64] [--out dir]``.

Exit codes: 0 all checks pass, 1 a check failed, 2 configuration error,
3 a solver did not converge or failed.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import asdict, dataclass, field
from typing import List, Optional

import numpy as np

from .config import COMMANDS, ExperimentConfig, load_config, serialize_config
from .convergence import SweepConfig, run_sweep, write_plot_data, write_sweep_csv
from .core import TimeGrid
from .errors import ConfigError, IsaacsViolation, TigamesError
from .lq import LQParams, ex1_solution, ex2_solution, rep_control_unprojected, rep_meanfield, rep_nplayer
from .meanfield import OuterConfig, solve_meanfield, write_outer_csv
from .nplayer import PicardConfig, appendix_diagnostics, solve_nplayer, write_step_csv
from .presets import custom_spec, ex1_spec, ex2_spec, rep_meanfield_spec, rep_spec
from .regression import RegressionBasis
from .rng import RngSpec
from .zerosum import (antisymmetry_check, lq_zero_sum, lq_zero_sum_value, one_sided_solve, solve_zero_sum,
                      write_zero_sum_csv)

EXIT_PASS, EXIT_FAIL, EXIT_CONFIG, EXIT_SOLVER = 0, 1, 2, 3


@dataclass
class CheckResult:
    name: str
    value: float
    tolerance: float
    passed: bool


@dataclass
class Verdict:
    command: str
    checks: List[CheckResult] = field(default_factory=list)
    notes: List[str] = field(default_factory=list)
    solver_failed: bool = False

    def add(self, name, value, tolerance, passed):
        self.checks.append(CheckResult(name, float(value), float(tolerance), bool(passed)))

    @property
    def passed(self) -> bool:
        return not self.solver_failed and all(c.passed for c in self.checks)

    @property
    def exit_code(self) -> int:
        if self.solver_failed:
            return EXIT_SOLVER
        return EXIT_PASS if self.passed else EXIT_FAIL

    def to_json(self) -> str:
        d = {"command": self.command, "passed": self.passed, "exit_code": self.exit_code,
             "checks": [asdict(c) for c in self.checks], "notes": self.notes}
        return json.dumps(d, indent=2, allow_nan=True)


def _params(game, players=None) -> LQParams:
    return LQParams(sigma=game["sigma"], gamma=game["gamma"], T=game["T"], k=game["k"], kappa1=game["kappa1"],
                    kappa2=game["kappa2"], abar=game["abar"], N=players or game.get("players", 2))


def _basis(num):
    return RegressionBasis(degree=num["basis_degree"], ridge=num["ridge"])


def _picard(num):
    return PicardConfig(max_iters=num["picard_max_iters"], damping=num["picard_damping"], tol=num["picard_tol"])


def build_game(cfg: ExperimentConfig, meanfield: bool = False):
    game = cfg.game
    preset = game["preset"]
    p = _params(game)
    if preset == "ex1":
        return ex1_spec(p, game["grid_points"], game["x0"])
    if preset == "ex2":
        return ex2_spec(p, game["grid_points"], game["x0"])
    if preset == "rep51":
        if meanfield:
            return rep_meanfield_spec(p, game["grid_points"], game["x0"])
        return rep_spec(p, game["players"], game["grid_points"], game["x0"])
    if preset == "custom":
        return custom_spec(game["coefficients"], 1 if meanfield else game["players"], game["sigma"], game["abar"],
                           game["x0"], game["grid_points"])
    raise ConfigError(f"game.preset: {preset} is not a general-sum game")


def _require(cfg, allowed, command):
    if cfg.game["preset"] not in allowed:
        raise ConfigError(f"game.preset: command {command} accepts {', '.join(allowed)}")


def _solve_nplayer(cfg, spec):
    num = cfg.numerics
    grid = TimeGrid(cfg.game["T"], num["steps"])
    return solve_nplayer(spec, grid, num["paths"], _basis(num), _picard(num), RngSpec(cfg.seed),
                         fixed_point_paths=num["fixed_point_paths"])


def _control_rms(sol, oracle_of_t):
    """Largest over grid times and players of the path-RMS control error."""
    worst = 0.0
    for k in range(sol.grid.steps):
        err = sol.controls[:, :, k] - oracle_of_t(sol.grid.time(k))
        worst = max(worst, float(np.max(np.sqrt(np.mean(err**2, axis=0)))))
    return worst


def cmd_lq_verify(cfg, out, verdict):
    _require(cfg, ("ex1", "ex2", "rep51"), "lq-verify")
    game = cfg.game
    p = _params(game)
    spec = build_game(cfg)
    sol = _solve_nplayer(cfg, spec)
    write_step_csv(sol, os.path.join(out, "steps.csv"))
    if not sol.converged:
        verdict.solver_failed = True
        verdict.notes.append(f"Picard iteration stopped after {sol.report.iterations} iterations")
    y0 = sol.Y[:, :, 0].mean(axis=0)
    x0 = game["x0"]
    if game["preset"] == "ex1":
        target = float(ex1_solution(p, 0.0, x0).Y)
        alpha = lambda t: ex1_solution(p, t, x0).alpha
    elif game["preset"] == "ex2":
        target = float(ex2_solution(p, 0.0, x0).Y)
        alpha = lambda t: ex2_solution(p, t, x0).alpha
    else:
        n = spec.num_players
        target = float(rep_nplayer(p, 0.0, np.full(n, x0), cfg.numerics["quadrature_panels"]).v[0])
        alpha = lambda t: float(p.project(rep_control_unprojected(p, t, n)))
    tol = max(0.02 * abs(target), 0.01)
    for i, y in enumerate(y0):
        verdict.add(f"Y0_player{i}", abs(y - target), tol, abs(y - target) <= tol)
    rms = _control_rms(sol, alpha)
    verdict.add("control_rms_error", rms, 0.05, rms <= 0.05)


def cmd_solve_nplayer(cfg, out, verdict):
    spec = build_game(cfg)
    sol = _solve_nplayer(cfg, spec)
    write_step_csv(sol, os.path.join(out, "steps.csv"))
    if not sol.converged:
        verdict.solver_failed = True
        verdict.notes.append(f"Picard iteration stopped after {sol.report.iterations} iterations")
    res = float(np.max(sol.report.residual_trace))
    verdict.add("fixed_point_residual", res, 1e-6, res <= 1e-6)
    for c in appendix_diagnostics(sol):
        verdict.add(c.name, c.value, c.bound, c.passed)
    verdict.notes.append("Y0 per player: " + ", ".join(repr(float(v)) for v in sol.Y[:, :, 0].mean(axis=0)))


def cmd_solve_meanfield(cfg, out, verdict):
    _require(cfg, ("rep51", "custom"), "solve-meanfield")
    num, game = cfg.numerics, cfg.game
    spec = build_game(cfg, meanfield=True)
    grid = TimeGrid(game["T"], num["steps"])
    outer = OuterConfig(num["outer_max_iters"], num["outer_tol_scale"], num["outer_damping"])
    sol = solve_meanfield(spec, grid, num["particles"], RegressionBasis(num["basis_degree"], num["ridge"], False),
                          outer, RngSpec(cfg.seed), fixed_point_paths=num["fixed_point_paths"])
    write_outer_csv(sol, os.path.join(out, "outer.csv"))
    rep = sol.report
    if not sol.converged:
        verdict.solver_failed = True
        verdict.notes.append(f"outer iteration stopped after {rep.iterations} iterations")
    verdict.add("final_flow_distance", rep.distance_trace[-1], rep.tolerance, rep.distance_trace[-1] < rep.tolerance)
    y0 = float(sol.Y[:, 0].mean())
    if game["preset"] == "rep51":
        target = float(rep_meanfield(_params(game, 1), 0.0, game["x0"], panels=num["quadrature_panels"]).Y)
        tol = 0.02 * abs(target)
        verdict.add("Y0_vs_closed_form", abs(y0 - target), tol, abs(y0 - target) <= tol)
    verdict.notes.append(f"Y0 = {y0!r}")


def cmd_zerosum(cfg, out, verdict):
    _require(cfg, ("lq-zero-sum",), "zerosum")
    num, game = cfg.numerics, cfg.game
    spec = lq_zero_sum(game["sigma"], game["kappa"], game["weight"], game["abar"], game["grid_points"])
    spec.x0 = game["x0"]
    grid = TimeGrid(game["T"], num["steps"])
    try:
        sol = solve_zero_sum(spec, grid, num["paths"], RegressionBasis(num["basis_degree"], num["ridge"], False),
                             RngSpec(cfg.seed))
    except IsaacsViolation as exc:
        verdict.notes.append(f"refused: {exc}")
        verdict.add("isaacs_gap", exc.report.max_gap if exc.report is not None else float("nan"), 0.0, False)
        return
    first, second = one_sided_solve(sol, "max"), one_sided_solve(sol, "min")
    write_zero_sum_csv(sol, os.path.join(out, "zerosum.csv"), first, second)
    verdict.add("isaacs_gap", sol.report.max_gap, 0.0, sol.report.max_gap == 0.0)
    dy, dz = antisymmetry_check(first, second)
    verdict.add("antisymmetry_Y", dy, 3.0 * sol.payoff_se, dy <= 3.0 * sol.payoff_se)
    verdict.add("antisymmetry_Z", dz, 3.0 * sol.payoff_se, dz <= 3.0 * sol.payoff_se)
    target = float(lq_zero_sum_value(game["sigma"], game["kappa"], game["weight"], 0.0, game["x0"], game["T"]))
    y0 = float(sol.Y[:, 0].mean())
    tol = max(0.02 * abs(target), 0.01)
    verdict.add("Y0_vs_closed_form", abs(y0 - target), tol, abs(y0 - target) <= tol)


def cmd_converge(cfg, out, verdict):
    _require(cfg, ("rep51",), "converge")
    num, sw, game = cfg.numerics, cfg.sweep, cfg.game
    scfg = SweepConfig(mode=sw["mode"], panels=num["quadrature_panels"], steps=num["steps"], paths=num["paths"],
                       particles=num["particles"], reference_particles=num["reference_particles"],
                       gamma_reps=sw["gamma_reps"], compute_gamma=sw["gamma_statistic"], pbar=sw["pbar"],
                       eta_constant=sw["eta_constant"], workers=num["workers"], seed=cfg.seed)
    res = run_sweep(_params(game), sw["N"], scfg, game["x0"])
    write_sweep_csv(res, os.path.join(out, "sweep.csv"), timings=sw["timings"])
    write_plot_data(res, os.path.join(out, "sweep_plot.dat"))
    if res.failures:
        verdict.solver_failed = True
        for n, msg in sorted(res.failures.items()):
            verdict.notes.append(f"N={n}: {msg}")
    if res.rate is None:
        verdict.notes.append(res.note or "slope fit skipped")
        return
    verdict.add("value_error_slope_low", res.rate.slope, -1.2, res.rate.slope >= -1.2)
    verdict.add("value_error_slope_high", res.rate.slope, -0.9, res.rate.slope <= -0.9)
    verdict.add("bound_shape_constant", res.bound_constant, res.bound_constant, bool(res.bound_ok))


HANDLERS = {"lq-verify": cmd_lq_verify, "solve-nplayer": cmd_solve_nplayer, "solve-meanfield": cmd_solve_meanfield,
            "zerosum": cmd_zerosum, "converge": cmd_converge}


def run(cfg: ExperimentConfig, command: Optional[str] = None) -> Verdict:
    """Dispatch one experiment; writes its CSVs, ``config.json`` and ``verdict.json`` into ``cfg.output``."""
    command = command or cfg.command
    if command not in HANDLERS:
        raise ConfigError(f"command: must be one of {', '.join(COMMANDS)}")
    if cfg.command is not None and cfg.command != command:
        raise ConfigError(f"command: config is for {cfg.command}, not {command}")
    out = cfg.output
    os.makedirs(out, exist_ok=True)
    verdict = Verdict(command)
    try:
        HANDLERS[command](cfg, out, verdict)
    except ConfigError:
        raise
    except TigamesError as exc:
        verdict.solver_failed = True
        verdict.notes.append(f"{type(exc).__name__}: {exc}")
    with open(os.path.join(out, "config.json"), "w") as fh:
        fh.write(serialize_config(cfg) + "\n")
    with open(os.path.join(out, "verdict.json"), "w") as fh:
        fh.write(verdict.to_json() + "\n")
    return verdict


def _u64(text):
    try:
        v = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError("seed must be an integer") from None
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must lie in [0, 2^64)")
    return v


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="tigames", description="Equilibrium solvers for time-inconsistent games.")
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", required=True, help="JSON experiment configuration")
    parser.add_argument("--seed", type=_u64, help="override the configured seed")
    parser.add_argument("--out", help="override the output directory")
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_PASS
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg.seed = args.seed
        if args.out is not None:
            cfg.output = args.out
        verdict = run(cfg, args.command)
    except ConfigError as exc:
        for err in exc.errors:
            print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    status = "PASS" if verdict.passed else ("SOLVER FAILURE" if verdict.solver_failed else "FAIL")
    for c in verdict.checks:
        print(f"{'ok  ' if c.passed else 'FAIL'} {c.name}: {c.value:.6g} (tolerance {c.tolerance:.6g})")
    for note in verdict.notes:
        print(f"note: {note}")
    print(f"tigames {args.command}: {status}")
    return verdict.exit_code


if __name__ == "__main__":
    sys.exit(main())
