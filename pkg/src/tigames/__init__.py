"""Equilibrium solvers for time-inconsistent N-player, mean-field and zero-sum games.

The main entry points are :func:`solve_nplayer`, :func:`solve_meanfield`,
:func:`solve_zero_sum` and :func:`run_sweep`; the ``tigames`` command wraps
them behind JSON experiment configs.
"""

from .convergence import RNSchedule, SweepConfig, SweepResult, estimate_rate, eta_statistic, gamma_statistic, run_sweep
from .core import (Aggregator, ControlSet, EmpiricalMeasure, GameSpec, TimeGrid, argmax_control, empirical_measure,
                   fixed_point_residual, hamiltonian_fixed_point, hamiltonian_i, project_to_A, quadratic_aggregator,
                   wasserstein_1d)
from .errors import (ConfigError, EmptyEnsembleError, GridError, IsaacsViolation, RegressionError, SimulationError,
                     SpecError, TigamesError)
from .lq import LQParams
from .meanfield import LawFlow, MeanFieldSolution, OuterConfig, lawflow_distance, n_star, solve_meanfield
from .nplayer import EquilibriumSolution, PicardConfig, epsilon_deviation_test, solve_nplayer, value_process
from .presets import custom_spec, ex1_spec, ex2_spec, rep_meanfield_spec, rep_spec
from .regression import RegressionBasis
from .rng import RngSpec
from .sde import PathEnsemble, simulate_paths
from .zerosum import ZeroSumSpec, antisymmetry_check, isaacs_gap, lq_zero_sum, one_sided_solve, solve_zero_sum

__version__ = "0.1.0"
