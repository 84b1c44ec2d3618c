"""Exception hierarchy shared by the solvers and the CLI."""


class TigamesError(Exception):
    """Base class for every error raised by the package."""


class SpecError(TigamesError, ValueError):
    """A game specification or its inputs are inconsistent."""


class EmptyEnsembleError(TigamesError, ValueError):
    """An empirical measure or particle cloud has no atoms."""


class SimulationError(TigamesError, RuntimeError):
    """Forward simulation produced a non-finite or exploding state."""

    def __init__(self, message, path_index=None):
        super().__init__(message)
        self.path_index = path_index


class RegressionError(TigamesError, RuntimeError):
    """A least-squares design stayed rank deficient after regularization."""

    def __init__(self, message, condition_number=None):
        super().__init__(message)
        self.condition_number = condition_number


class GridError(TigamesError, ValueError):
    """A requested time does not lie on the simulation grid."""


class IsaacsViolation(TigamesError, RuntimeError):
    """The inf-sup and sup-inf of a zero-sum Hamiltonian disagree."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class ConfigError(TigamesError, ValueError):
    """An experiment configuration failed validation."""

    def __init__(self, errors):
        if isinstance(errors, str):
            errors = [errors]
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))
