"""Exception hierarchy shared by all modules.

Everything raised on bad input or a failed numerical contract derives from
:class:`VolterraError`, so callers (and the CLI) can catch one type.
"""


class VolterraError(Exception):
    """Base class for package errors."""


class DomainError(VolterraError, ValueError):
    """An argument lies outside the domain where the quantity is defined."""


class OrderingError(DomainError):
    """Integration limits are not ordered as ``0 <= s0 <= s1 <= t``."""


class InputError(VolterraError, ValueError):
    """Malformed or empty input data."""


class AlignmentError(VolterraError, ValueError):
    """Two time grids that must coincide do not."""


class SimulationDivergedError(VolterraError, ArithmeticError):
    """A simulated path left the finite range.

    Attributes
    ----------
    index : int
        First fine-grid index at which the state was non-finite or exceeded
        the divergence guard.
    """

    def __init__(self, index, message=None):
        self.index = int(index)
        super().__init__(message or f"simulation diverged at fine-grid index {self.index}")


class WeightError(VolterraError, ValueError):
    """The contrast weight matrix is not symmetric positive definite."""


class RankDeficiencyError(VolterraError, ArithmeticError):
    def __init__(self, cond, message=None):
        self.cond = float(cond)
        super().__init__(message or f"normal matrix is singular (condition number {self.cond:.3e})")


class FisherSingularError(VolterraError, ArithmeticError):
    """The information matrix is not invertible (identifiability fails)."""


class ContractError(VolterraError):
    """A result was requested outside the setting where it is valid."""


class RegressionError(VolterraError, ValueError):
    """A log-log rate regression has too few usable points."""


class CellError(VolterraError):
    """Every replication of a Monte Carlo cell failed."""
