"""Exception hierarchy shared by all powmesh modules."""


class PowmeshError(Exception):
    """Base class for every error raised by powmesh."""


class ParseError(PowmeshError, ValueError):
    """An input file could not be parsed."""


class ValidationError(PowmeshError, ValueError):
    """An input parsed but violates a domain invariant."""


class InfeasibleTopology(PowmeshError):
    """The degree profile cannot yield a connected network."""


class NoMiners(PowmeshError):
    """A simulation was requested on a network without mining power."""


class IncompleteTrace(PowmeshError):
    """Statistics were requested from a trace that was never closed."""


class Infeasible(PowmeshError):
    """A partition request cannot be satisfied (e.g. too few miners)."""


class NoFeasiblePair(PowmeshError):
    """No candidate (block size, interval) pair satisfied the bounds.

    ``plan`` carries the least-violating candidate (its report does not pass)
    and ``grid`` the full list of evaluated cells.
    """

    def __init__(self, message, plan=None, grid=None):
        super().__init__(message)
        self.plan = plan
        self.grid = grid or []


class BoundsViolation(PowmeshError):
    """A scenario's own metric report failed pre-validation."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report
