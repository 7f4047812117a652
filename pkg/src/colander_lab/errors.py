"""Exception hierarchy shared by all colander_lab modules."""


class ColanderError(Exception):
    """Base class for every error raised by this package."""


class DomainError(ColanderError, ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class ProfileError(ColanderError, ValueError):
    """An (eps, R) profile fails one of its admissibility checks."""


class PreconditionError(ColanderError, ValueError):
    """A hypothesis required by a claim or estimate does not hold."""


class GeometryError(ColanderError):
    """A geometric construction (packing, covering, placement) is infeasible."""


class ConfigError(ColanderError, ValueError):
    pass


class SolverError(ColanderError, RuntimeError):
    pass


class UnsupportedDimension(ColanderError, ValueError):
    pass


class AlphaError(ColanderError):
    """Layer hitting probabilities reach 1, so no alpha > 1 exists."""


class FitError(ColanderError):
    pass


class ConstructionInfeasible(ColanderError):
    def __init__(self, message, shell=None):
        super().__init__(message)
        self.shell = shell
