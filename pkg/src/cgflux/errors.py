"""Exception hierarchy for the cgflux pipeline."""


class CgfluxError(Exception):
    """Base class for all cgflux errors."""


class InvalidResolutionError(CgfluxError):
    """Mesh resolution must be a positive integer."""


class UnsupportedOrderError(CgfluxError):
    """Polynomial order outside {1, 2}."""


class UnsupportedDegreeError(CgfluxError):
    """Quadrature degree beyond the implemented rules."""


class NonConvergenceError(CgfluxError):
    """Iterative solver exhausted its iteration budget."""

    def __init__(self, message, residual, iterations):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class CompatibilityError(CgfluxError):
    """Right-hand side of a singular Neumann system is not orthogonal
    to the constant nullspace."""

    def __init__(self, message, defect):
        super().__init__(message)
        self.defect = defect


class CoefficientError(CgfluxError):
    """Nonpositive (or out-of-domain) coefficient sampled during assembly."""

    def __init__(self, message, location=None):
        super().__init__(message)
        self.location = location


class CflError(CgfluxError):
    """Requested transport step exceeds the admissible CFL step."""

    def __init__(self, message, admissible_dt):
        super().__init__(message)
        self.admissible_dt = admissible_dt


class ConservationGateError(CgfluxError):
    """Post-processed fluxes failed the local-conservation gate."""

    def __init__(self, message, max_lce):
        super().__init__(message)
        self.max_lce = max_lce


class UnknownProblemError(CgfluxError):
    """Requested problem name is not in the registry."""


class ConfigError(CgfluxError):
    """Invalid run configuration."""
