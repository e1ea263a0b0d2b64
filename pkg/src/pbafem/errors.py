"""Exception hierarchy shared by the package."""


class PbafemError(Exception):
    """Base class for all package errors."""


class ModelError(PbafemError):
    """Physical model is inconsistent (charge placement, coefficients)."""


class SingularityError(PbafemError):
    """A field was evaluated too close to a point charge."""


class MeshError(PbafemError):
    """Structural problem with a mesh (non-conforming, degenerate, ...)."""


class OverflowGuardError(PbafemError):
    """The argument of sinh/cosh left the admissible range."""

    def __init__(self, element, value, limit):
        self.element = int(element)
        self.value = float(value)
        self.limit = float(limit)
        super().__init__(
            f"|u_h + G| = {self.value:.6g} exceeds guard {self.limit:g} "
            f"in element {self.element}"
        )


class SolverError(PbafemError):
    """Linear or nonlinear solve failed."""


class ConfigError(PbafemError):
    """Malformed run configuration or missing input."""


class AssumptionError(PbafemError):
    """A grid assumption required by the theory is violated."""


class InvalidReferenceError(PbafemError):
    """A reference solution is inconsistent with the data it is compared to."""
