"""Exception taxonomy shared across the package.

ValueError subclasses signal bad inputs (domain / model specification
problems, CLI exit code 2); NumericalError signals a solver breakdown on
valid inputs (CLI exit code 3).
"""


class ModelError(ValueError):
    """Inconsistent model specification (dimensions, parameter ranges)."""


class NumericalError(RuntimeError):
    """A numerical procedure failed (factorization, mass location, Newton)."""
