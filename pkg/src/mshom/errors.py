"""Exception types shared across the package.

Every failure that a caller may want to script against carries structured
fields rather than only a message, so the CLI can emit uniform diagnostics
(code, module, message) and map them onto its exit-code contract.
"""

from __future__ import annotations


class MshomError(Exception):
    """Base class for all package-level errors."""

    module = "mshom"


class ConfigError(MshomError):
    """Invalid or inconsistent configuration input."""

    module = "config"


class ScaleRejection(MshomError):
    """A scale-function pair falls outside the classifiable set.

    Raised when the joint well-separatedness precondition fails or when a
    pair cannot be assigned a regime.  ``stage`` names the check that
    rejected the pair, for diagnostics.
    """

    module = "scales"

    def __init__(self, message: str, stage: str = "classify"):
        super().__init__(message)
        self.stage = stage


class NonConvergence(MshomError):
    """An iterative solve hit its iteration budget before reaching tolerance.

    Signals either claimed monotonicity/growth constants that do not hold
    for the supplied flux, or a grid too coarse for the requested tolerance.
    """

    module = "solver"

    def __init__(self, message: str, iterations: int, residual: float, loop: str = "fixed_point"):
        super().__init__(message)
        self.iterations = iterations
        self.residual = residual
        self.loop = loop


class UnderResolved(MshomError):
    """A macroscopic mesh does not resolve the requested microstructure."""

    module = "macrosolver"

    def __init__(self, message: str, required_nx: int, required_nt: int):
        super().__init__(message)
        self.required_nx = required_nx
        self.required_nt = required_nt
