"""Exception hierarchy shared across the package.

Validation problems (bad configs, malformed files, inconsistent arguments)
map to CLI exit code 1; numerical failures map to exit code 2.
"""

from __future__ import annotations


class CharuqError(Exception):
    pass


class ValidationError(CharuqError):
    pass


class ParseError(ValidationError):
    """Malformed input file; message carries row/column location."""


class OutOfRangeError(ValidationError):
    """Requested coordinate outside the discretized domain."""


class ConfigurationError(ValidationError):
    pass


class NumericalError(CharuqError):
    pass


class SolverDivergenceError(NumericalError):
    def __init__(self, message: str, step_index: int):
        super().__init__(message)
        self.step_index = step_index


class FitError(NumericalError):
    pass


class DegenerateDistributionError(NumericalError):
    pass


class EvidenceUnderflowError(NumericalError):
    pass
