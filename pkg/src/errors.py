#!/usr/bin/env python3
"""
Exception hierarchy for the spectral pruning toolkit.

Contract errors (bad input, bad configuration, bad files) exit the CLI
with status 1; numeric errors (non-convergence, overflowing searches,
non-finite gradients) exit with status 2.
"""

from typing import Any, List, Optional


class RMTPruneError(Exception):
    """Root of every error raised on purpose by this package"""

    exit_code = 1


class ContractError(RMTPruneError, ValueError):
    """A precondition on the caller's input was violated"""

    exit_code = 1


class FormatError(ContractError):
    """File header or container structure is not what the reader expects"""


class TruncationError(ContractError):
    """Payload size disagrees with the sizes declared in the header"""


class DataError(ContractError):
    """Payload decoded but holds values the format forbids (NaN, Inf, bad labels)"""


class DimensionError(ContractError):
    """Shapes that must chain together do not"""


class DomainError(ContractError):
    """An argument lies outside the domain of a function"""


class ParameterError(ContractError):
    """A hyperparameter is out of range or leaves nothing to work on"""


class DegenerateInputError(ContractError):
    """Input carries no usable signal (all-zero data, all-zero spectrum)"""


class SpecError(ContractError):
    """Inconsistent planted-model settings"""


class ConfigError(ContractError):
    """Configuration file or override could not be applied"""


class UsageError(ContractError):
    """Command-line usage problem"""


class NumericError(RMTPruneError, ArithmeticError):
    """A numerical routine failed to produce a trustworthy result"""

    exit_code = 2


class SearchOverflowError(NumericError):
    """Pruning-factor search ran past the largest weight magnitude"""

    def __init__(self, message: str, achieved: int):
        super().__init__(message)
        self.achieved = achieved


class IterationLimitError(NumericError):
    """An iterative solver hit its sweep limit before converging"""

    def __init__(self, message: str, residual: float):
        super().__init__(message)
        self.residual = residual


class NonFiniteGradientError(NumericError):
    """Backpropagation produced NaN or Inf"""

    def __init__(self, message: str, layer: int):
        super().__init__(message)
        self.layer = layer


class CycleAbortedError(RMTPruneError):
    """A pruning cycle stopped part-way; completed work is attached"""

    def __init__(self, message: str, reports: List[Any], cause: Optional[BaseException] = None):
        super().__init__(message)
        self.reports = reports
        self.cause = cause
        self.exit_code = exit_code_for(cause) if cause is not None else 2


def exit_code_for(exc: Optional[BaseException]) -> int:
    """Map an exception to the CLI exit status"""
    if exc is None:
        return 0
    if isinstance(exc, RMTPruneError):
        return exc.exit_code
    if isinstance(exc, OSError):
        return 1
    return 2
