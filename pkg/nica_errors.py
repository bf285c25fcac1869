from typing import List

import logging
logging.basicConfig(level = logging.INFO)
logger = logging.getLogger("nica_errors")


# Every error raised on purpose by this repo derives from NicaError, so the
# experiment runner can record a failed seed and carry on with the next one.
class NicaError(Exception):
    pass


class DimensionError(NicaError, ValueError):
    '''shapes of operands are not chain-compatible'''


class NumericError(NicaError, ArithmeticError):
    '''a non-finite value or a singular weight escaped an operation'''


class InstabilityError(NumericError):
    '''an autoregressive trajectory left the operating range'''


class ContractError(NicaError, ValueError):
    '''a precondition of an operation does not hold'''


class DegenerateInputError(NicaError, ValueError):
    '''constant columns or a degenerate covariance'''


class ConfigurationError(NicaError, ValueError):
    '''settings that cannot be realized, e.g. an unreachable condition bound'''


class CalibrationError(NicaError, ValueError):
    pass


class ValidationError(NicaError, ValueError):
    '''
    An experiment config failed validation.
    violations holds one message per violated field.
    '''
    violations: List[str]

    def __init__(self, violations: List[str]):
        self.violations = list(violations)
        super().__init__("ERROR: invalid config - " + "; ".join(self.violations))

    def as_dict(self) -> dict:
        return {"error": "ValidationError", "violations": self.violations}


class ConvergenceWarning(UserWarning):
    pass


def error_as_dict(exp: Exception) -> dict:
    '''machine-readable form of an exception for error reports'''
    if isinstance(exp, ValidationError):
        return exp.as_dict()
    return {"error": type(exp).__name__, "message": str(exp)}
