from __future__ import annotations

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_INPUT_ERROR = 2
EXIT_NUMERIC_ERROR = 3


class DualShotError(Exception):
    exit_code = EXIT_CHECK_FAILED


class ShapeError(DualShotError, ValueError):
    """Tensor or box arrays whose shapes do not fit the operation."""

    exit_code = EXIT_INPUT_ERROR


class InputError(DualShotError, ValueError):
    exit_code = EXIT_INPUT_ERROR


class ParseError(InputError):
    def __init__(self, message: str, line_number: int | None = None):
        self.line_number = line_number
        if line_number is not None:
            message = f"line {line_number}: {message}"
        super().__init__(message)


class NumericError(DualShotError, ArithmeticError):
    exit_code = EXIT_NUMERIC_ERROR


class GradientError(DualShotError, RuntimeError):
    pass


class CheckFailure(DualShotError, AssertionError):
    exit_code = EXIT_CHECK_FAILED
