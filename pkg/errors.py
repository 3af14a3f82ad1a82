from __future__ import annotations


class GexiaError(Exception):
    exit_code = 1
    tag = "error"


class UsageError(GexiaError, ValueError):
    exit_code = 2
    tag = "usage"


class ConfigError(UsageError):
    tag = "config"


class DataFormatError(GexiaError, ValueError):
    exit_code = 3
    tag = "format"


class DimensionError(DataFormatError):
    tag = "dimension"


class NumericError(GexiaError, ArithmeticError):
    exit_code = 4
    tag = "numeric"


class DegenerateInputError(NumericError):
    tag = "degenerate"


class RemoteServiceError(GexiaError, RuntimeError):
    exit_code = 5
    tag = "remote"


def format_diagnostic(exc: BaseException) -> str:
    """Single-line `gexia-error[<tag>]: message` used by the CLI on stderr."""
    tag = exc.tag if isinstance(exc, GexiaError) else "internal"
    message = " ".join(str(exc).split()) or exc.__class__.__name__
    return f"gexia-error[{tag}]: {message}"
