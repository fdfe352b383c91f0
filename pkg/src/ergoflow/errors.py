"""Exception hierarchy shared across the package."""


class ErgoflowError(Exception):
    """Base class for all package errors."""


class ValidationError(ErgoflowError, ValueError):
    """Input failed a precondition check. CLI exit code 1."""


class InvalidMeasureError(ValidationError):
    pass


class ShapeError(ValidationError):
    pass


class DegenerateBandwidthError(ValidationError):
    pass


class NonInvertibleFlowError(ValidationError):
    pass


class UninitializedFieldError(ValidationError):
    pass


class GridParseError(ValidationError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ControlViolationError(ValidationError):
    pass


class SettingError(ValidationError):
    """A named setting failed validation; ``key`` is the setting's name."""

    def __init__(self, key: str, message: str):
        self.key = key
        super().__init__(f"{key} {message}")


class ConfigError(ValidationError):
    def __init__(self, message: str, key: str | None = None, line: int | None = None):
        self.key = key
        self.line = line
        prefix = []
        if line is not None:
            prefix.append(f"line {line}")
        if key is not None:
            prefix.append(f"key '{key}'")
        if prefix:
            message = f"{', '.join(prefix)}: {message}"
        super().__init__(message)


class NumericIntegrityError(ErgoflowError, ArithmeticError):
    """Computation produced non-finite or impossible values. CLI exit code 2."""


class NonFiniteError(NumericIntegrityError):
    pass


class InitializationError(NumericIntegrityError):
    pass
