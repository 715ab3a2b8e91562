"""Exception hierarchy shared by every stage of the pipeline."""


class VoiError(Exception):
    """Base class for all errors raised by :mod:`voi`."""


class ParameterDomainError(VoiError, ValueError):
    """A distribution or model parameter lies outside its valid domain."""

    def __init__(self, field, value, reason):
        self.field = field
        self.value = value
        super().__init__(f"invalid value for {field!r}: {value!r} ({reason})")


class UnsupportedOperationError(VoiError, TypeError):
    pass


class SchemaError(VoiError, ValueError):
    """Input file violates its schema. Carries the file and 1-based line."""

    def __init__(self, path, line, message):
        self.path = str(path)
        self.line = line
        where = f"{self.path}:{line}" if line is not None else self.path
        super().__init__(f"{where}: {message}")


class ConfigError(VoiError, ValueError):
    pass


class DivisionDegeneracyError(VoiError, ZeroDivisionError):
    def __init__(self, mode):
        self.mode = mode
        super().__init__(
            f"baseline travel total for mode {mode!r} is zero but the mode "
            "carries pollution weight"
        )


class InfeasibleScheduleError(VoiError, ValueError):
    def __init__(self, age, gender, scenario, minutes):
        self.key = (age, gender, scenario)
        self.minutes = minutes
        super().__init__(
            f"travel time {minutes} min/day exceeds 1440 for "
            f"age={age!r}, gender={gender!r}, scenario={scenario!r}"
        )


class ModelEvaluationError(VoiError, RuntimeError):
    """Model evaluation failed on a specific Monte Carlo row."""

    def __init__(self, row, draw, cause):
        self.row = row
        self.draw = dict(draw)
        self.cause = cause
        super().__init__(f"model evaluation failed at row {row} with draw {self.draw}: {cause}")


class DegenerateRegressorError(VoiError, ValueError):
    pass


class UnsupportedDimensionError(VoiError, ValueError):
    pass


class ConvergenceError(VoiError, RuntimeError):
    """MCMC diagnostics failed; ``diagnostics`` holds R-hat/ESS per parameter."""

    def __init__(self, message, diagnostics):
        self.diagnostics = diagnostics
        super().__init__(message)


class UnresolvableTargetError(VoiError, KeyError):
    def __str__(self):
        return str(self.args[0]) if self.args else ""
