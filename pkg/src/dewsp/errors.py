"""Exception hierarchy.

The three top-level families map onto CLI exit codes: validation (1),
data (2) and numeric (3).
"""


class DewspError(Exception):
    exit_code = 1


class ValidationError(DewspError, ValueError):
    exit_code = 1


class DataError(DewspError, ValueError):
    exit_code = 2


class NumericError(DewspError, ArithmeticError):
    exit_code = 3


# data loading / market data
class MissingColumn(DataError):
    pass


class UnparseableRow(DataError):
    def __init__(self, line: int, detail: str = ""):
        self.line = line
        super().__init__(f"unparseable row at line {line}" + (f": {detail}" if detail else ""))


class NonMonotoneDates(DataError):
    pass


class NonPositivePrice(DataError):
    pass


class InvalidBar(DataError):
    pass


class EmptyInput(DataError):
    pass


class WindowTooShort(DataError):
    pass


class EmptyWindow(DataError):
    pass


class InsufficientHistory(DataError):
    pass


class InsufficientWarmup(DataError):
    pass


class LengthMismatch(DataError):
    pass


class ShapeMismatch(DataError):
    pass


class EmptyDataset(DataError):
    pass


class MissingForecast(DataError):
    def __init__(self, date):
        self.date = date
        super().__init__(f"no forecast available for {date}")


class InvalidSubsetSize(ValidationError):
    pass


class InvalidSpec(ValidationError):
    pass


class ConfigError(ValidationError):
    pass


# numerics
class NonFiniteLoss(NumericError):
    pass


class NonFiniteForecast(NumericError):
    pass


class SolverDiverged(NumericError):
    pass


class Infeasible(NumericError):
    pass


class DegenerateSeries(NumericError):
    pass


class DivisionByZero(NumericError, ZeroDivisionError):
    def __init__(self, n: int):
        self.n = n
        super().__init__(f"zero denominator at N={n}")
