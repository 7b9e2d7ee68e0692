"""Exception hierarchy. Everything derives from ``DerstatsError`` so callers that
scan many comparisons can downgrade any domain failure to a skip."""


class DerstatsError(ValueError):
    code = "Error"


class TooFewGroups(DerstatsError):
    code = "TooFewGroups"


class DegenerateMeans(DerstatsError):
    code = "DegenerateMeans"


class MissingGroup(DerstatsError):
    code = "MissingGroup"


class UndefinedVariance(DerstatsError):
    code = "UndefinedVariance"


class ZeroVariance(DerstatsError):
    """The variance of a contrast is exactly zero, so no test can be run."""

    code = "NoTest"


class NonpositiveControlMean(DerstatsError):
    code = "NonpositiveControlMean"


class InvalidEffect(DerstatsError):
    code = "InvalidEffect"


class ResampleDegenerate(DerstatsError):
    code = "ResampleDegenerate"


class EmptySample(DerstatsError):
    code = "EmptySample"


class InfeasibleSplit(DerstatsError):
    code = "InfeasibleSplit"


class MissingCell(DerstatsError):
    code = "MissingCell"


class SchemaError(DerstatsError):
    code = "SchemaError"


class ParseError(DerstatsError):
    code = "ParseError"

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class ValidationError(DerstatsError):
    code = "ValidationError"

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line
