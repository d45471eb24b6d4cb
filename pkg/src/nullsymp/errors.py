"""Exception hierarchy shared by all nullsymp modules."""


class NullSympError(Exception):
    """Base class for every error raised by nullsymp."""


class SpecError(NullSympError):
    """A spacetime source or catalog request is malformed or inconsistent."""


class ParseError(SpecError):
    def __init__(self, message, line=None, column=None):
        self.line = line
        self.column = column
        where = ""
        if line is not None:
            where = f"line {line}"
            if column is not None:
                where += f", column {column}"
            where += ": "
        super().__init__(where + message)


class UnknownIdentifierError(ParseError):
    def __init__(self, name, line=None, column=None):
        self.name = name
        super().__init__(f"unknown identifier {name!r}", line, column)


class MetricConflictError(ParseError):
    pass


class DimensionError(ParseError):
    pass


class ConstraintError(SpecError):
    """A parameter binding violates a declared ``require`` constraint."""


class EvaluationError(NullSympError):
    """Numeric evaluation failed (domain error, division by zero, overflow)."""


class OutOfDomainError(NullSympError):
    """A point lies outside the chart domain."""


class DegenerateMetricError(NullSympError):
    pass


class FrameError(NullSympError):
    """A null frame cannot be built for the given vector."""


class PreconditionError(NullSympError):
    """An operation's numerical precondition does not hold at the point."""
