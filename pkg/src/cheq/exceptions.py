"""Exception and warning types raised across the toolkit."""


class CheqError(Exception):
    """Base class for every error raised by cheq."""


class DataError(CheqError, ValueError):
    """A row of an input file violates the schema.

    ``row`` is the 1-based line number in the source file (the header is
    line 1) and ``field`` the offending column, when known.
    """

    def __init__(self, message, row=None, field=None, path=None):
        self.row = row
        self.field = field
        self.path = path
        where = []
        if path is not None:
            where.append(str(path))
        if row is not None:
            where.append(f"row {row}")
        if field is not None:
            where.append(f"field {field!r}")
        prefix = ", ".join(where)
        super().__init__(f"{prefix}: {message}" if prefix else message)


class MissingColumn(DataError):
    pass


class BadEnum(DataError):
    pass


class BadValue(DataError):
    """A cell could not be parsed as the declared type."""


class NegativeValue(DataError):
    """A value is below its allowed range (negative, or non-positive weight)."""


class DuplicateId(DataError):
    pass


class ComponentMismatch(DataError):
    """Cost component columns do not match the schema for the care type."""


# statistical preconditions

class TooFewObservations(CheqError, ValueError):
    pass


class DegenerateBins(CheqError, ValueError):
    pass


class ZeroVariance(CheqError, ValueError):
    pass


class ConstantInput(CheqError, ValueError):
    pass


class NotPoolable(CheqError):
    pass


class EmptyDomain(CheqError, ValueError):
    pass


class AllZeroCost(CheqError, ValueError):
    pass


class ZeroDenominator(CheqError, ZeroDivisionError):
    pass


class ZeroMean(CheqError, ValueError):
    pass


class EmptyCategory(CheqError, ValueError):
    pass


class NotBinary(CheqError, ValueError):
    pass


class InvalidConfig(CheqError, ValueError):
    pass


# warnings

class CheqWarning(UserWarning):
    pass


class TiedAcrossSources(CheqWarning):
    pass


class StratumMissingInOneAgency(CheqWarning):
    pass


class DegenerateDistribution(CheqWarning):
    pass


class OneSubsampleEmpty(CheqWarning):
    pass


class MissingOptionalField(CheqWarning):
    pass
