"""Exception hierarchy.

Every domain failure derives from :class:`ManifoldIdError`. Configuration
problems derive from :class:`ConfigError` so callers (the CLI in particular)
can tell a bad invocation apart from data that violates a model assumption.
"""


class ManifoldIdError(ValueError):
    """Base class for data and domain errors."""


class ConfigError(ManifoldIdError):
    """Invalid configuration or usage."""


class ConfigInvalid(ConfigError):
    pass


# geometry
class DuplicateRows(ManifoldIdError):
    def __init__(self, i, j):
        self.i, self.j = int(i), int(j)
        super().__init__(f"rows {self.i} and {self.j} are identical (zero distance)")


class KTooLarge(ManifoldIdError):
    pass


class QTooLarge(ManifoldIdError):
    pass


class DegenerateRatio(ManifoldIdError):
    def __init__(self, i):
        self.i = int(i)
        super().__init__(
            f"row {self.i}: first and second neighbour distances are equal (mu = 1)"
        )


# twonn
class EmptyInput(ManifoldIdError):
    pass


class NonParetoSupport(ManifoldIdError):
    pass


# posterior
class EmptyCandidates(ManifoldIdError):
    pass


class LabelOutOfRange(ManifoldIdError):
    pass


# spatial / pipeline
class ZeroVariance(ManifoldIdError):
    def __init__(self, variable=None):
        self.variable = variable
        what = f"variable {variable!r} has" if variable is not None else "values have"
        super().__init__(f"{what} zero variance")


class EmptySample(ManifoldIdError):
    pass


class ParseError(ManifoldIdError):
    def __init__(self, path, line, reason):
        self.path, self.line, self.reason = str(path), line, reason
        super().__init__(f"{self.path}:{line}: {reason}")


class DateGap(ManifoldIdError):
    pass


class CoverageError(ManifoldIdError):
    pass


class AllFiltered(ManifoldIdError):
    pass


class TooFewObserved(ManifoldIdError):
    def __init__(self, country, variable):
        self.country, self.variable = country, variable
        super().__init__(
            f"country {country!r}, variable {variable!r}: fewer than 2 observed values"
        )


class NotImputed(ManifoldIdError):
    pass


class AlreadyStandardised(ManifoldIdError):
    pass


class DimensionMismatch(ManifoldIdError):
    pass


class MissingArtifact(ManifoldIdError):
    def __init__(self, stage, path):
        self.stage, self.path = stage, str(path)
        super().__init__(f"missing artifact from stage {stage!r}: {self.path}")


class MissingMetadata(ManifoldIdError):
    pass


class IsolatedUnit(ManifoldIdError):
    def __init__(self, unit):
        self.unit = unit
        super().__init__(f"unit {unit!r} has no neighbour in the spatial weights")
