"""Exception hierarchy.

Every error raised on bad input derives from :class:`DataError`; failures of the
numerical machinery derive from :class:`NumericalError`. The CLI maps the two
families to exit codes 2 and 3.
"""


class PotfieldError(Exception):
    """Base class for all package errors."""


class DataError(PotfieldError, ValueError):
    """Input data or configuration is unusable."""


class NumericalError(PotfieldError, ArithmeticError):
    """A numerical routine failed on otherwise valid input."""


class MissingColumn(DataError):
    pass


class UnparsableRow(DataError):
    def __init__(self, line, reason=""):
        self.line = line
        super().__init__(f"line {line}: cannot parse row{': ' + reason if reason else ''}")


class NonMonotoneTimestamps(DataError):
    def __init__(self, line):
        self.line = line
        super().__init__(f"line {line}: timestamp not strictly increasing")


class InsufficientOverlap(DataError):
    pass


class DegenerateRange(DataError):
    def __init__(self, asset):
        self.asset = asset
        super().__init__(f"asset {asset!r} has a constant price over the window")


class TooShort(DataError):
    pass


class NonUniformSampling(DataError):
    pass


class UnknownAsset(DataError):
    pass


class ConfigError(DataError):
    pass


class NoPairs(DataError):
    """No state pair passed the distance threshold; epsilon is too small."""


class UnstableStep(DataError):
    """Integrator step size violates the stability guard."""


class SingularKernel(NumericalError):
    pass


class NonFinite(NumericalError):
    pass


class NonPositiveVariance(NumericalError, ValueError):
    pass


class NoAttractorMass(NumericalError):
    """No test point carries attractor-signed KL mass."""


class DegenerateSpectrum(NumericalError):
    pass
