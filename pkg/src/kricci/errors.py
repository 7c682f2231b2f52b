"""Exception hierarchy shared by all modules."""


class KRicciError(Exception):
    """Base class for every error raised by this package."""


# geometry
class PointOutsideRegion(KRicciError):
    pass


class PointTooNearBoundary(KRicciError):
    pass


class NonSPDMetric(KRicciError):
    pass


class DegeneratePlane(KRicciError):
    pass


class NonOrthonormalInput(KRicciError):
    pass


class BadK(KRicciError):
    pass


class BadDimension(KRicciError):
    pass


# ODEs
class DivergentIntegral(KRicciError):
    pass


class NegativeLambda(KRicciError):
    pass


class UnconvergedODE(KRicciError):
    pass


class EnvelopeViolated(KRicciError):
    pass


class NonPositiveTrajectory(KRicciError):
    pass


class GridTooShort(KRicciError):
    pass


# transport
class LeftChartRegion(KRicciError):
    def __init__(self, message, exit_time=None):
        super().__init__(message)
        self.exit_time = exit_time


class SingularPInversion(KRicciError):
    pass


class TraceInequalityViolated(KRicciError):
    pass


class BoundViolated(KRicciError):
    pass


class RadiusExceedsChart(KRicciError):
    pass


class TooFewDirections(KRicciError):
    pass


# submanifold
class DegenerateImmersion(KRicciError):
    pass


class DisconnectedMesh(KRicciError):
    pass


class NonPositiveF(KRicciError):
    pass


class CompatibilityUnreachable(KRicciError):
    pass


class BadCodimension(KRicciError):
    pass


class NotMinimal(KRicciError):
    pass


# configuration
class SchemaError(KRicciError):
    def __init__(self, message, path=""):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path


class RegistryMiss(KRicciError):
    pass
