"""Typed errors raised across the package."""


class PolysplatError(Exception):
    """Base class for all package errors."""


class ConfigError(PolysplatError, ValueError):
    pass


class FitDiverged(PolysplatError, RuntimeError):
    pass


class NoPositiveRoot(PolysplatError, ValueError):
    pass


class FullyCulled(PolysplatError, ValueError):
    """The splat never reaches the cutoff, so it contributes nothing."""


class EpsilonZeroUnbounded(PolysplatError, ValueError):
    """An exponential kernel has no finite support at a zero cutoff."""


class DegenerateCovariance(PolysplatError, ValueError):
    pass


class EmptyBounds(PolysplatError, ValueError):
    pass


class WrongOrder(PolysplatError, ValueError):
    pass


class SceneIOError(PolysplatError):
    pass


class MalformedHeader(SceneIOError, ValueError):
    pass


class UnsupportedFormat(SceneIOError, ValueError):
    pass


class MissingProperty(SceneIOError, KeyError):
    def __str__(self):
        return Exception.__str__(self)


class TruncatedData(SceneIOError, ValueError):
    pass


class ParseError(SceneIOError, ValueError):
    pass


class NonOrthonormalRotation(SceneIOError, ValueError):
    pass


class DimensionMismatch(PolysplatError, ValueError):
    pass


class TooSmall(PolysplatError, ValueError):
    pass


class IoError(SceneIOError, OSError):
    pass
