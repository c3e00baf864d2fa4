"""Exception types shared across the package."""


class GuidanceLabError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(GuidanceLabError):
    """A config file or parameter set failed validation."""


class UnsupportedTargetError(GuidanceLabError):
    """The requested operation has no implementation for this target."""


class NumericalError(GuidanceLabError):
    """A numerical routine failed to reach its accuracy contract."""


class QuadratureError(NumericalError):
    """Adaptive quadrature exhausted its panel budget before converging."""
