"""Exception hierarchy.

Numerical failures derive from :class:`NumericalError`, input problems from
:class:`ConfigError`. The CLI maps the two families to distinct exit codes.
"""


class PWSError(Exception):
    """Base class for every error raised by this package."""


class NumericalError(PWSError):
    pass


class ConfigError(PWSError, ValueError):
    pass


class DimensionMismatch(ConfigError):
    pass


class DegenerateDenominator(NumericalError):
    pass


class OffManifold(NumericalError):
    pass


class WrongClassification(NumericalError):
    pass


class NonFiniteValue(NumericalError):
    pass


class NoSignChange(NumericalError):
    pass


class MaxIterations(NumericalError):
    pass


class DegenerateEvent(NumericalError):
    pass


class ChatterDetected(NumericalError):
    pass


class NoEventFound(NumericalError):
    pass


class NotConverged(NumericalError):
    pass


class SlidingLost(NumericalError):
    pass


class TopologyError(ConfigError):
    pass


class NotSymmetric(TopologyError):
    pass


class NotConnected(TopologyError):
    pass


class SizeGuardExceeded(ConfigError):
    pass
