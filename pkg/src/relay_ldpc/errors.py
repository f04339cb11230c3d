"""Exception types shared across the toolkit."""


class RelayLdpcError(Exception):
    """Base class for every error raised by this package."""


class NonFinite(RelayLdpcError, ValueError):
    pass


class DegreeOutOfRange(RelayLdpcError, ValueError):
    pass


class MissingElementaryChart(RelayLdpcError, KeyError):
    pass


class BracketInvalid(RelayLdpcError, ValueError):
    pass


class Infeasible(RelayLdpcError):
    """No point satisfies the constraints (a clean verdict, not a failure)."""


class Unbounded(RelayLdpcError):
    pass


class LpNumericalFailure(RelayLdpcError):
    """The simplex solver could not certify its answer."""


class UnrealizableDistribution(RelayLdpcError, ValueError):
    pass


class RankDeficient(RelayLdpcError):
    pass


class NotACodeword(RelayLdpcError, ValueError):
    pass


class ConfigError(RelayLdpcError, ValueError):
    pass


class ConfigMismatch(ConfigError):
    """A code file does not belong to the channel/design it is used with."""
