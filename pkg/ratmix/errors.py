"""Exception hierarchy. Library code raises these; the command line maps them to exit status 1."""


class RatmixError(Exception):
    """Base class of every error raised by ratmix."""


class HorizonError(RatmixError):
    """A request reaches past the materialized horizon of a sequence or set."""


class DegenerateWeightError(RatmixError):
    """A weight has no usable mass where a ratio needs one (zero partial sum, nonpositive entry)."""


class DegenerateSetError(RatmixError):
    """A cylinder or union of cylinders has zero measure or overlapping constituents."""


class NestingError(RatmixError):
    """Sets that must be nested are not, on the materialized range."""


class InvalidDistribution(RatmixError):
    """A lifetime distribution has negative mass, excess mass, or support outside n >= 1."""


class NotRenewal(RatmixError):
    """A sequence inverts to a lifetime with a negative mass."""


class Inconclusive(RatmixError):
    """The materialized data cannot decide the question."""


class BudgetError(RatmixError):
    """A computation would exceed the configured memory budget."""


class DomainError(RatmixError):
    """A point lies on a boundary or in the truncated region of a layout."""

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class ConfigError(RatmixError):
    """Invalid configuration, experiment spec or parameter."""


class ProfileError(RatmixError):
    """A convergence profile violates its invariants (grid order, finite values)."""
