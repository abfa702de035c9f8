"""Exception types raised across the package."""


class PooledDPError(Exception):
    """Base class for all package errors."""


class InvalidMultiplicity(PooledDPError, ValueError):
    pass


class InvalidMoments(PooledDPError, ValueError):
    pass


class IncompatibleDistributions(PooledDPError, ValueError):
    pass


class InvalidTruncation(PooledDPError, ValueError):
    pass


class InvalidInstance(PooledDPError, ValueError):
    """An instance violates one of its invariants.

    ``field`` names the offending parameter so front ends can report it.
    """

    def __init__(self, field, message):
        super().__init__(f"{field}: {message}")
        self.field = field


class OutOfDomain(PooledDPError, ValueError):
    pass


class InfeasibleAction(PooledDPError, ValueError):
    pass


class NotAttained(PooledDPError):
    """The asymptotic control-limit regime is not visible below ``k_cap``."""


class BoundsTooTight(PooledDPError):
    def __init__(self, message, k=None, t=None):
        super().__init__(message)
        self.k = k
        self.t = t


class InstanceTooLarge(PooledDPError):
    pass


class IncompleteSweep(PooledDPError):
    def __init__(self, missing):
        self.missing = list(missing)
        head = ", ".join(map(str, self.missing[:20]))
        more = "" if len(self.missing) <= 20 else f" ... (+{len(self.missing) - 20} more)"
        super().__init__(f"{len(self.missing)} missing: {head}{more}")


class DegenerateBaseline(PooledDPError):
    pass
