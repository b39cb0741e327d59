"""Exception hierarchy shared by every module."""


class KdvError(Exception):
    """Base class for all errors raised by the package."""


class ConfigError(KdvError):
    """Invalid configuration or caller-supplied parameters."""


class DomainError(KdvError):
    """An operation was called outside its mathematical domain."""


class NumericalError(KdvError):
    """An iteration failed to converge or a solve was ill-conditioned."""


class SmallDivisorError(DomainError):
    """A divisor fell below its admissible floor.

    ``ell`` is the offending torus mode, ``value`` the divisor and ``floor`` the
    threshold it violated.
    """

    def __init__(self, message, ell=None, value=None, floor=None):
        super().__init__(message)
        self.ell = None if ell is None else tuple(int(x) for x in ell)
        self.value = value
        self.floor = floor


class ParameterExcluded(KdvError):
    """The parameter lambda violates a non-resonance condition.

    ``record`` carries the witness (kind, indices, divisor, threshold).
    """

    def __init__(self, message, record=None):
        super().__init__(message)
        self.record = record
