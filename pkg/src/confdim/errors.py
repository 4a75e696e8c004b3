"""Exception hierarchy shared across the package."""


class ConfdimError(Exception):
    """Base class for all package errors."""


class SizeError(ConfdimError):
    """A generated or ingested space exceeds the configured point cap."""


class DegenerateSpaceError(ConfdimError):
    """The operation needs more points (or more scales) than the space has."""


class ParameterError(ConfdimError):
    """A construction parameter violates a required bound."""


class InsufficientDepthError(ConfdimError):
    """The net hierarchy is too shallow for the requested operation."""


class UnsupportedExponentError(ConfdimError):
    """Modulus exponent outside the supported (convex) range p >= 1."""


class PathCapError(ConfdimError):
    """Brute-force path enumeration exceeded its cap."""


class SamplingError(ConfdimError):
    """Empirical distortion function is undefined at a required argument."""


class ConstantsError(ConfdimError):
    """A theory-mode constant condition failed during the weight pipeline."""


class ConstructionError(ConfdimError):
    """A post-condition of a constructive step failed (theory mode only)."""


class DomainError(ConfdimError):
    """An argument lies outside the domain where the quantity is defined."""
