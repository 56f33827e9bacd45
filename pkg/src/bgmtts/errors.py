"""Exception types shared across the package."""


class BgmTtsError(Exception):
    """Base class for all package errors."""


class TooShortError(BgmTtsError, ValueError):
    """Signal is shorter than one analysis window."""


class DataError(BgmTtsError):
    """Missing, unreadable or inconsistent data (audio, manifests, checkpoints)."""


class NumericalError(BgmTtsError):
    """A training run produced NaN/Inf or otherwise diverged."""
