"""Exception and warning types shared across the package."""


class AalenFicError(Exception):
    """Base class for all package errors."""


class ValidationError(AalenFicError, ValueError):
    """Input violates a documented contract (bad value, bad shape, bad config)."""


class IngestionError(ValidationError):
    """A CSV file could not be parsed; carries the offending data row."""

    def __init__(self, message, row=None):
        if row is not None:
            message = f"{message} (row {row})"
        super().__init__(message)
        self.row = row


class EmptyModelError(ValidationError):
    """Model with no covariates at all (nothing to estimate)."""


class SingularDesignError(AalenFicError):
    """An at-risk Gram matrix (or the integrated projected Gram) is numerically singular."""

    def __init__(self, message, time=None):
        if time is not None:
            message = f"{message} (time {time:g})"
        super().__init__(message)
        self.time = time


class DegenerateConditionalError(AalenFicError):
    """A conditional distribution needed for sampling is degenerate."""


class EmptyRankingError(AalenFicError):
    """Every candidate model failed to fit, so there is nothing to rank."""


class NonMonotoneHazardWarning(UserWarning):
    """A fitted cumulative hazard decreased somewhere; survival factors were clamped."""


class SamplerClampWarning(UserWarning):
    """A fitted lifetime distribution needed clamping beyond the tolerance."""
