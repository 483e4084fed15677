"""Exception and warning types raised across the package."""


class NsumError(Exception):
    """Base class for all package errors."""


class ShapeMismatch(NsumError):
    """Input table, size list, or index has an inconsistent shape."""


class NegativeResponse(NsumError):
    """A response count is negative (names the offending row/column)."""


class KnownSizeExceedsTotal(NsumError):
    """A known subpopulation size is not strictly below the total population."""


class DomainError(NsumError):
    """An argument lies outside the mathematical domain of an operation."""


class DegenerateSamples(NsumError):
    """Moment fitting received samples with zero variance or an invalid mean."""


class DegenerateScale(NsumError):
    """The scale conditional collapsed (zero sum of squared log-degree residuals)."""


class NonFiniteDensity(NsumError):
    """A log density evaluated to NaN/inf at the current state."""


class PilotDegenerate(NsumError):
    """The pilot chain never accepted a proposal; the starting point is bad."""


class ZeroDegreeSum(NsumError):
    """Scale-up size estimator received degrees summing to zero."""


class FitDiverged(NsumError):
    """Every calibration restart collapsed onto the slope lower boundary."""


class TooFewDraws(NsumError):
    """Not enough posterior draws to summarize."""


class ZeroWithinVariance(NsumError):
    """Within-chain variance is zero; the PSRF is undefined."""


class InvalidConfig(NsumError):
    """A config file is malformed or carries unknown keys."""


class AllZeroResponses(UserWarning):
    """A respondent row is entirely zero and its degree start was floored."""


class TruncationTooTight(UserWarning):
    """Truncation interval holds < 1e-12 of the untruncated mass;
    the draw fell back to the inverse-CDF construction."""


class RecallAdjustmentSuspect(UserWarning):
    """The unadjusted prevalence of the target group exceeds every known
    group's prevalence, so the recall regression extrapolates."""
