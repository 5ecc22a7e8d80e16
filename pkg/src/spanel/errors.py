"""Exception hierarchy shared across the package.

Input/format problems derive from ``InputError`` (CLI exit code 2); numerical
and estimation failures derive from ``EstimationError`` (CLI exit code 1).
"""


class SpanelError(Exception):
    """Base class for all package errors."""


class InputError(SpanelError):
    """Malformed input data or configuration."""


class EstimationError(SpanelError):
    """Numerical or statistical failure during estimation."""


# --- panel ingestion / transformation ---------------------------------------

class BalanceError(InputError):
    """Panel is not balanced; carries the offending (unit, time) cells."""

    def __init__(self, missing):
        self.missing = list(missing)
        super().__init__(f"unbalanced panel, missing cells: {self.missing[:10]}"
                         + (" ..." if len(self.missing) > 10 else ""))


class DuplicateError(InputError):
    """Duplicate (unit, time) rows in the input."""


class ParseError(InputError):
    """Non-numeric or unreadable value; message carries the row number."""


class InsufficientTimeError(InputError):
    """Too few time periods for differencing plus two covariate lags."""


# --- spatial weights ----------------------------------------------------------

class LabelError(InputError):
    """Reference to an unknown unit label."""


class SelfLoopError(InputError):
    """Adjacency pair linking a unit to itself."""


class DegenerateDistanceError(InputError):
    """Coincident coordinates produce a zero distance."""


class DomainError(InputError):
    """Value outside its mathematical domain (negative flow, empty set, ...)."""


class ShapeError(InputError):
    """Array dimensions do not agree."""


# --- factor extraction --------------------------------------------------------

class NumericError(EstimationError):
    """Non-finite values where finite numbers are required."""


class RankError(EstimationError):
    """Requested rank unavailable (zero matrix, too few eigenvalues, ...)."""


class SingularError(EstimationError):
    """A matrix that must be inverted is numerically singular."""


# --- IV estimation ------------------------------------------------------------

class WeakInstrumentError(EstimationError):
    """Instrument matrix is (numerically) rank deficient."""

    def __init__(self, unit, detail=""):
        self.unit = unit
        super().__init__(f"rank-deficient instruments for unit {unit!r} {detail}".rstrip())


class UnderIdentifiedError(EstimationError):
    """Fewer instruments than parameters."""


# --- BOLMT ----------------------------------------------------------------

class DegenerateCandidateError(EstimationError):
    """Candidate series is annihilated by the current controls."""


# --- mean group ---------------------------------------------------------------

class InsufficientUnitsError(EstimationError):
    """Fewer than two contributing units for some coefficient."""


# --- effects -------------------------------------------------------------------

class StabilityError(EstimationError):
    """Spatial multiplier does not exist for the given spatial coefficient."""


class ConditionError(EstimationError):
    """Spatial system is numerically near-singular."""


class NotAvailableError(EstimationError):
    """Requested output is undefined for this configuration."""


# --- network diagnostics --------------------------------------------------------

class DegenerateGroupingError(InputError):
    """All units share one group label; homophily is trivially 1."""


class SeparationError(EstimationError):
    """Complete separation in the link-formation logit."""
