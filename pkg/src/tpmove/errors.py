"""Exception hierarchy for the tpmove package.

Every failure raised on purpose by this package derives from :class:`Error`,
so callers can catch numerical/model errors separately from programming
mistakes (plain ``TypeError`` etc. are never wrapped).
"""


class Error(Exception):
    """Base class for all tpmove errors."""


class DimensionMismatchError(Error, ValueError):
    """Operands have incompatible dimensions."""


class EmptyDataError(Error, ValueError):
    """A fitting routine received no data points."""


class KTooLargeError(Error, ValueError):
    """More mixture components requested than data points available."""


class SingularCovarianceError(Error):
    """A covariance matrix is numerically singular (possible only with reg=0)."""


class SingularInputBlockError(Error):
    """The input-block covariance used for conditioning is singular."""


class EmptyFactorListError(Error, ValueError):
    """A Gaussian product was requested over zero factors."""


class ConfidenceOutOfRangeError(Error, ValueError):
    """A fusion confidence lies outside (0, 1]."""


class SingularRotationError(Error):
    """A frame rotation matrix is not invertible."""


class FrameCountMismatchError(Error, ValueError):
    """The numbers of local models and task frames disagree."""


class LengthMismatchError(Error, ValueError):
    """A flat parameter vector does not match its declared layout."""


class NonFiniteCostError(Error):
    """A rollout produced a NaN or infinite cost."""


class BudgetTooSmallError(Error, ValueError):
    """The rollout budget is smaller than one update batch."""


class InsufficientCandidatesError(Error, ValueError):
    """Frame selection needs at least two candidate frames."""


class DegenerateObstacleError(Error, ValueError):
    """Obstacle rectangle has non-orthonormal axes or non-positive extents."""


class SingularJacobianError(Error):
    """Undamped pseudo-inverse hit a singular arm configuration."""


class IndexOutOfRangeError(Error, IndexError):
    """A via-point index falls outside the trajectory."""


class InvalidSpecError(Error, ValueError):
    """A demonstration spec has invalid fields."""


class MalformedCsvError(Error, ValueError):
    """A demonstration CSV file cannot be parsed.

    Carries the offending row number (1-based, header = row 1) when known.
    """

    def __init__(self, message, path=None, row=None):
        detail = message
        if path is not None:
            detail = f"{path}: {detail}"
        if row is not None:
            detail = f"{detail} (row {row})"
        super().__init__(detail)
        self.path = path
        self.row = row


class ConfigError(Error, ValueError):
    """An experiment configuration file is invalid."""
