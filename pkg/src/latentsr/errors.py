"""Exception types shared across the package."""


class InvalidParameterError(ValueError):
    """A parameter or configuration value violates its documented range."""


class DimensionMismatchError(ValueError):
    """An array argument has the wrong shape or dimensionality."""


class NonFiniteError(FloatingPointError):
    """A computation produced or received NaN/Inf where finite values are required."""

    def __init__(self, message, payload=None):
        super().__init__(message)
        self.payload = payload or {}


class DivergenceError(RuntimeError):
    """Training diverged (collapse signal or non-finite loss)."""


class RankDeficiencyError(ValueError):
    """A covariance matrix required to be full rank is singular."""


class EmptyMaskError(ValueError):
    """Segmentation produced no foreground where an object is required."""


class NoSpotsError(ValueError):
    """No connected components survived filtering in the spot channel."""


class ZeroCytoplasmError(ValueError):
    """Cytoplasmic reference region carries no measurable signal."""


class InsufficientSamplesError(RuntimeError):
    """Too few restarts satisfied the consistency tolerance."""

    def __init__(self, message, rejected_seeds=()):
        super().__init__(message)
        self.rejected_seeds = list(rejected_seeds)


class MissingCheckpointError(FileNotFoundError):
    """A required model checkpoint is absent; names the command that makes it."""

    def __init__(self, what, producing_command):
        super().__init__(
            f"missing {what}; run `{producing_command}` first to produce it"
        )
        self.producing_command = producing_command


class SplitLeakageError(RuntimeError):
    """An image id appears in more than one of the disjoint dataset splits."""
