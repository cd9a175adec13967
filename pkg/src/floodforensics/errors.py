"""Exception types shared across the package."""


class FloodForensicsError(Exception):
    """Base class for all package errors."""


class InvalidConfigError(FloodForensicsError, ValueError):
    """A configuration value or operator parameter is out of its valid range."""


class ConfigError(InvalidConfigError):
    """A run configuration document is malformed (unknown key, missing path, ...)."""


class ShapeError(FloodForensicsError, ValueError):
    """Array shapes do not match the operation's contract."""


class ManifestEmptyError(FloodForensicsError):
    """A manifest build found no decodable images."""


class SplitTooSmallError(FloodForensicsError):
    """Too few records per class to produce a stratified split."""


class DecodeError(FloodForensicsError):
    """An image or mask file could not be decoded."""

    def __init__(self, path, reason=""):
        self.path = str(path)
        msg = f"cannot decode {self.path}"
        if reason:
            msg += f": {reason}"
        super().__init__(msg)


class MissingMaskError(FloodForensicsError):
    """A mask-conditioned model was called without the required mask."""


class TrainConfigError(FloodForensicsError, ValueError):
    """Training configuration or inputs are unusable (e.g. empty train set)."""


class DivergenceError(FloodForensicsError):
    """Training produced a non-finite loss."""

    def __init__(self, epoch, step, value=None):
        self.epoch = epoch
        self.step = step
        self.value = value
        super().__init__(f"non-finite loss at epoch {epoch}, step {step}: {value}")


class MetricUndefinedError(FloodForensicsError):
    """A metric is undefined for the given inputs (e.g. AUC with an empty class)."""


class UnsupportedModelError(FloodForensicsError):
    """The model does not expose what the operation needs (e.g. spatial features)."""


class CheckpointMismatchError(FloodForensicsError):
    """A checkpoint does not match the architecture it is being loaded into."""
