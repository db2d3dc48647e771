"""Exception types shared across the package."""


class ConfigurationError(ValueError):
    """Invalid code, interleaver, pattern or model configuration."""


class FramingError(ValueError):
    """A sequence length does not match what the plan or pattern expects."""


class UnsupportedRateError(ValueError):
    """Requested code rate cannot be produced by the rate matcher."""


class EstimationError(ValueError):
    """Channel estimation failed (e.g. singular pilot matrix)."""


class CheckpointError(ValueError):
    """Checkpoint missing, corrupt, or incompatible with the model config."""
