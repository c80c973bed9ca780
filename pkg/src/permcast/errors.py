"""Exception types shared across the package.

The CLI maps these onto process exit codes (config 2, data 3, training 4,
corruption 5); everything else surfaces as a plain ValueError.
"""


class ConfigError(ValueError):
    """Bad or unknown experiment configuration (strict parsing)."""


class DataError(ValueError):
    """Dataset generation, ingestion, or splitting failed."""


class CsvParseError(DataError):
    """Malformed CSV input; message carries the offending line number."""


class TrainingError(RuntimeError):
    """Training diverged or violated a training-time contract."""


class CheckpointCorruptionError(RuntimeError):
    """Checkpoint file failed magic/CRC/version validation."""


class GradcheckProtocolError(RuntimeError):
    """Gradient check preconditions violated (e.g. stochastic forward)."""
