"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: ConfigError -> 1 (usage),
CorpusError and subclasses -> 2 (data), TrainingError -> 3 (numerical).
"""


class TagMixerError(Exception):
    """Base class for all package-specific errors."""


class ConfigError(TagMixerError):
    """Invalid or inconsistent configuration or arguments."""


class CorpusError(TagMixerError):
    """Data-level failure: unreadable input, empty corpus after filtering,
    vocabulary mismatch between artifacts."""


class EmbeddingFormatError(CorpusError):
    """Malformed, truncated, or incomplete embedding / tensor file."""


class TrainingError(TagMixerError):
    """Numerical failure during optimization (non-finite loss, divergence)."""
