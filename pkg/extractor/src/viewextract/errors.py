"""Extractor error types."""


class ExtractError(Exception):
    exit_code = 4


class MissingWeights(ExtractError):
    """A requested backbone checkpoint is not on disk."""

    exit_code = 3


class UnreadableImage(ExtractError):
    """An input image cannot be decoded."""

    exit_code = 3


class BadPlan(ExtractError):
    """Extraction plan is inconsistent."""

    exit_code = 2
