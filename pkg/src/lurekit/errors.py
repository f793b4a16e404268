"""Exception hierarchy shared by all lurekit modules."""


class LurekitError(Exception):
    """Base class for all errors raised by this package."""


class CorpusError(LurekitError):
    """Malformed caption/annotation records, duplicate ids, alignment failures."""


class VocabularyError(CorpusError):
    """Vocabulary file problems: empty file, synonym claimed by two canonicals."""


class UncertaintyUnavailableError(LurekitError):
    """An uncertainty score was requested for a mention without a log-probability."""


class MaskCorruptionError(LurekitError):
    """Masked text and mask records disagree (placeholder/record count mismatch,
    overlapping spans, out-of-bounds spans)."""


class BackendUnavailableError(LurekitError):
    """Revisor backend unreachable after the configured number of retries."""


class ProtocolError(LurekitError):
    """Backend answered, but the response body violates the wire protocol."""


class ResponseParseError(LurekitError):
    """A backend completion could not be parsed into the expected structure."""

    def __init__(self, message: str, raw_text: str = ""):
        super().__init__(message)
        self.raw_text = raw_text


class ConfigError(LurekitError):
    """Invalid or incomplete run configuration."""
