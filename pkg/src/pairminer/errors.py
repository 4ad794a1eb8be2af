"""Exception types shared across the pipeline."""


class PairminerError(Exception):
    """Base class for every error raised by this package."""


# --- configuration -------------------------------------------------------

class ConfigError(PairminerError):
    """Run configuration is missing, malformed, or inconsistent."""


class CredentialMissingError(ConfigError):
    """A provider credential environment variable is not set."""


class ConfigDriftError(ConfigError):
    """Manifest was produced under a different configuration digest."""


# --- provider ------------------------------------------------------------

class InvalidRequestError(PairminerError):
    """A chat request violates its invariants (empty text, bad temperature,
    images sent to a non-vision model)."""


class TransientProviderError(PairminerError):
    """Retryable transport failure; the gateway backs off and retries."""


class RetriesExhaustedError(PairminerError):
    """All retry attempts failed; carries the last transport error."""

    def __init__(self, message: str, last_error: Exception | None = None):
        super().__init__(message)
        self.last_error = last_error


class FixtureMissError(PairminerError):
    """The mock provider received a request its script does not cover.
    Always a test bug; never answered silently."""


class EmptyTextError(PairminerError):
    """Embedding requested for text that is empty after whitespace
    normalization."""


class DimensionMismatchError(PairminerError):
    """An embedding vector disagrees with the dimension already seen in
    this run."""


# --- response parsing ----------------------------------------------------

class ResponseFormatError(PairminerError):
    """A provider response does not follow the required output format."""


class MissingMarkersError(ResponseFormatError):
    """Expected delimiter markers were not found in the response."""


class UnrecognizedVerdictError(ResponseFormatError):
    """Text between the markers is not one of the allowed verdicts."""


class NoJsonBlockError(ResponseFormatError):
    """No fenced JSON block could be parsed out of the response."""


class NonArrayJsonError(ResponseFormatError):
    """The fenced JSON block parsed, but is not an array."""


# --- corpus / render / segment -------------------------------------------

class EmptyKeywordsError(PairminerError):
    """retrieve was called with no keywords."""


class CatalogError(PairminerError):
    """Catalog file is malformed or references missing documents."""


class UnsupportedFormatError(PairminerError):
    """No renderer is registered for the document's format."""


class RendererFailedError(PairminerError):
    """External rasterizer exited nonzero; carries captured stderr."""

    def __init__(self, message: str, stderr: str = ""):
        super().__init__(message)
        self.stderr = stderr


class ZeroPagesError(PairminerError):
    """Rendering produced no pages."""


class MaxTokensTooSmallError(PairminerError):
    """Chunking budget below the supported minimum."""


# --- pipeline ------------------------------------------------------------

class StageFailedError(PairminerError):
    """A pipeline stage failed; the manifest records which."""

    def __init__(self, stage: str, message: str):
        super().__init__(f"stage {stage!r} failed: {message}")
        self.stage = stage


class ReconciliationMismatchError(PairminerError):
    """Recomputed stage counts disagree with the manifest (corrupted or
    tampered outputs)."""


class FixtureSpecError(PairminerError):
    """Fixture specification is invalid."""
