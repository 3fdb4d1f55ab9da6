"""Exception hierarchy for the rmr package.

Three families matter to callers: configuration problems (bad flags or
settings, CLI exit code 2), data problems (malformed datasets, vectors, or
index files, exit code 3), and gateway problems (the model endpoint, exit
code 4).
"""


class RmrError(Exception):
    """Base class for every error raised by this package."""


class ConfigurationError(RmrError):
    """Invalid settings: unusable flag combinations, unknown modes, bad k."""


class IoFailureError(RmrError):
    """An underlying read or write failed; wraps the OS-level cause."""


class DataError(RmrError):
    """Base class for invalid vectors, records, datasets, or index files."""


# -- embeddings and fusion ------------------------------------------------

class BothModalitiesAbsentError(DataError):
    """Neither a text nor an image embedding was supplied."""


class DimensionMismatchError(DataError):
    """Vector dimensions disagree where they are required to be equal."""


class NonFiniteInputError(DataError):
    """An embedding contains NaN or infinite entries."""


class ZeroNormVectorError(DataError):
    """A vector with zero Euclidean norm where cosine geometry needs one."""


# -- library construction and lookup ---------------------------------------

class DuplicateIdError(DataError):
    """Two records share an id within one library or interchange file."""


class EmptyInputError(DataError):
    """An operation that needs at least one record received none."""


class UnknownItemIdError(DataError):
    """A referenced item id does not exist in the library."""


class EmptyLibraryAfterExclusionError(DataError):
    """Every library item was excluded, leaving nothing to retrieve."""


# -- context assembly -------------------------------------------------------

class BudgetTooSmallError(DataError):
    """The token budget cannot fit even the single best example."""


# -- index persistence ------------------------------------------------------

class IndexFormatError(DataError):
    """Base class for structurally invalid index files."""


class BadMagicError(IndexFormatError):
    """The file does not start with the index magic bytes."""


class VersionMismatchError(IndexFormatError):
    """The index file carries an unsupported format version."""


class ChecksumMismatchError(IndexFormatError):
    """The trailing CRC32 does not match the file contents."""


class TruncatedFileError(IndexFormatError):
    """The file ends before the declared structure is complete."""


# -- dataset loading --------------------------------------------------------

class ParseError(DataError):
    """A dataset or interchange file could not be parsed; names the locus."""


class MissingFieldError(DataError):
    """A required field is absent from a dataset record."""


class BadGoldIndexError(DataError):
    """A record's gold answer index is outside its choice list."""


class EmptyPartitionError(DataError):
    """A modality filter left zero records to evaluate."""


# -- model gateway ----------------------------------------------------------

class GatewayError(RmrError):
    """Base class for endpoint failures; carries the attempt count."""

    def __init__(self, message: str, attempts: int = 1):
        super().__init__(message)
        self.attempts = attempts


class RequestTimeoutError(GatewayError):
    """The endpoint stayed unreachable or unresponsive through all retries."""


class AuthFailureError(GatewayError):
    """The endpoint rejected the request's credentials."""


class RateLimitedError(GatewayError):
    """The endpoint kept refusing with HTTP 429 through all retries."""


class MalformedResponseError(GatewayError):
    """The endpoint replied with something other than a usable completion."""
