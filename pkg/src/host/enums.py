from enum import Enum


class Outcome(str, Enum):
    FOUND = "found"
    NOT_FOUND = "not_found"
    ABORTED = "aborted"


class AbortReason(str, Enum):
    PRE_CHECK = "pre_check"
    POST_CHECK = "post_check"
    VERSION_MISMATCH = "version_mismatch"
    FUNCTION_FALLBACK = "function_fallback"
    FUNCTION_ERROR = "function_error"
    IO_ERROR = "io_error"
    LIMIT_EXCEEDED = "limit_exceeded"
    TRANSPORT = "transport"
