"""Exception hierarchy shared across the package.

Every error carries a stable ``code`` string, which is what the HTTP service
puts in per-patch error objects and what the CLI prints on stderr.
"""


class WsiEmbedError(Exception):
    code = "Error"

    def __init__(self, message="", **details):
        super().__init__(message)
        self.message = message
        self.details = details

    def to_dict(self):
        return {"code": self.code, "message": self.message}


# container / tiling
class MalformedContainer(WsiEmbedError):
    code = "MalformedContainer"


class UnsupportedTransferSyntax(WsiEmbedError):
    code = "UnsupportedTransferSyntax"


class UnsupportedOrganization(WsiEmbedError):
    code = "UnsupportedOrganization"


class FrameOutOfRange(WsiEmbedError):
    code = "FrameOutOfRange"


class DecodeFailure(WsiEmbedError):
    code = "DecodeFailure"


class PatchOutOfBounds(WsiEmbedError):
    code = "PatchOutOfBounds"


# encoder
class BadPatchShape(WsiEmbedError):
    code = "BadPatchShape"

    def __init__(self, message="", index=None, **details):
        super().__init__(message, **details)
        self.index = index


class UnknownEncoder(WsiEmbedError):
    code = "UnknownEncoder"


# ingestion
class BadBase64(WsiEmbedError):
    code = "BadBase64"


class BadImage(WsiEmbedError):
    code = "BadImage"


class UnsupportedFormat(WsiEmbedError):
    code = "UnsupportedFormat"


class FetchFailed(WsiEmbedError):
    code = "FetchFailed"

    def __init__(self, message="", status=None, **details):
        super().__init__(message, **details)
        self.status = status


# service
class MalformedRequest(WsiEmbedError):
    code = "MalformedRequest"
    http_status = 400


class RequestTooLarge(WsiEmbedError):
    code = "RequestTooLarge"
    http_status = 413


# bench
class TargetUnreachable(WsiEmbedError):
    code = "TargetUnreachable"


class NonPositiveInput(WsiEmbedError, ValueError):
    code = "NonPositiveInput"


# analytics
class SingleClass(WsiEmbedError, ValueError):
    code = "SingleClass"


class NonFiniteInput(WsiEmbedError, ValueError):
    code = "NonFiniteInput"


class FractionTooSmall(WsiEmbedError, ValueError):
    code = "FractionTooSmall"


class TooFewPoints(WsiEmbedError, ValueError):
    code = "TooFewPoints"


# cli / config
class ConfigError(WsiEmbedError):
    code = "ConfigError"


class UnknownSubcommand(WsiEmbedError):
    code = "UnknownSubcommand"


class BadFlag(WsiEmbedError):
    code = "BadFlag"


class DeadlineExceeded(WsiEmbedError):
    code = "DeadlineExceeded"
