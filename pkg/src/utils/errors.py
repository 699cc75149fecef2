class MellmError(Exception):
    """Base class; `code` is the machine-readable tag printed by the CLI."""

    code = "mellm_error"


class DimensionMismatchError(MellmError, ValueError):
    code = "dimension_mismatch"


class ImageTooSmallError(MellmError, ValueError):
    code = "image_too_small"


class FloFormatError(MellmError, ValueError):
    code = "flo_format"


class InvalidConfigError(MellmError, ValueError):
    code = "invalid_config"


class LandmarkError(MellmError, ValueError):
    code = "landmark_error"


class RoiError(MellmError, ValueError):
    code = "roi_error"


class PromptFormatError(MellmError, ValueError):
    code = "prompt_format"


class MetricError(MellmError, ValueError):
    code = "metric_error"


class EmptyClassError(MetricError):
    """A class has no ground-truth samples, so its recall is undefined."""

    code = "empty_class"


class UnknownLabelError(MetricError):
    code = "unknown_label"


class EndpointError(MellmError, RuntimeError):
    code = "endpoint_error"


class RetryExhaustedError(EndpointError):
    code = "retry_exhausted"

    def __init__(self, message: str, attempts: int, last_error: str | None = None):
        self.attempts = attempts
        self.last_error = last_error
        super().__init__(message)


class AuthenticationError(EndpointError):
    code = "authentication_failed"


class MalformedResponseError(EndpointError):
    code = "malformed_response"
