class PopeError(Exception):
    """Base class for every error raised by the package."""

    code = 1

    def __init__(self, detail: str):
        super().__init__(detail)
        self.detail = detail


class ConfigError(PopeError):
    code = 2


class EncodingError(PopeError):
    code = 10


class PayloadIntegrityError(PopeError):
    code = 11


class InvalidRangeError(PopeError):
    code = 12


class ProtocolViolation(PopeError):
    code = 20


class FramingError(PopeError):
    code = 21


class SessionError(PopeError):
    code = 30


class LeakageIntegrityError(PopeError):
    code = 40


class IngestionError(PopeError):
    code = 50


ERRORS_BY_CODE = {
    cls.code: cls
    for cls in (
        PopeError,
        ConfigError,
        EncodingError,
        PayloadIntegrityError,
        InvalidRangeError,
        ProtocolViolation,
        FramingError,
        SessionError,
        LeakageIntegrityError,
        IngestionError,
    )
}
