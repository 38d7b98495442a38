"""Exception hierarchy shared by all seclog modules."""


class SeclogError(Exception):
    """Base class for every error raised by this package."""


# lmu_format

class BadParams(SeclogError):
    pass


class ParseError(SeclogError):
    """Raised when a byte sequence cannot be decoded into a valid structure."""


class BadMagic(ParseError):
    pass


class BadVersion(ParseError):
    pass


class Truncated(ParseError):
    pass


class InvariantViolation(ParseError):
    pass


class CapacityExceeded(SeclogError):
    pass


class SeqMismatch(SeclogError):
    pass


# records / secmod

class MalformedRecord(ParseError):
    pass


class RecordTooLarge(SeclogError):
    pass


class AuthError(SeclogError):
    """Authenticated decryption failed. Deliberately carries no detail."""

    def __init__(self) -> None:
        super().__init__("authentication failed")


class BadCredential(ParseError):
    pass


# controller

class InvalidTransition(SeclogError):
    pass


class IntegrityMismatch(SeclogError):
    pass


# porting

class ExportRefused(SeclogError):
    def __init__(self, reason: str) -> None:
        super().__init__(f"export refused: {reason}")
        self.reason = reason


# simnet

class BadConfig(SeclogError):
    pass


class UnknownLink(BadConfig):
    pass


class FrameError(ParseError):
    pass
