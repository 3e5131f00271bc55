"""Exception types shared across the pipeline."""


class GrilinkError(Exception):
    """Base class for every error raised by this package."""


# ingest
class UnreadableInput(GrilinkError):
    pass


class SchemaMismatch(GrilinkError):
    pass


# network
class TransportError(GrilinkError):
    """A request did not complete (connection failure or server error)."""


class RateLimited(TransportError):
    def __init__(self, message: str, retry_after: float | None = None):
        super().__init__(message)
        self.retry_after = retry_after


class MalformedResponse(GrilinkError):
    pass


class NotFound(GrilinkError):
    pass


class ParseError(GrilinkError):
    """A search page did not have the expected structure."""


# probe
class InvalidInput(GrilinkError, ValueError):
    pass


class CheckpointCorrupt(GrilinkError):
    pass


# analytics / report
class EmptyInput(GrilinkError, ValueError):
    pass


class SpecMismatch(GrilinkError, ValueError):
    pass


# mock world
class FixtureInvalid(GrilinkError):
    pass


class InvalidMix(GrilinkError, ValueError):
    pass


class PortInUse(GrilinkError, OSError):
    pass


# cli
class ConfigError(GrilinkError):
    pass
