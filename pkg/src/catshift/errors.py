"""Exception hierarchy shared across the toolkit."""


class CatShiftError(Exception):
    """Base class for all domain errors raised by this package."""


class CorpusError(CatShiftError):
    """Corpus ingestion, pairing, or split construction failed."""


class TransportError(CatShiftError):
    """A network operation failed after exhausting the retry policy."""


class EndpointError(CatShiftError):
    """The remote endpoint rejected a request (4xx with a message)."""

    def __init__(self, status: int, message: str):
        super().__init__(f"endpoint error {status}: {message}")
        self.status = status
        self.message = message


class ProtocolError(CatShiftError):
    """The endpoint violated the model-adapter wire protocol.

    Raised in particular when a completion response carries probability
    signals; the auditing pipeline must never consume those.
    """


class AuditError(CatShiftError):
    """An audit could not produce a trustworthy verdict."""
