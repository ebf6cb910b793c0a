"""catshift: label-only dataset-inference auditing for language models.

Decides whether a suspicious text corpus was part of a model's training
data using only top-1 completions: fine-tune the model on part of the
corpus, measure how much its outputs shift on the held-out part, and
compare that shift distribution against a known non-member validation
baseline with a two-sample hypothesis test.
"""

__version__ = "0.1.0"

from .errors import (
    AuditError,
    CatShiftError,
    CorpusError,
    EndpointError,
    ProtocolError,
    TransportError,
)

__all__ = [
    "__version__",
    "AuditError",
    "CatShiftError",
    "CorpusError",
    "EndpointError",
    "ProtocolError",
    "TransportError",
]
