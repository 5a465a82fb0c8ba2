from .base import (
    ORIGIN_BUFFER,
    ORIGIN_GENERATED,
    DecodingParams,
    PolicyHandle,
    ScoreResult,
    Trajectory,
    UpdateItem,
    nucleus_filter,
)
from .external import ExternalPolicy
from .toy import ToyPolicy

__all__ = [
    "DecodingParams",
    "Trajectory",
    "ScoreResult",
    "UpdateItem",
    "PolicyHandle",
    "ToyPolicy",
    "ExternalPolicy",
    "nucleus_filter",
    "ORIGIN_GENERATED",
    "ORIGIN_BUFFER",
]
