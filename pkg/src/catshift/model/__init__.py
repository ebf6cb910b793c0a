"""Target-model abstraction: wire-protocol client and offline simulator."""

from .base import (
    STATUS_FAILED,
    STATUS_PENDING,
    STATUS_RUNNING,
    STATUS_SUCCEEDED,
    Checkpoint,
    CheckpointChoice,
    CompletionRecord,
    Endpoint,
    FineTuneJob,
    FineTuneSpec,
    ModelRef,
    complete_batch,
    open_endpoint,
    select_checkpoint,
    wait_finetune,
)
from .sim import SimEndpoint, SimModelState, SimScenario, sim_complete, sim_finetune
from .http import HttpEndpoint

__all__ = [
    "STATUS_FAILED",
    "STATUS_PENDING",
    "STATUS_RUNNING",
    "STATUS_SUCCEEDED",
    "Checkpoint",
    "CheckpointChoice",
    "CompletionRecord",
    "Endpoint",
    "FineTuneJob",
    "FineTuneSpec",
    "HttpEndpoint",
    "ModelRef",
    "SimEndpoint",
    "SimModelState",
    "SimScenario",
    "complete_batch",
    "open_endpoint",
    "select_checkpoint",
    "sim_complete",
    "sim_finetune",
    "wait_finetune",
]
