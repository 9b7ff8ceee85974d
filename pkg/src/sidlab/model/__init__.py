"""Small multi-task network trained from scratch in numpy."""

from .checkpoint import CorruptCheckpoint, VersionMismatch, load_model, save_model
from .network import (
    HEAD_KINDS,
    TASK_HEADS,
    Batch,
    EmptyBatch,
    EmptySentence,
    Head,
    ModelConfig,
    ModelState,
    UnknownTask,
    add_task_heads,
    encode,
    greedy_heads,
    init_model,
    label_vocabs,
    mask_batch,
    mask_tokens,
    predict,
    task_loss,
)
from .optim import AdamConfig, optimizer_step
from .vocab import Vocab

__all__ = [
    "HEAD_KINDS",
    "TASK_HEADS",
    "AdamConfig",
    "Batch",
    "CorruptCheckpoint",
    "EmptyBatch",
    "EmptySentence",
    "Head",
    "ModelConfig",
    "ModelState",
    "UnknownTask",
    "VersionMismatch",
    "Vocab",
    "add_task_heads",
    "encode",
    "greedy_heads",
    "init_model",
    "label_vocabs",
    "load_model",
    "mask_batch",
    "mask_tokens",
    "optimizer_step",
    "predict",
    "save_model",
    "task_loss",
]
