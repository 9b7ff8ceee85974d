"""Checkpoint container.

Layout (all integers little-endian)::

    b"SIDLABCK"                 8-byte magic
    u64 header_length
    header                      UTF-8 JSON, keys sorted
    tensor data                 float64, C order, in header["tensors"] order
    sha256                      32-byte digest of everything above

The header holds ``format_version``, the model config, the token vocabulary,
head metadata (task, kind, gold field, label vocabulary), optimizer step
counts, the RNG state and an optional free-form ``config_echo``. Files are
byte-for-byte deterministic for a given state.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import asdict
from pathlib import Path
from typing import Any, Optional

import numpy as np

from .network import Head, ModelConfig, ModelState, Moments
from .vocab import Vocab

MAGIC = b"SIDLABCK"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


class CorruptCheckpoint(CheckpointError):
    pass


class VersionMismatch(CheckpointError):
    pass


def to_bytes(state: ModelState, config_echo: Optional[dict[str, Any]] = None) -> bytes:
    tensors: list[tuple[str, np.ndarray]] = list(state.named_parameters().items())
    for name in sorted(state.moments):
        tensors.append((f"opt.m.{name}", state.moments[name].m))
        tensors.append((f"opt.v.{name}", state.moments[name].v))
    header = {
        "format_version": FORMAT_VERSION,
        "config": asdict(state.config),
        "vocab": state.vocab.itos,
        "heads": {
            name: {
                "task": h.task,
                "kind": h.kind,
                "field": h.field,
                "labels": h.labels.itos if h.labels is not None else None,
                "params": sorted(h.params),
            }
            for name, h in sorted(state.heads.items())
        },
        "encoder_params": list(state.params),
        "moment_steps": {name: state.moments[name].t for name in sorted(state.moments)},
        "step_count": state.step_count,
        "rng_state": state.rng.bit_generator.state,
        "config_echo": config_echo or {},
        "tensors": [[name, list(arr.shape)] for name, arr in tensors],
    }
    head_bytes = json.dumps(header, sort_keys=True, ensure_ascii=False, separators=(",", ":")).encode("utf-8")
    body = bytearray(MAGIC)
    body += struct.pack("<Q", len(head_bytes))
    body += head_bytes
    for _, arr in tensors:
        body += np.ascontiguousarray(arr, dtype="<f8").tobytes()
    body += hashlib.sha256(body).digest()
    return bytes(body)


def from_bytes(data: bytes) -> tuple[ModelState, dict[str, Any]]:
    """Rebuild a state; returns ``(state, config_echo)``."""
    if len(data) < len(MAGIC) + 8 + 32 or data[: len(MAGIC)] != MAGIC:
        raise CorruptCheckpoint("not a checkpoint file or truncated header")
    body, digest = data[:-32], data[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise CorruptCheckpoint("checksum mismatch (file truncated or modified)")
    (hlen,) = struct.unpack("<Q", body[8:16])
    try:
        header = json.loads(body[16 : 16 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as err:
        raise CorruptCheckpoint(f"unreadable header: {err}") from None
    if header.get("format_version") != FORMAT_VERSION:
        raise VersionMismatch(f"checkpoint version {header.get('format_version')}, expected {FORMAT_VERSION}")
    offset = 16 + hlen
    arrays = {}
    for name, shape in header["tensors"]:
        count = int(np.prod(shape)) if shape else 1
        end = offset + 8 * count
        if end > len(body):
            raise CorruptCheckpoint(f"tensor {name} runs past the end of the file")
        arrays[name] = np.frombuffer(body[offset:end], dtype="<f8").astype(np.float64).reshape(shape)
        offset = end
    if offset != len(body):
        raise CorruptCheckpoint("trailing bytes after tensor data")

    rng = np.random.default_rng()
    rng.bit_generator.state = header["rng_state"]
    state = ModelState(
        config=ModelConfig(**header["config"]),
        vocab=Vocab(header["vocab"], reserved=True),
        params={k: arrays[f"enc.{k}"] for k in header["encoder_params"]},
        rng=rng,
        step_count=header["step_count"],
    )
    for name, meta in header["heads"].items():
        labels = Vocab(meta["labels"]) if meta["labels"] is not None else None
        params = {k: arrays[f"head.{name}.{k}"] for k in meta["params"]}
        state.heads[name] = Head(meta["task"], meta["kind"], meta["field"], labels, params)
    for name, t in header["moment_steps"].items():
        state.moments[name] = Moments(arrays[f"opt.m.{name}"], arrays[f"opt.v.{name}"], t)
    return state, header["config_echo"]


def save_model(state: ModelState, path: str | Path, config_echo: Optional[dict[str, Any]] = None) -> None:
    Path(path).write_bytes(to_bytes(state, config_echo))


def load_model(path: str | Path) -> ModelState:
    return load_model_with_echo(path)[0]


def load_model_with_echo(path: str | Path) -> tuple[ModelState, dict[str, Any]]:
    return from_bytes(Path(path).read_bytes())
