"""Checkpoint persistence and classifier-replacing transfer.

Checkpoint layout (little-endian)::

    b"LWCK" | u32 version | u32 tensor count
    per tensor: u16 name length | UTF-8 name | u8 rank | rank x u32 extents | f32 values
    u32 metadata length | UTF-8 metadata (JSON)
"""

from __future__ import annotations

import json
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .models import ModelConfig, ModelGraph
from .training import OptimizerConfig, train

log = logging.getLogger(__name__)

MAGIC = b"LWCK"
VERSION = 1
CLASSIFIER_PREFIX = "fc."


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    tensors: dict[str, np.ndarray]
    metadata: dict
    version: int = VERSION

    @property
    def model_config(self) -> ModelConfig:
        return ModelConfig.from_dict(self.metadata["model"])

    @property
    def arch(self) -> str:
        return self.metadata["model"]["arch"]

    @property
    def num_classes(self) -> int:
        return int(self.metadata["model"]["num_classes"])

    def to_bytes(self) -> bytes:
        out = [MAGIC, struct.pack("<2I", self.version, len(self.tensors))]
        for name, arr in self.tensors.items():
            raw = name.encode("utf-8")
            out.append(struct.pack("<H", len(raw)) + raw)
            out.append(struct.pack(f"<B{arr.ndim}I", arr.ndim, *arr.shape))
            out.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
        meta = json.dumps(self.metadata, sort_keys=True, separators=(",", ":")).encode("utf-8")
        out.append(struct.pack("<I", len(meta)) + meta)
        return b"".join(out)

    @classmethod
    def from_bytes(cls, buf: bytes) -> "Checkpoint":
        try:
            if buf[:4] != MAGIC:
                raise CheckpointError("not an LWCK checkpoint")
            version, count = struct.unpack_from("<2I", buf, 4)
            if version != VERSION:
                raise CheckpointError(f"unsupported checkpoint version {version}")
            pos = 12
            tensors = {}
            for _ in range(count):
                (n,) = struct.unpack_from("<H", buf, pos)
                name = buf[pos + 2 : pos + 2 + n].decode("utf-8")
                pos += 2 + n
                rank = buf[pos]
                shape = struct.unpack_from(f"<{rank}I", buf, pos + 1)
                pos += 1 + 4 * rank
                size = int(np.prod(shape, dtype=np.int64))
                tensors[name] = np.frombuffer(buf, "<f4", size, pos).reshape(shape).astype(np.float32)
                pos += 4 * size
            (m,) = struct.unpack_from("<I", buf, pos)
            metadata = json.loads(buf[pos + 4 : pos + 4 + m].decode("utf-8"))
            if pos + 4 + m != len(buf):
                raise CheckpointError("trailing bytes after checkpoint metadata")
        except (struct.error, IndexError, ValueError) as exc:
            if isinstance(exc, CheckpointError):
                raise
            raise CheckpointError(f"corrupt checkpoint: {exc}") from None
        return cls(tensors, metadata, version)


def save_checkpoint(model: ModelGraph, meta: dict | None = None) -> bytes:
    """Serialize parameters and BN running statistics with metadata."""
    metadata = {"model": model.config.to_dict(), "format": "lwnet3d"}
    metadata.update(meta or {})
    return Checkpoint(dict(model.state_dict()), metadata).to_bytes()


def write_checkpoint(model: ModelGraph, path, meta: dict | None = None) -> None:
    Path(path).write_bytes(save_checkpoint(model, meta))


def read_checkpoint(path) -> Checkpoint:
    return Checkpoint.from_bytes(Path(path).read_bytes())


def model_from_checkpoint(ckpt: Checkpoint) -> ModelGraph:
    model = ModelGraph(ckpt.model_config)
    expected = set(model.state_dict())
    if expected != set(ckpt.tensors):
        missing = sorted(expected - set(ckpt.tensors))
        extra = sorted(set(ckpt.tensors) - expected)
        raise CheckpointError(f"tensor names mismatch; missing {missing[:5]}, unexpected {extra[:5]}")
    for name, value in ckpt.tensors.items():
        model.load_state(name, value)
    return model.eval()


def load_checkpoint(buf: bytes) -> ModelGraph:
    return model_from_checkpoint(Checkpoint.from_bytes(buf))


@dataclass
class TransferPlan:
    num_classes: int
    exclude: tuple[str, ...] = (CLASSIFIER_PREFIX,)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)

    def excluded(self, name: str) -> bool:
        return any(name.startswith(p) for p in self.exclude)


@dataclass
class TransferReport:
    transferred: list[str]
    reinitialized: list[str]


def load_transfer(ckpt: Checkpoint, plan: TransferPlan, seed: int = 0,
                  report: TransferReport | None = None) -> ModelGraph:
    """Target model whose non-excluded tensors are copied from ``ckpt``.

    Excluded tensors (the classifier by default) keep their fresh seeded
    initialization for ``plan.num_classes`` outputs.
    """
    cfg = ckpt.model_config
    cfg.num_classes = plan.num_classes
    cfg.seed = seed
    model = ModelGraph(cfg)
    target = model.state_dict()
    transferred, reinit = [], []
    for name, value in target.items():
        if plan.excluded(name):
            reinit.append(name)
            continue
        if name not in ckpt.tensors:
            raise CheckpointError(f"checkpoint lacks tensor {name}")
        if ckpt.tensors[name].shape != value.shape:
            raise CheckpointError(
                f"{name}: checkpoint shape {ckpt.tensors[name].shape} != model {value.shape}"
            )
        model.load_state(name, ckpt.tensors[name])
        transferred.append(name)
    unknown = [n for n in ckpt.tensors if n not in target]
    if unknown:
        raise CheckpointError(f"checkpoint tensors unknown to {cfg.arch}: {unknown[:5]}")
    log.info("transferred %d tensors, reinitialized %s", len(transferred), reinit)
    if report is not None:
        report.transferred[:] = transferred
        report.reinitialized[:] = reinit
    return model


def fine_tune(model: ModelGraph, train_set, val_set, cfg: OptimizerConfig):
    """Train every layer at one learning rate; nothing is frozen."""
    return train(model, train_set, val_set, cfg)
