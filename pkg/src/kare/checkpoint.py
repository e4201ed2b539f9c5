"""Versioned single-file checkpoints.

Layout (little-endian throughout)::

    b"KARE"  u32 version
    u32 len  config text (canonical ``section.key = value`` lines, UTF-8)
    u32 len  metadata JSON (sorted keys)
    u32 len  vocabulary JSON (tokens in index order)
    u32 count
    count × { u32 len, name; u32 ndim; ndim × u32 dim; prod(dims) × f64 }

Nothing time-dependent is written, so the same training run always yields the
same bytes.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, BinaryIO, Dict, List, Optional

import numpy as np
import torch

from kare.config import ModelConfig
from kare.embedding import EmbeddingTable
from kare.errors import CheckpointError, ConfigError
from kare.model import GatedKBert

MAGIC = b"KARE"
VERSION = 1


@dataclass
class Checkpoint:
    config: ModelConfig
    model: GatedKBert
    table: EmbeddingTable
    metadata: Dict[str, Any] = field(default_factory=dict)


def _u32(value: int) -> bytes:
    return struct.pack("<I", value)


def _blob(data: bytes) -> bytes:
    return _u32(len(data)) + data


def to_bytes(ckpt: Checkpoint) -> bytes:
    parts: List[bytes] = [MAGIC, _u32(VERSION)]
    parts.append(_blob(ckpt.config.to_text().encode("utf-8")))
    meta = json.dumps(ckpt.metadata, sort_keys=True, ensure_ascii=False)
    parts.append(_blob(meta.encode("utf-8")))
    parts.append(_blob(json.dumps(ckpt.table.tokens, ensure_ascii=False).encode()))
    state = ckpt.model.state_dict()
    parts.append(_u32(len(state)))
    for name, tensor in state.items():
        arr = tensor.detach().cpu().numpy().astype("<f8")
        parts.append(_blob(name.encode("utf-8")))
        parts.append(_u32(arr.ndim))
        parts.extend(_u32(d) for d in arr.shape)
        parts.append(arr.tobytes())
    return b"".join(parts)


def save(ckpt: Checkpoint, path: Path | str) -> Path:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    p.write_bytes(to_bytes(ckpt))
    return p


class _Reader:
    def __init__(self, fh: BinaryIO) -> None:
        self.fh = fh

    def take(self, n: int) -> bytes:
        data = self.fh.read(n)
        if len(data) != n:
            raise CheckpointError("truncated checkpoint")
        return data

    def u32(self) -> int:
        return int(struct.unpack("<I", self.take(4))[0])

    def blob(self) -> bytes:
        return self.take(self.u32())


def load(path: Path | str) -> Checkpoint:
    """Read a checkpoint written by :func:`save` and rebuild its model."""
    p = Path(path)
    with p.open("rb") as fh:
        r = _Reader(fh)
        if r.take(4) != MAGIC:
            raise CheckpointError(f"{p}: not a kare checkpoint")
        version = r.u32()
        if version != VERSION:
            raise CheckpointError(f"{p}: unsupported checkpoint version {version}")
        try:
            cfg = ModelConfig.from_text(r.blob().decode("utf-8"), source=str(p))
        except ConfigError as e:
            raise CheckpointError(f"{p}: bad embedded config: {e}") from None
        metadata = json.loads(r.blob().decode("utf-8"))
        tokens = json.loads(r.blob().decode("utf-8"))
        state: Dict[str, torch.Tensor] = {}
        for _ in range(r.u32()):
            name = r.blob().decode("utf-8")
            dims = [r.u32() for _ in range(r.u32())]
            count = int(np.prod(dims)) if dims else 1
            arr = np.frombuffer(r.take(8 * count), dtype="<f8").reshape(dims)
            state[name] = torch.from_numpy(arr.astype(np.float64))
        if fh.read(1):
            raise CheckpointError(f"{p}: trailing bytes after tensors")
    matrix = np.zeros((len(tokens), cfg.embedding.dim), dtype=np.float64)
    table = EmbeddingTable(vocab={t: i for i, t in enumerate(tokens)}, matrix=matrix)
    context_dim: Optional[int] = metadata.get("context_dim")
    try:
        model = GatedKBert(cfg, table, context_dim=context_dim)
        model.load_state_dict(state, strict=True)
    except (KeyError, RuntimeError) as e:
        raise CheckpointError(f"{p}: tensors do not match the config: {e}") from None
    if model.words is not None:
        table.matrix = model.words.matrix()
    model.eval()
    return Checkpoint(config=cfg, model=model, table=table, metadata=metadata)
