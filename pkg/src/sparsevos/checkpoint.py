"""Model checkpoints: a small binary container for named float32 arrays.

Layout (all integers little-endian):

    magic "TSVL" | version u32 | iteration u64 | phase tag u8 | count u32
    then per entry, in sorted name order:
        name_len u16 | name utf-8 | rank u8 | dims u32 * rank | float32 data

Weights are stored and loaded as float32 exactly, so a save/load
round-trip is bitwise.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .autodiff import ParameterSet, Tensor

CKPT_MAGIC = b"TSVL"
CKPT_VERSION = 1

PHASE_TAGS = {"init": 0, "phase1": 1, "phase2": 2, "baseline": 3, "oracle": 4}
_TAG_NAMES = {v: k for k, v in PHASE_TAGS.items()}

_MAX_RANK = 8


def save_checkpoint(path, params, iteration, phase):
    if phase not in PHASE_TAGS:
        raise ValueError(f"unknown phase {phase!r}; expected one of {sorted(PHASE_TAGS)}")
    if iteration < 0:
        raise ValueError(f"iteration must be non-negative, got {iteration}")
    chunks = [struct.pack("<4sIQBI", CKPT_MAGIC, CKPT_VERSION, iteration,
                          PHASE_TAGS[phase], len(params.names()))]
    for name in params.names():
        # asarray keeps 0-d shapes; ascontiguousarray would promote them to (1,)
        data = np.asarray(params[name].data, dtype=np.float32, order="C")
        raw = name.encode("utf-8")
        if len(raw) > 0xFFFF:
            raise ValueError(f"parameter name too long: {name[:32]}...")
        if data.ndim > _MAX_RANK:
            raise ValueError(f"parameter {name} has rank {data.ndim}, max {_MAX_RANK}")
        chunks.append(struct.pack("<H", len(raw)))
        chunks.append(raw)
        chunks.append(struct.pack("<B", data.ndim))
        chunks.append(struct.pack(f"<{data.ndim}I", *data.shape))
        chunks.append(data.astype("<f4", copy=False).tobytes())
    Path(path).write_bytes(b"".join(chunks))


class _Reader:
    def __init__(self, blob, source):
        self.blob = blob
        self.source = source
        self.offset = 0

    def take(self, fmt):
        size = struct.calcsize(fmt)
        if self.offset + size > len(self.blob):
            raise ValueError(f"truncated checkpoint {self.source} at byte {self.offset}")
        out = struct.unpack_from(fmt, self.blob, self.offset)
        self.offset += size
        return out

    def take_bytes(self, size):
        if self.offset + size > len(self.blob):
            raise ValueError(f"truncated checkpoint {self.source} at byte {self.offset}")
        out = self.blob[self.offset:self.offset + size]
        self.offset += size
        return out


def load_checkpoint(path):
    """Returns (params, iteration, phase)."""
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    reader = _Reader(p.read_bytes(), str(path))
    magic, version, iteration, tag, count = reader.take("<4sIQBI")
    if magic != CKPT_MAGIC:
        raise ValueError(f"{path}: bad checkpoint magic {magic!r}")
    if version != CKPT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    if tag not in _TAG_NAMES:
        raise ValueError(f"{path}: unknown phase tag {tag}")
    params = ParameterSet()
    for _ in range(count):
        (name_len,) = reader.take("<H")
        name = reader.take_bytes(name_len).decode("utf-8")
        (rank,) = reader.take("<B")
        if rank > _MAX_RANK:
            raise ValueError(f"{path}: parameter {name} has rank {rank}, max {_MAX_RANK}")
        shape = reader.take(f"<{rank}I")
        n = 1
        for dim in shape:
            n *= dim
        data = np.frombuffer(reader.take_bytes(4 * n), dtype="<f4").reshape(shape)
        params.add(name, Tensor(data.astype(np.float32), requires_grad=True))
    if reader.offset != len(reader.blob):
        raise ValueError(f"{path}: trailing data after byte {reader.offset}")
    return params, iteration, _TAG_NAMES[tag]


def resolve_checkpoint(path, prefer="model"):
    """Accepts either a checkpoint file or a run directory.

    A directory is resolved to <dir>/<prefer>.tsvl; prefer is "model" or
    "teacher". Falls back to model.tsvl when teacher.tsvl is absent.
    """
    p = Path(path)
    if p.is_dir():
        candidate = p / f"{prefer}.tsvl"
        if prefer == "teacher" and not candidate.is_file():
            candidate = p / "model.tsvl"
        return candidate
    return p
