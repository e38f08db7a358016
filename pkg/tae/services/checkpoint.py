"""
Binary checkpoint codec.

Layout (little-endian)::

    b"TAE1" | version u32 | record count u32
    record*: name_len u16 | name utf-8 | dtype u8 | rank u8 | extents u32*rank | payload
    crc32 u32 over everything before it

dtype tags: 0 = f64 tensor, 1 = i64 tensor, 2 = utf-8 text (rank 1, extent = byte length).
Writes go to a temporary file that is renamed into place.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import structlog
import torch
from torch import Tensor, nn

from tae.config import EngineConfig, Mode, parse_config
from tae.errors import (
    CheckpointChecksumError,
    CheckpointFormatError,
    CheckpointTruncatedError,
    CheckpointVersionError,
)
from tae.services.enhancement import Enhancer, GuidanceNets, PredictorNet, build_networks
from tae.services.optimizer import AdamW
from tae.services.tensor_core import DTYPE

logger = structlog.get_logger(__name__)

MAGIC = b"TAE1"
FORMAT_VERSION = 1

_F64, _I64, _TEXT = 0, 1, 2
_HEADER = struct.Struct("<4sII")
_CRC = struct.Struct("<I")


@dataclass
class Checkpoint:
    params: dict[str, Tensor]
    moments: dict[str, tuple[Tensor, Tensor]] = field(default_factory=dict)
    step: int = 0
    config: dict[str, Any] = field(default_factory=dict)
    version: int = FORMAT_VERSION


# ── Capture / restore ───────────────────────────────────────────────────────

def named_parameters(guidance: GuidanceNets, predictor: PredictorNet) -> dict[str, nn.Parameter]:
    named = {f"guidance.{n}": p for n, p in guidance.named_parameters()}
    named.update({f"predictor.{n}": p for n, p in predictor.named_parameters()})
    return named


def capture(
    guidance: GuidanceNets,
    predictor: PredictorNet,
    cfg: EngineConfig,
    optimizer: AdamW | None = None,
) -> Checkpoint:
    named = named_parameters(guidance, predictor)
    moments: dict[str, tuple[Tensor, Tensor]] = {}
    if optimizer is not None:
        for name, p in named.items():
            if optimizer.state.get(p):
                m, v = optimizer.moments(p)
                moments[name] = (m.detach().clone(), v.detach().clone())
    return Checkpoint(
        params={n: p.detach().clone() for n, p in named.items()},
        moments=moments,
        step=optimizer.step_count if optimizer is not None else 0,
        config=cfg.model_dump(mode="json"),
    )


def restore_networks(ckpt: Checkpoint, guidance: GuidanceNets, predictor: PredictorNet) -> None:
    named = named_parameters(guidance, predictor)
    missing = sorted(set(named) - set(ckpt.params))
    extra = sorted(set(ckpt.params) - set(named))
    if missing or extra:
        raise CheckpointFormatError(f"parameter mismatch: missing={missing} unexpected={extra}")
    with torch.no_grad():
        for name, p in named.items():
            src = ckpt.params[name]
            if src.shape != p.shape:
                raise CheckpointFormatError(f"{name}: shape {tuple(src.shape)} != {tuple(p.shape)}")
            p.copy_(src)


def restore_optimizer(
    ckpt: Checkpoint, optimizer: AdamW, guidance: GuidanceNets, predictor: PredictorNet
) -> None:
    named = named_parameters(guidance, predictor)
    for name, (m, v) in ckpt.moments.items():
        if name not in named:
            raise CheckpointFormatError(f"optimizer state for unknown parameter {name}")
        dst_m, dst_v = optimizer.moments(named[name])
        dst_m.copy_(m)
        dst_v.copy_(v)
    optimizer.step_count = ckpt.step


def load_enhancer(path: Path | str, mode: Mode | None = None) -> Enhancer:
    """Rebuild the networks recorded in a checkpoint and wrap them for inference."""
    ckpt = load_checkpoint(path)
    cfg = parse_config(ckpt.config)
    guidance, predictor = build_networks(cfg)
    restore_networks(ckpt, guidance, predictor)
    return Enhancer(guidance, predictor, mode or cfg.train.mode)


# ── Encoding ────────────────────────────────────────────────────────────────

def _encode_record(name: str, tag: int, extents: tuple[int, ...], payload: bytes) -> bytes:
    raw_name = name.encode("utf-8")
    head = struct.pack("<H", len(raw_name)) + raw_name + struct.pack("<BB", tag, len(extents))
    head += struct.pack(f"<{len(extents)}I", *extents)
    return head + payload


def _tensor_record(name: str, t: Tensor) -> bytes:
    arr = t.detach().to(DTYPE).contiguous().numpy().astype("<f8", copy=False)
    return _encode_record(name, _F64, tuple(arr.shape), arr.tobytes())


def encode_checkpoint(ckpt: Checkpoint) -> bytes:
    records = [_tensor_record(f"param/{n}", t) for n, t in ckpt.params.items()]
    for name, (m, v) in ckpt.moments.items():
        records.append(_tensor_record(f"opt.m/{name}", m))
        records.append(_tensor_record(f"opt.v/{name}", v))
    records.append(_encode_record("step", _I64, (), struct.pack("<q", ckpt.step)))
    text = json.dumps(ckpt.config, sort_keys=True).encode("utf-8")
    records.append(_encode_record("config", _TEXT, (len(text),), text))

    body = _HEADER.pack(MAGIC, ckpt.version, len(records)) + b"".join(records)
    return body + _CRC.pack(zlib.crc32(body) & 0xFFFFFFFF)


def save_checkpoint(path: Path | str, ckpt: Checkpoint) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    data = encode_checkpoint(ckpt)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise
    logger.info("checkpoint_saved", path=str(path), bytes=len(data), step=ckpt.step)
    return path


# ── Decoding ────────────────────────────────────────────────────────────────

class _Reader:
    def __init__(self, data: bytes, offset: int, end: int) -> None:
        self.data, self.offset, self.end = data, offset, end

    def take(self, n: int) -> bytes:
        if self.offset + n > self.end:
            raise CheckpointTruncatedError("record runs past end of file")
        chunk = self.data[self.offset : self.offset + n]
        self.offset += n
        return chunk

    def unpack(self, fmt: str) -> tuple:
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def decode_checkpoint(data: bytes) -> Checkpoint:
    prefix = data[: len(MAGIC)]
    if prefix != MAGIC[: len(prefix)]:
        raise CheckpointFormatError("not a checkpoint file (bad magic)")
    if len(data) < _HEADER.size + _CRC.size:
        raise CheckpointTruncatedError(f"file is {len(data)} bytes, shorter than the fixed header")

    body, (stored_crc,) = data[: -_CRC.size], _CRC.unpack(data[-_CRC.size :])
    if zlib.crc32(body) & 0xFFFFFFFF != stored_crc:
        raise CheckpointChecksumError("CRC32 mismatch; file is truncated or corrupt")
    _, version, count = _HEADER.unpack(body[: _HEADER.size])
    if version != FORMAT_VERSION:
        raise CheckpointVersionError(f"checkpoint version {version}, expected {FORMAT_VERSION}")

    reader = _Reader(body, _HEADER.size, len(body))
    ckpt = Checkpoint(params={}, version=version)
    m_buffers: dict[str, Tensor] = {}
    v_buffers: dict[str, Tensor] = {}
    for _ in range(count):
        (name_len,) = reader.unpack("<H")
        name = reader.take(name_len).decode("utf-8")
        tag, rank = reader.unpack("<BB")
        extents = reader.unpack(f"<{rank}I") if rank else ()
        size = int(np.prod(extents)) if extents else 1
        if tag == _F64:
            arr = np.frombuffer(reader.take(8 * size), dtype="<f8").reshape(extents)
            tensor = torch.from_numpy(arr.astype(np.float64, copy=True))
            kind, _, key = name.partition("/")
            target = {"param": ckpt.params, "opt.m": m_buffers, "opt.v": v_buffers}.get(kind)
            if target is None:
                raise CheckpointFormatError(f"unknown tensor record {name!r}")
            target[key] = tensor
        elif tag == _I64:
            (value,) = struct.unpack("<q", reader.take(8))
            if name == "step":
                ckpt.step = value
        elif tag == _TEXT:
            text = reader.take(size).decode("utf-8")
            if name == "config":
                ckpt.config = json.loads(text)
        else:
            raise CheckpointFormatError(f"record {name!r} has unknown dtype tag {tag}")
    if reader.offset != len(body):
        raise CheckpointFormatError("trailing bytes after last record")

    if set(m_buffers) != set(v_buffers):
        raise CheckpointFormatError("optimizer first/second moments do not pair up")
    ckpt.moments = {n: (m_buffers[n], v_buffers[n]) for n in m_buffers}
    return ckpt


def load_checkpoint(path: Path | str) -> Checkpoint:
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise CheckpointFormatError(f"cannot read checkpoint {path}: {exc.strerror or exc}") from exc
    ckpt = decode_checkpoint(data)
    logger.debug("checkpoint_loaded", path=str(path), params=len(ckpt.params), step=ckpt.step)
    return ckpt
