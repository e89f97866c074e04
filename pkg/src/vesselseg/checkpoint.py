"""Versioned binary checkpoint container.

Layout (all integers little-endian):

    magic "VSEGHACW" | u32 version | u32 len + config JSON (utf-8)
    | u32 entry count | entries | sha256 digest of everything above

Each entry: u32 len + parameter name (utf-8) | u8 rank | u32 dims...
| float32 little-endian data. BatchNorm ``num_batches_tracked`` counters are
excluded; they do not affect inference or fixed-momentum training.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np
import torch

from .errors import ConfigError, DataError
from .model import HacConfig, HacNet

MAGIC = b"VSEGHACW"
VERSION = 1

_EXCLUDED_SUFFIX = "num_batches_tracked"


def _payload_state(model: HacNet) -> dict[str, torch.Tensor]:
    return {k: v for k, v in model.state_dict().items() if not k.endswith(_EXCLUDED_SUFFIX)}


def checkpoint_bytes(model: HacNet) -> bytes:
    cfg_blob = json.dumps(model.cfg.to_dict(), sort_keys=True).encode("utf-8")
    out = bytearray()
    out += MAGIC
    out += struct.pack("<I", VERSION)
    out += struct.pack("<I", len(cfg_blob)) + cfg_blob
    state = _payload_state(model)
    out += struct.pack("<I", len(state))
    for name, tensor in state.items():
        blob = name.encode("utf-8")
        arr = tensor.detach().cpu().numpy().astype("<f4")
        out += struct.pack("<I", len(blob)) + blob
        out += struct.pack("<B", arr.ndim)
        out += struct.pack(f"<{arr.ndim}I", *arr.shape) if arr.ndim else b""
        out += arr.tobytes(order="C")
    out += hashlib.sha256(bytes(out)).digest()
    return bytes(out)


def save_checkpoint(model: HacNet, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(checkpoint_bytes(model))


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise DataError("checkpoint truncated")
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def u8(self) -> int:
        return struct.unpack("<B", self.take(1))[0]


def read_checkpoint(path) -> tuple[HacConfig, dict[str, torch.Tensor]]:
    """Parse and verify a checkpoint file; returns (config, state dict)."""
    path = Path(path)
    if not path.is_file():
        raise DataError(f"no such checkpoint: {path}")
    raw = path.read_bytes()
    if len(raw) < len(MAGIC) + 4 + 32:
        raise DataError(f"{path}: not a checkpoint (too short)")
    body, digest = raw[:-32], raw[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise DataError(f"{path}: integrity checksum mismatch")
    r = _Reader(body)
    if r.take(len(MAGIC)) != MAGIC:
        raise DataError(f"{path}: bad magic, not a checkpoint file")
    version = r.u32()
    if version != VERSION:
        raise DataError(f"{path}: unsupported checkpoint version {version}")
    cfg = HacConfig.from_dict(json.loads(r.take(r.u32()).decode("utf-8")))
    state: dict[str, torch.Tensor] = {}
    for _ in range(r.u32()):
        name = r.take(r.u32()).decode("utf-8")
        rank = r.u8()
        shape = struct.unpack(f"<{rank}I", r.take(4 * rank)) if rank else ()
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(r.take(4 * count), dtype="<f4").reshape(shape).copy()
        state[name] = torch.from_numpy(arr)
    if r.pos != len(body):
        raise DataError(f"{path}: trailing bytes after parameter table")
    return cfg, state


def load_checkpoint(path, expected_cfg: HacConfig | None = None) -> HacNet:
    """Rebuild a model from a checkpoint; config mismatch is an error."""
    cfg, state = read_checkpoint(path)
    if expected_cfg is not None and cfg != expected_cfg:
        raise ConfigError(f"checkpoint config {cfg.to_dict()} does not match expected {expected_cfg.to_dict()}")
    model = HacNet(cfg)
    missing, unexpected = model.load_state_dict(state, strict=False)
    if unexpected:
        raise DataError(f"checkpoint has unknown parameters: {unexpected[:3]}")
    bad = [m for m in missing if not m.endswith(_EXCLUDED_SUFFIX)]
    if bad:
        raise DataError(f"checkpoint missing parameters: {bad[:3]}")
    model.eval()
    return model


def state_checksum(model: HacNet, prefix: str = "") -> str:
    """Hex digest over (name, bytes) of every parameter and buffer whose
    name starts with ``prefix``; used by the stage-isolation contracts."""
    h = hashlib.sha256()
    for name, tensor in sorted(model.state_dict().items()):
        if name.endswith(_EXCLUDED_SUFFIX) or not name.startswith(prefix):
            continue
        h.update(name.encode("utf-8"))
        h.update(tensor.detach().cpu().numpy().astype("<f8").tobytes())
    return h.hexdigest()
