"""Binary checkpoint format.

Layout (little-endian)::

    b"PMAPCKPT"  uint32 version
    uint32 n  + n bytes UTF-8 JSON config
    uint32 count
    count x ( uint32 name_len, name, uint32 rank, rank x uint32 extents, float32 data )
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import ModelConfig
from .errors import ConfigError, FormatError

MAGIC = b"PMAPCKPT"
VERSION = 1
U32 = struct.Struct("<I")


@dataclass
class Checkpoint:
    config: ModelConfig
    params: dict[str, np.ndarray]

    def __eq__(self, other):
        if not isinstance(other, Checkpoint):
            return NotImplemented
        return self.to_bytes() == other.to_bytes()

    @classmethod
    def from_model(cls, model) -> "Checkpoint":
        return cls(model.cfg, {k: to_storage(p.value) for k, p in model.named_params().items()})

    def load_into(self, model) -> None:
        live = model.named_params()
        if set(live) != set(self.params):
            missing = sorted(set(live) ^ set(self.params))
            raise ConfigError(f"checkpoint parameter names do not match the model: {missing[:5]}")
        for k, p in live.items():
            if p.value.shape != self.params[k].shape:
                raise ConfigError(f"shape mismatch for {k}: {p.value.shape} vs {self.params[k].shape}")
            p.value[...] = self.params[k]

    def to_bytes(self) -> bytes:
        out = [MAGIC, U32.pack(VERSION)]
        cfg = self.config.to_json().encode("utf-8")
        out += [U32.pack(len(cfg)), cfg, U32.pack(len(self.params))]
        for name, arr in self.params.items():
            nb = name.encode("utf-8")
            out += [U32.pack(len(nb)), nb, U32.pack(arr.ndim)]
            out += [U32.pack(e) for e in arr.shape]
            out.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
        return b"".join(out)

    @classmethod
    def from_bytes(cls, buf: bytes) -> "Checkpoint":
        if buf[:8] != MAGIC:
            raise FormatError("bad checkpoint magic", 0)
        off = 8

        def u32():
            nonlocal off
            if off + 4 > len(buf):
                raise FormatError("truncated checkpoint", off)
            (v,) = U32.unpack_from(buf, off)
            off += 4
            return v

        def take(n):
            nonlocal off
            if off + n > len(buf):
                raise FormatError(f"truncated checkpoint (need {n} bytes)", off)
            b = buf[off: off + n]
            off += n
            return b

        version = u32()
        if version != VERSION:
            raise FormatError(f"unsupported checkpoint version {version}", 8)
        try:
            cfg = ModelConfig.from_dict(json.loads(take(u32()).decode("utf-8")))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise FormatError(f"bad config block: {exc}", off) from exc
        params = {}
        for _ in range(u32()):
            name = take(u32()).decode("utf-8")
            shape = tuple(u32() for _ in range(u32()))
            n = int(np.prod(shape, dtype=np.int64))
            params[name] = np.frombuffer(take(4 * n), dtype="<f4").astype(np.float64).reshape(shape)
        if off != len(buf):
            raise FormatError("trailing bytes after parameter table", off)
        return cls(cfg, params)

    def save(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(self.to_bytes())
        return path

    @classmethod
    def load(cls, path: str | Path) -> "Checkpoint":
        try:
            return cls.from_bytes(Path(path).read_bytes())
        except OSError as exc:
            raise FormatError(f"cannot read checkpoint {path}: {exc}") from exc


def to_storage(a: np.ndarray) -> np.ndarray:
    """Round to the float32 storage grid, kept as float64."""
    return np.asarray(a, dtype=np.float32).astype(np.float64)
