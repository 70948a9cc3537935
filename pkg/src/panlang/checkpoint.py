"""Named parameter collections and the PANW checkpoint container.

Layout (little-endian): ``b"PANW"``, u32 tensor count, then per tensor
u32 name length, UTF-8 name, u32 ndim, ndim x u32 dims, f32 payload.
"""
from __future__ import annotations

import hashlib
import struct
from pathlib import Path

import numpy as np

from .exceptions import FormatError, TruncationError
from .ndtensor import Tensor

MAGIC = b"PANW"
_U32 = struct.Struct("<I")


class ParamSet:
    """Ordered mapping ``name -> Tensor``.

    Names starting with ``meta.`` hold fixed configuration (band count,
    projection code) and are never returned by :meth:`parameters`.
    """

    def __init__(self, tensors: dict | None = None):
        self._t: dict[str, Tensor] = {}
        for name, value in (tensors or {}).items():
            self[name] = value

    def __setitem__(self, name: str, value) -> None:
        if not isinstance(value, Tensor):
            value = Tensor(np.asarray(value, dtype=np.float32), requires_grad=not name.startswith("meta."))
        self._t[name] = value

    def __getitem__(self, name: str) -> Tensor:
        return self._t[name]

    def __contains__(self, name: str) -> bool:
        return name in self._t

    def __len__(self) -> int:
        return len(self._t)

    def names(self) -> list[str]:
        return list(self._t)

    def items(self):
        return self._t.items()

    def meta(self, name: str) -> int:
        return int(round(float(self._t["meta." + name].data.reshape(-1)[0])))

    def parameters(self, prefix: str = "") -> list[Tensor]:
        return [t for n, t in self._t.items() if n.startswith(prefix) and not n.startswith("meta.")]

    def named_parameters(self, prefix: str = ""):
        return [(n, t) for n, t in self._t.items() if n.startswith(prefix) and not n.startswith("meta.")]

    def astype(self, dtype) -> "ParamSet":
        """Independent copy with every tensor cast to ``dtype``."""
        out = ParamSet()
        for n, t in self._t.items():
            out._t[n] = Tensor(t.data.astype(dtype), requires_grad=t.requires_grad)
        return out

    def copy(self) -> "ParamSet":
        return self.astype(next(iter(self._t.values())).dtype) if self._t else ParamSet()

    def freeze(self) -> "ParamSet":
        for t in self._t.values():
            t.requires_grad = False
            t.grad = None
        return self

    def zero_grad(self) -> None:
        for t in self._t.values():
            t.grad = None

    def to_bytes(self) -> bytes:
        parts = [MAGIC, _U32.pack(len(self._t))]
        for name, t in self._t.items():
            raw = name.encode("utf-8")
            parts.append(_U32.pack(len(raw)) + raw + _U32.pack(t.ndim))
            parts.append(struct.pack(f"<{t.ndim}I", *t.shape))
            parts.append(np.ascontiguousarray(t.data, dtype="<f4").tobytes())
        return b"".join(parts)

    @classmethod
    def from_bytes(cls, buf: bytes) -> "ParamSet":
        pos = 0

        def take(n: int) -> bytes:
            nonlocal pos
            if pos + n > len(buf):
                raise TruncationError(f"need {n} bytes, {len(buf) - pos} left", pos)
            chunk = buf[pos:pos + n]
            pos += n
            return chunk

        if take(4) != MAGIC:
            raise FormatError(f"bad magic, expected {MAGIC!r}", 0)
        (count,) = _U32.unpack(take(4))
        out = cls()
        for _ in range(count):
            start = pos
            (nlen,) = _U32.unpack(take(4))
            try:
                name = take(nlen).decode("utf-8")
            except UnicodeDecodeError:
                raise FormatError("tensor name is not UTF-8", start + 4) from None
            (ndim,) = _U32.unpack(take(4))
            if ndim > 8:
                raise FormatError(f"implausible rank {ndim}", pos - 4)
            shape = struct.unpack(f"<{ndim}I", take(4 * ndim))
            size = int(np.prod(shape, dtype=np.int64))
            data = np.frombuffer(take(4 * size), dtype="<f4").astype(np.float32).reshape(shape)
            out[name] = data
        if pos != len(buf):
            raise FormatError("trailing bytes after last tensor", pos)
        return out

    def sha256(self) -> str:
        return hashlib.sha256(self.to_bytes()).hexdigest()

    def save(self, path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path) -> "ParamSet":
        return cls.from_bytes(Path(path).read_bytes())
