"""Binary record files holding named float32 tensors.

One format serves model checkpoints, rendered image samples, and support
feature banks. Layout (little-endian): magic ``SZS1``, version u32, tensor
count u32, then per tensor a u16 name length, the UTF-8 name, a u8 rank,
u32 dims, and the raw float32 data in row-major order.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"SZS1"
VERSION = 1


class RecordError(ValueError):
    """Malformed, truncated, or version-incompatible record file."""


def write_records(path: str | Path, tensors: dict[str, np.ndarray]) -> None:
    """Write named tensors to ``path``. Iteration order of ``tensors`` is preserved."""
    parts = [MAGIC, struct.pack("<II", VERSION, len(tensors))]
    for name, arr in tensors.items():
        data = np.ascontiguousarray(arr, dtype=np.float32)
        raw = name.encode("utf-8")
        if len(raw) > 0xFFFF:
            raise RecordError(f"tensor name too long: {name!r}")
        parts.append(struct.pack("<H", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<B", data.ndim))
        parts.append(struct.pack(f"<{data.ndim}I", *data.shape))
        parts.append(data.tobytes())
    Path(path).write_bytes(b"".join(parts))


def read_records(path: str | Path) -> dict[str, np.ndarray]:
    """Read a record file back into a name -> float32 array mapping."""
    blob = Path(path).read_bytes()
    if len(blob) < 12:
        raise RecordError(f"{path}: truncated header")
    if blob[:4] != MAGIC:
        raise RecordError(f"{path}: bad magic {blob[:4]!r}, expected {MAGIC!r}")
    version, count = struct.unpack_from("<II", blob, 4)
    if version != VERSION:
        raise RecordError(f"{path}: unsupported version {version}, expected {VERSION}")
    out: dict[str, np.ndarray] = {}
    off = 12
    for _ in range(count):
        try:
            (nlen,) = struct.unpack_from("<H", blob, off)
            off += 2
            name = blob[off : off + nlen].decode("utf-8")
            if len(blob[off : off + nlen]) != nlen:
                raise struct.error("short name")
            off += nlen
            (rank,) = struct.unpack_from("<B", blob, off)
            off += 1
            dims = struct.unpack_from(f"<{rank}I", blob, off)
            off += 4 * rank
            n = int(np.prod(dims, dtype=np.int64)) if rank else 1
            end = off + 4 * n
            if end > len(blob):
                raise struct.error("short data")
            arr = np.frombuffer(blob[off:end], dtype="<f4").reshape(dims).copy()
            off = end
        except struct.error as exc:
            raise RecordError(f"{path}: truncated record file ({exc})") from None
        if name in out:
            raise RecordError(f"{path}: duplicate tensor name {name!r}")
        out[name] = arr
    return out


def write_image(path: str | Path, image: np.ndarray) -> None:
    """Store a single rendered sample as a one-tensor record file."""
    write_records(path, {"image": image})


def read_image(path: str | Path) -> np.ndarray:
    tensors = read_records(path)
    if "image" not in tensors:
        raise RecordError(f"{path}: no 'image' tensor in record file")
    return tensors["image"]
