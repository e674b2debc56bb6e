"""Named-tensor weight container ("VQVCW1" format).

Layout, all integers little-endian:

    magic           6 bytes  b"VQVCW1"
    manifest_len    u32
    manifest        UTF-8 "key=value" lines, keys sorted
    tensor_count    u32
    per tensor, names sorted lexicographically:
        name_len    u16
        name        UTF-8
        ndim        u8
        dims        u32 * ndim
        data        float32 * prod(dims), little-endian, row-major
    content_hash    u64, FNV-1a over every preceding byte

save/load round-trips byte-identically; load refuses truncated or
hash-mismatched containers.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import IntegrityError, VersionError, WeightError

MAGIC = b"VQVCW1"
FORMAT_VERSION = "1"

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3


def fnv1a64(data: bytes) -> int:
    """64-bit FNV-1a over a byte string."""
    arr = np.frombuffer(data, dtype=np.uint8)
    h = np.uint64(_FNV_OFFSET)
    prime = np.uint64(_FNV_PRIME)
    with np.errstate(over="ignore"):
        for chunk in arr:
            h = (h ^ np.uint64(chunk)) * prime
    return int(h)


try:
    from numba import njit

    @njit(cache=True)
    def _fnv1a64_nb(arr):  # pragma: no cover - thin jit wrapper
        h = np.uint64(_FNV_OFFSET)
        prime = np.uint64(_FNV_PRIME)
        for i in range(arr.shape[0]):
            h = (h ^ np.uint64(arr[i])) * prime
        return h

    def fnv1a64(data: bytes) -> int:  # noqa: F811
        """64-bit FNV-1a over a byte string."""
        return int(_fnv1a64_nb(np.frombuffer(data, dtype=np.uint8)))
except ImportError:  # pragma: no cover
    pass


@dataclass
class WeightBundle:
    """Immutable-after-load map of named float32 tensors plus a manifest."""

    manifest: dict[str, str]
    tensors: dict[str, np.ndarray]
    content_hash: int = 0

    def require(self, name: str, shape: tuple[int, ...]) -> np.ndarray:
        if name not in self.tensors:
            raise WeightError(f"missing weight {name!r}")
        t = self.tensors[name]
        if tuple(t.shape) != tuple(shape):
            raise WeightError(
                f"weight {name!r} has shape {t.shape}, expected {shape}")
        return t


def save_weights(bundle: WeightBundle) -> bytes:
    out = bytearray(MAGIC)
    manifest = dict(bundle.manifest)
    manifest.setdefault("format_version", FORMAT_VERSION)
    mbytes = "\n".join(f"{k}={manifest[k]}" for k in sorted(manifest)).encode()
    out += struct.pack("<I", len(mbytes))
    out += mbytes
    out += struct.pack("<I", len(bundle.tensors))
    for name in sorted(bundle.tensors):
        t = np.ascontiguousarray(bundle.tensors[name], dtype=np.float32)
        nb = name.encode()
        out += struct.pack("<H", len(nb))
        out += nb
        out += struct.pack("<B", t.ndim)
        out += struct.pack(f"<{t.ndim}I", *t.shape)
        out += t.astype("<f4").tobytes()
    digest = fnv1a64(bytes(out))
    bundle.content_hash = digest
    out += struct.pack("<Q", digest)
    return bytes(out)


def load_weights(data: bytes) -> WeightBundle:
    if len(data) < len(MAGIC) + 8 or data[:len(MAGIC)] != MAGIC:
        raise IntegrityError("not a VQVCW1 weight container")
    body, stored = data[:-8], data[-8:]
    (digest,) = struct.unpack("<Q", stored)
    if fnv1a64(body) != digest:
        raise IntegrityError("weight container hash mismatch")
    pos = len(MAGIC)

    def take(n):
        nonlocal pos
        if pos + n > len(body):
            raise IntegrityError("weight container truncated")
        chunk = body[pos:pos + n]
        pos += n
        return chunk

    (mlen,) = struct.unpack("<I", take(4))
    manifest = {}
    for line in take(mlen).decode().splitlines():
        if line:
            k, _, v = line.partition("=")
            manifest[k] = v
    if manifest.get("format_version") != FORMAT_VERSION:
        raise VersionError(
            f"unsupported manifest version {manifest.get('format_version')!r}")
    (count,) = struct.unpack("<I", take(4))
    tensors = {}
    for _ in range(count):
        (nlen,) = struct.unpack("<H", take(2))
        name = take(nlen).decode()
        (ndim,) = struct.unpack("<B", take(1))
        shape = struct.unpack(f"<{ndim}I", take(4 * ndim))
        n = int(np.prod(shape)) if ndim else 1
        raw = take(4 * n)
        tensors[name] = np.frombuffer(raw, dtype="<f4").reshape(shape).copy()
    if pos != len(body):
        raise IntegrityError("trailing bytes in weight container")
    return WeightBundle(manifest=manifest, tensors=tensors, content_hash=digest)
