"""Independent reader/writer for the VQVCW1 weight container.

This is deliberately a from-scratch implementation of the published
layout (not an import of the decoder package): producing files the
decoder accepts is the interoperability contract this trainer has to
meet.

Layout, integers little-endian:

    magic           6 bytes  b"VQVCW1"
    manifest_len    u32
    manifest        UTF-8 "key=value" lines, keys sorted
    tensor_count    u32
    per tensor, names sorted lexicographically:
        name_len    u16, name UTF-8
        ndim        u8, dims u32 * ndim
        data        float32 little-endian, row-major
    content_hash    u64, FNV-1a over every preceding byte
"""

from __future__ import annotations

import struct

import numpy as np

MAGIC = b"VQVCW1"
FORMAT_VERSION = "1"

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_MASK64 = (1 << 64) - 1


def fnv1a64(data: bytes) -> int:
    h = _FNV_OFFSET
    for b in data:
        h = ((h ^ b) * _FNV_PRIME) & _MASK64
    return h


def write_container(manifest: dict[str, str],
                    tensors: dict[str, np.ndarray]) -> bytes:
    out = bytearray(MAGIC)
    man = dict(manifest)
    man.setdefault("format_version", FORMAT_VERSION)
    mbytes = "\n".join(f"{k}={man[k]}" for k in sorted(man)).encode()
    out += struct.pack("<I", len(mbytes))
    out += mbytes
    out += struct.pack("<I", len(tensors))
    for name in sorted(tensors):
        t = np.ascontiguousarray(tensors[name], dtype=np.float32)
        nb = name.encode()
        out += struct.pack("<H", len(nb))
        out += nb
        out += struct.pack("<B", t.ndim)
        out += struct.pack(f"<{t.ndim}I", *t.shape)
        out += t.astype("<f4").tobytes()
    out += struct.pack("<Q", fnv1a64(bytes(out)))
    return bytes(out)


def read_container(data: bytes):
    """Parse a container back into (manifest, tensors); used in tests to
    confirm our writer round-trips."""
    if data[:len(MAGIC)] != MAGIC:
        raise ValueError("bad magic")
    body, (stored,) = data[:-8], struct.unpack("<Q", data[-8:])
    if fnv1a64(body) != stored:
        raise ValueError("hash mismatch")
    pos = len(MAGIC)
    (mlen,) = struct.unpack_from("<I", body, pos)
    pos += 4
    manifest = {}
    for line in body[pos:pos + mlen].decode().splitlines():
        if line:
            k, _, v = line.partition("=")
            manifest[k] = v
    pos += mlen
    (count,) = struct.unpack_from("<I", body, pos)
    pos += 4
    tensors = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", body, pos)
        pos += 2
        name = body[pos:pos + nlen].decode()
        pos += nlen
        ndim = body[pos]
        pos += 1
        shape = struct.unpack_from(f"<{ndim}I", body, pos)
        pos += 4 * ndim
        n = int(np.prod(shape)) if ndim else 1
        tensors[name] = np.frombuffer(
            body, dtype="<f4", count=n, offset=pos).reshape(shape).copy()
        pos += 4 * n
    if pos != len(body):
        raise ValueError("trailing bytes")
    return manifest, tensors
