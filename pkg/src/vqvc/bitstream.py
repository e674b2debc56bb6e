"""Bit-exact serialization of index grids ("VQVC" v1 container).

Everything here is integer-only: packing and unpacking perform no float
operation, which is what makes the transmitted artifact immune to
platform float divergence.

Container layout, integers little-endian unless noted:

    magic           4 bytes  b"VQVC"
    version         u8   (1)
    width, height   u32 each (pixel extents)
    gop             u16
    frame_count     u32
    key_sizes       3 * u32  (keyframe codebook sizes per stage)
    pred_sizes      3 * u32  (predicted-frame codebook sizes per stage)
    weight_hash     u64  (content hash of the weight bundle)
    frames: per frame
        kind        u8   (0 keyframe, 1 predicted)
        planes      packed index planes, stage-major then codebook-major,
                    raster order, ceil(log2 K) bits per index, MSB-first
                    within each byte, zero-padded to a byte boundary per
                    plane

The payload length is fully determined by the header, so truncation is
always detectable.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import CorruptStreamError, ShapeError, VqvcError
from .quantizer import (
    BOOKS_PER_STAGE,
    CodebookSpec,
    IndexGrid,
    NUM_STAGES,
    index_width,
)

MAGIC = b"VQVC"
VERSION = 1

KIND_KEY = 0
KIND_PRED = 1

_HEADER = struct.Struct("<4sBIIHI3I3IQ")


class EncodeError(VqvcError):
    """An index grid is inconsistent with its codebook spec."""


def stage_extents(latent_h: int, latent_w: int):
    """Spatial extents of each stage's index planes."""
    if latent_h % 8 or latent_w % 8:
        raise ShapeError(f"latent extents {latent_h}x{latent_w} not /8")
    return [(latent_h >> (s + 1), latent_w >> (s + 1)) for s in range(NUM_STAGES)]


def _pack_plane(values: np.ndarray, width: int) -> bytes:
    # packbits is MSB-first within each byte, exactly the wire order
    v = np.ascontiguousarray(values, dtype=np.int64).ravel()
    shifts = np.arange(width - 1, -1, -1, dtype=np.int64)
    bits = ((v[:, None] >> shifts[None, :]) & 1).astype(np.uint8).ravel()
    return np.packbits(bits).tobytes()


def _unpack_plane(data: bytes, count: int, width: int) -> np.ndarray:
    need = (count * width + 7) // 8
    if len(data) < need:
        raise CorruptStreamError("index plane truncated")
    bits = np.unpackbits(np.frombuffer(data, np.uint8), count=count * width)
    weights = (1 << np.arange(width - 1, -1, -1, dtype=np.int64))
    vals = bits.reshape(count, width).astype(np.int64) @ weights
    return vals.astype(np.int32)


def pack_indices(grid: IndexGrid, spec: CodebookSpec) -> bytes:
    """Serialize one frame's index grid to fixed-width packed bytes."""
    if len(grid.stages) != NUM_STAGES:
        raise EncodeError(f"grid has {len(grid.stages)} stages")
    out = bytearray()
    for stage, k in zip(grid.stages, spec.sizes):
        if stage.min() < 0 or stage.max() >= k:
            raise EncodeError(f"index out of range for codebook size {k}")
        width = index_width(k)
        for plane in stage:
            out += _pack_plane(plane, width)
    return bytes(out)


def unpack_indices(data: bytes, spec: CodebookSpec,
                   latent_h: int, latent_w: int) -> IndexGrid:
    """Exact inverse of pack_indices for known latent extents."""
    extents = stage_extents(latent_h, latent_w)
    expected = frame_payload_bytes(spec, latent_h, latent_w)
    if len(data) != expected:
        raise CorruptStreamError(
            f"payload is {len(data)} bytes, header implies {expected}")
    pos = 0
    stages = []
    for (h, w), k in zip(extents, spec.sizes):
        width = index_width(k)
        plane_bytes = (h * w * width + 7) // 8
        planes = np.empty((BOOKS_PER_STAGE, h, w), np.int32)
        for bi in range(BOOKS_PER_STAGE):
            vals = _unpack_plane(data[pos:pos + plane_bytes], h * w, width)
            pos += plane_bytes
            planes[bi] = vals.reshape(h, w)
        if planes.max() >= k:
            raise CorruptStreamError(
                f"decoded index exceeds codebook size {k}")
        stages.append(planes)
    return IndexGrid(stages)


def measure_bits(spec: CodebookSpec, frame_h: int, frame_w: int) -> int:
    """Packed payload bits for one frame (excluding byte-alignment padding
    and header overhead, both reported by their own helpers)."""
    lh, lw = frame_h // 8, frame_w // 8
    total = 0
    for (h, w), k in zip(stage_extents(lh, lw), spec.sizes):
        total += BOOKS_PER_STAGE * h * w * index_width(k)
    return total


def frame_payload_bytes(spec: CodebookSpec, latent_h: int, latent_w: int) -> int:
    """Serialized byte length of one frame's planes (with per-plane padding)."""
    total = 0
    for (h, w), k in zip(stage_extents(latent_h, latent_w), spec.sizes):
        total += BOOKS_PER_STAGE * ((h * w * index_width(k) + 7) // 8)
    return total


def header_bits() -> int:
    return (_HEADER.size) * 8


@dataclass
class GopBitstream:
    """One GOP's header fields plus its ordered frame records."""

    width: int
    height: int
    gop: int
    key_spec: CodebookSpec
    pred_spec: CodebookSpec
    weight_hash: int
    frames: list[tuple[int, IndexGrid]]   # (kind, grid)

    @property
    def latent_extents(self):
        return self.height // 8, self.width // 8

    def payload_bits(self) -> int:
        total = 0
        for kind, _ in self.frames:
            spec = self.key_spec if kind == KIND_KEY else self.pred_spec
            total += measure_bits(spec, self.height, self.width)
        return total

    def serialize(self) -> bytes:
        out = bytearray(_HEADER.pack(
            MAGIC, VERSION, self.width, self.height, self.gop,
            len(self.frames), *self.key_spec.sizes, *self.pred_spec.sizes,
            self.weight_hash))
        lh, lw = self.latent_extents
        for kind, grid in self.frames:
            if kind not in (KIND_KEY, KIND_PRED):
                raise EncodeError(f"bad frame kind {kind}")
            spec = self.key_spec if kind == KIND_KEY else self.pred_spec
            out.append(kind)
            out += pack_indices(grid, spec)
        return bytes(out)

    @classmethod
    def parse(cls, data: bytes) -> "GopBitstream":
        if len(data) < _HEADER.size:
            raise CorruptStreamError("stream shorter than header")
        (magic, version, width, height, gop, count,
         k1, k2, k3, p1, p2, p3, whash) = _HEADER.unpack_from(data)
        if magic != MAGIC:
            raise CorruptStreamError("bad magic")
        if version != VERSION:
            raise CorruptStreamError(f"unsupported stream version {version}")
        if width % 8 or height % 8 or width == 0 or height == 0:
            raise CorruptStreamError("invalid frame extents in header")
        key_spec = CodebookSpec((k1, k2, k3))
        pred_spec = CodebookSpec((p1, p2, p3))
        lh, lw = height // 8, width // 8
        pos = _HEADER.size
        frames = []
        for _ in range(count):
            if pos >= len(data):
                raise CorruptStreamError("stream truncated at frame record")
            kind = data[pos]
            pos += 1
            if kind not in (KIND_KEY, KIND_PRED):
                raise CorruptStreamError(f"bad frame kind byte {kind}")
            spec = key_spec if kind == KIND_KEY else pred_spec
            nbytes = frame_payload_bytes(spec, lh, lw)
            if pos + nbytes > len(data):
                raise CorruptStreamError("stream truncated inside frame")
            grid = unpack_indices(data[pos:pos + nbytes], spec, lh, lw)
            pos += nbytes
            frames.append((kind, grid))
        if pos != len(data):
            raise CorruptStreamError("trailing bytes after last frame")
        return cls(width, height, gop, key_spec, pred_spec, whash, frames)
