"""Determinism harness.

Two sides of the same argument, at desk scale:

* entropy-coded pipelines desync when encoder and decoder disagree about
  the probability model by even a hair (the range-coder round-trip demo);
* the index pipeline decodes the exact same integer grids under every
  float perturbation mode, because nothing between the bytes and the
  codeword lookup touches a float.

Perturbation modes stand in for real cross-platform float divergence;
nothing here measures actual heterogeneous hardware.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

import numpy as np

from .bitstream import GopBitstream, pack_indices
from .codec import CodecModel, decode_frame
from .errors import ModelError
from .metrics import psnr
from .tensor_ops import EvalPolicy, PERTURBATION_MODES
from .weights import fnv1a64


@dataclass(frozen=True)
class PerturbationSpec:
    """An evaluation-policy mode plus the seed for any randomized use."""

    mode: str = "none"
    seed: int = 0

    def policy(self) -> EvalPolicy:
        return EvalPolicy(self.mode)


# ---------------------------------------------------------------------------
# minimal carry-less range coder (32-bit), for the failure demo only

_TOP = 1 << 24
_BOT = 1 << 16
_MASK = (1 << 32) - 1


class RangeEncoder:
    def __init__(self):
        self.low = 0
        self.range = _MASK
        self.out = bytearray()

    def encode(self, cum: int, freq: int, total: int):
        self.range //= total
        self.low = (self.low + cum * self.range) & _MASK
        self.range *= freq
        self._normalize()

    def _normalize(self):
        while True:
            if (self.low ^ (self.low + self.range)) & _MASK < _TOP:
                pass
            elif self.range < _BOT:
                self.range = (-self.low) & (_BOT - 1)
            else:
                break
            self.out.append((self.low >> 24) & 0xFF)
            self.low = (self.low << 8) & _MASK
            self.range = (self.range << 8) & _MASK

    def finish(self) -> bytes:
        for _ in range(4):
            self.out.append((self.low >> 24) & 0xFF)
            self.low = (self.low << 8) & _MASK
        return bytes(self.out)


class RangeDecoder:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0
        self.low = 0
        self.range = _MASK
        self.code = 0
        for _ in range(4):
            self.code = ((self.code << 8) | self._byte()) & _MASK

    def _byte(self) -> int:
        b = self.data[self.pos] if self.pos < len(self.data) else 0
        self.pos += 1
        return b

    def decode_target(self, total: int) -> int:
        self.range //= total
        return min(total - 1, ((self.code - self.low) & _MASK) // self.range)

    def consume(self, cum: int, freq: int):
        self.low = (self.low + cum * self.range) & _MASK
        self.range *= freq
        while True:
            if (self.low ^ (self.low + self.range)) & _MASK < _TOP:
                pass
            elif self.range < _BOT:
                self.range = (-self.low) & (_BOT - 1)
            else:
                break
            self.code = ((self.code << 8) | self._byte()) & _MASK
            self.low = (self.low << 8) & _MASK
            self.range = (self.range << 8) & _MASK


class SymbolModel:
    """Discretized Gaussian over symbols 0..n-1 with integer frequencies.

    eps shifts the underlying float CDF by seeded uniform noise before
    integer quantization, emulating a decoder whose float math lands on
    slightly different probabilities than the encoder's.
    """

    TOTAL = 1 << 16

    def __init__(self, num_symbols: int, std: float = 8.0,
                 eps: float = 0.0, seed: int = 0):
        if num_symbols < 1:
            raise ModelError("need at least one symbol")
        if num_symbols > self.TOTAL:
            raise ModelError(
                f"alphabet of {num_symbols} exceeds the frequency total")
        edges = np.arange(num_symbols + 1, dtype=np.float64)
        center = num_symbols / 2.0
        z = (edges - center) / max(std, 1e-9)
        cdf = 0.5 * (1.0 + np.vectorize(math.erf)(z / math.sqrt(2.0)))
        cdf = (cdf - cdf[0]) / (cdf[-1] - cdf[0])
        if eps:
            rng = np.random.default_rng(seed)
            cdf = cdf.copy()
            cdf[1:-1] += eps * rng.uniform(-1.0, 1.0, num_symbols - 1)
        if np.any(np.diff(cdf) < 0):
            raise ModelError("perturbed CDF is non-monotone")
        self.num_symbols = num_symbols
        self.cum = self._quantize(cdf)

    def _quantize(self, cdf):
        cum = np.rint(cdf * self.TOTAL).astype(np.int64)
        # every symbol keeps at least one count, ends pinned
        cum[0] = 0
        cum[-1] = self.TOTAL
        for i in range(1, len(cum)):
            cum[i] = max(cum[i], cum[i - 1] + 1)
        for i in range(len(cum) - 2, -1, -1):
            cum[i] = min(cum[i], cum[i + 1] - 1)
        if cum[0] != 0:
            raise ModelError("alphabet too large for the frequency total")
        return cum

    def freq(self, s: int):
        return int(self.cum[s]), int(self.cum[s + 1] - self.cum[s])

    def symbol_for(self, target: int) -> int:
        return int(np.searchsorted(self.cum, target, side="right") - 1)

    def sample(self, n: int, seed: int) -> np.ndarray:
        rng = np.random.default_rng(seed)
        targets = rng.integers(0, self.TOTAL, n)
        return np.array([self.symbol_for(int(t)) for t in targets], np.int64)


@dataclass
class AcRoundtripReport:
    symbol_count: int
    first_mismatch: int | None

    @property
    def desynced(self) -> bool:
        return self.first_mismatch is not None


def ac_roundtrip_demo(symbols, model: SymbolModel, eps: float,
                      seed: int = 0) -> AcRoundtripReport:
    """Encode with the clean model, decode with an eps-perturbed one.

    Reports the position of the first decoded symbol that disagrees, after
    which the decoder state is garbage (a desync, not independent errors).
    """
    symbols = np.asarray(symbols, dtype=np.int64)
    enc = RangeEncoder()
    for s in symbols:
        cum, freq = model.freq(int(s))
        enc.encode(cum, freq, model.TOTAL)
    blob = enc.finish()

    decode_model = model if eps == 0 else SymbolModel(
        model.num_symbols, eps=eps, seed=seed)
    dec = RangeDecoder(blob)
    first = None
    for i, s in enumerate(symbols):
        target = dec.decode_target(decode_model.TOTAL)
        got = decode_model.symbol_for(target)
        cum, freq = decode_model.freq(got)
        dec.consume(cum, freq)
        if got != int(s):
            first = i
            break
    return AcRoundtripReport(symbol_count=len(symbols), first_mismatch=first)


# ---------------------------------------------------------------------------
# perturbed decoding of real bitstreams

def index_trace_hash(stream: GopBitstream) -> int:
    """Content hash over the packed index planes a decode consumed."""
    blob = bytearray()
    for kind, grid in stream.frames:
        spec = stream.key_spec if kind == 0 else stream.pred_spec
        blob.append(kind)
        blob += pack_indices(grid, spec)
    return fnv1a64(bytes(blob))


def run_perturbed_decode(stream: GopBitstream, model: CodecModel,
                         pert: PerturbationSpec):
    """Full decode under a perturbation; returns (frames, index trace)."""
    policy = pert.policy()
    frames = []
    trace = []
    state = None
    for kind, grid in stream.frames:
        x_hat, state = decode_frame(grid, kind, model, state, policy,
                                    gop=stream.gop)
        frames.append(x_hat)
        trace.append((kind, grid))
    return frames, trace


@dataclass
class CrossDecodeRow:
    mode: str
    index_hash: int
    bpp: float
    psnr_vs_none: list[float]


def cross_decode_report(stream: GopBitstream, model: CodecModel,
                        modes=None) -> list[CrossDecodeRow]:
    """Decode one stream under several perturbation modes and compare."""
    from .metrics import bpp as _bpp
    if modes is None:
        modes = [PerturbationSpec(m) for m in PERTURBATION_MODES]
    if len(modes) < 2:
        raise ModelError("need at least two perturbation modes to compare")
    rate = _bpp(stream)
    trace_hash = index_trace_hash(stream)
    baseline, _ = run_perturbed_decode(stream, model, PerturbationSpec("none"))
    rows = []
    for pert in modes:
        frames, _ = run_perturbed_decode(stream, model, pert)
        rows.append(CrossDecodeRow(
            mode=pert.mode,
            index_hash=trace_hash,
            bpp=rate,
            psnr_vs_none=[psnr(a, b) for a, b in zip(baseline, frames)]))
    return rows


def report_to_csv(rows: list[CrossDecodeRow]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(["mode", "index_hash", "bpp", "min_psnr_vs_none",
                     "per_frame_psnr"])
    for r in rows:
        writer.writerow([r.mode, f"{r.index_hash:016x}", f"{r.bpp:.8f}",
                         f"{min(r.psnr_vs_none):.4f}",
                         ";".join(f"{p:.4f}" for p in r.psnr_vs_none)])
    return buf.getvalue()


def report_from_csv(text: str) -> list[CrossDecodeRow]:
    rows = []
    reader = csv.reader(io.StringIO(text))
    next(reader)
    for mode, h, rate, _minp, per_frame in reader:
        rows.append(CrossDecodeRow(
            mode=mode, index_hash=int(h, 16), bpp=float(rate),
            psnr_vs_none=[float(p) for p in per_frame.split(";") if p]))
    return rows
