"""Deterministic tensor primitives.

Every reduction in this module runs in a documented order (sequential over
the innermost contraction axis unless an :class:`EvalPolicy` says otherwise),
so a given build produces bit-identical results run after run.  The policy
object exists so the determinism harness can perturb the evaluation on
purpose; normal callers use :data:`DEFAULT_POLICY`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ShapeError

__all__ = [
    "EvalPolicy",
    "DEFAULT_POLICY",
    "PERTURBATION_MODES",
    "ConvSpec",
    "conv2d",
    "resblock",
    "leaky_relu",
    "downsample2x",
    "upsample2x",
    "scaled_dot_attention",
]

PERTURBATION_MODES = (
    "none",
    "reverse-reductions",
    "pairwise-tree-reductions",
    "fma-toggle",
    "round-intermediates-to-16-bit",
)


@dataclass(frozen=True)
class EvalPolicy:
    """How reductions are ordered and intermediates are rounded.

    mode "none" is the canonical configuration: sequential left-to-right
    float32 accumulation, no extra rounding.  The other modes emulate the
    kind of platform-to-platform float divergence a real heterogeneous
    deployment would see.
    """

    mode: str = "none"

    def __post_init__(self):
        if self.mode not in PERTURBATION_MODES:
            raise ConfigError(f"unknown evaluation mode {self.mode!r}")

    @property
    def round16(self) -> bool:
        return self.mode == "round-intermediates-to-16-bit"

    def finish(self, t: np.ndarray) -> np.ndarray:
        """Post-process one op's output tensor (identity unless round16)."""
        if self.round16:
            return t.astype(np.float16).astype(np.float32)
        return t


DEFAULT_POLICY = EvalPolicy("none")


def _accumulate(term, n, policy: EvalPolicy):
    """Reduce term(0) + term(1) + ... + term(n-1) under the policy's order.

    term(i) must return float32 arrays of one common shape.  Mode "none"
    (and round16) is strictly sequential left to right; "reverse-reductions"
    runs right to left; "pairwise-tree-reductions" uses a balanced binary
    tree; "fma-toggle" accumulates in float64 and rounds once at the end,
    standing in for fused contraction.
    """
    if n == 0:
        raise ShapeError("empty reduction")
    mode = policy.mode
    if mode == "reverse-reductions":
        acc = np.zeros_like(term(n - 1))
        for i in range(n - 1, -1, -1):
            acc += term(i)
        return acc
    if mode == "pairwise-tree-reductions":
        def tree(lo, hi):
            if hi - lo == 1:
                return term(lo)
            mid = (lo + hi) // 2
            return tree(lo, mid) + tree(mid, hi)
        return tree(0, n)
    if mode == "fma-toggle":
        acc = term(0).astype(np.float64)
        for i in range(1, n):
            acc += term(i)
        return acc.astype(np.float32)
    acc = np.zeros_like(term(0))
    for i in range(n):
        acc += term(i)
    return acc


@dataclass
class ConvSpec:
    """2-D convolution parameters plus its weight and bias tensors."""

    in_channels: int
    out_channels: int
    kernel: int
    stride: int
    padding: int
    weight: np.ndarray  # [out, in, k, k] float32
    bias: np.ndarray    # [out] float32

    def __post_init__(self):
        expected = (self.out_channels, self.in_channels, self.kernel, self.kernel)
        if tuple(self.weight.shape) != expected:
            raise ConfigError(
                f"conv weight shape {self.weight.shape} != expected {expected}")
        if tuple(self.bias.shape) != (self.out_channels,):
            raise ConfigError(f"conv bias shape {self.bias.shape} invalid")
        self.weight = np.ascontiguousarray(self.weight, dtype=np.float32)
        self.bias = np.ascontiguousarray(self.bias, dtype=np.float32)


def _check_chw(x, name="input"):
    if x.ndim != 3:
        raise ShapeError(f"{name} must be [C,H,W], got shape {x.shape}")
    return np.ascontiguousarray(x, dtype=np.float32)


def conv2d(x: np.ndarray, spec: ConvSpec, policy: EvalPolicy = DEFAULT_POLICY) -> np.ndarray:
    """Standard 2-D convolution, accumulated over (in_channel, ky, kx).

    The contraction nests exactly in that order with sequential summation,
    matching a plain nested-loop implementation bit for bit.
    """
    x = _check_chw(x)
    c, h, w = x.shape
    if c != spec.in_channels:
        raise ConfigError(
            f"input has {c} channels, conv expects {spec.in_channels}")
    k, s, p = spec.kernel, spec.stride, spec.padding
    oh = (h + 2 * p - k) // s + 1
    ow = (w + 2 * p - k) // s + 1
    if oh < 1 or ow < 1:
        raise ShapeError(f"input {h}x{w} too small for kernel {k} pad {p}")
    if p:
        xp = np.zeros((c, h + 2 * p, w + 2 * p), np.float32)
        xp[:, p:p + h, p:p + w] = x
    else:
        xp = x
    # patches[i] is the sliding view of input value number i of the
    # (ic, ky, kx) contraction, flattened over output positions
    red = c * k * k
    patches = np.empty((red, oh * ow), np.float32)
    i = 0
    for ic in range(c):
        for ky in range(k):
            for kx in range(k):
                patches[i] = xp[ic, ky:ky + oh * s:s, kx:kx + ow * s:s].ravel()
                i += 1
    wmat = spec.weight.reshape(spec.out_channels, red)

    def term(i):
        return wmat[:, i:i + 1] * patches[i]

    out = _accumulate(term, red, policy)
    out += spec.bias[:, None]
    return policy.finish(out.reshape(spec.out_channels, oh, ow))


def leaky_relu(x: np.ndarray, slope: float = 0.01,
               policy: EvalPolicy = DEFAULT_POLICY) -> np.ndarray:
    x = np.asarray(x, dtype=np.float32)
    return policy.finish(np.where(x > 0, x, np.float32(slope) * x))


def resblock(x: np.ndarray, conv_a: ConvSpec, conv_b: ConvSpec,
             policy: EvalPolicy = DEFAULT_POLICY) -> np.ndarray:
    """x + conv_b(act(conv_a(act(x)))), channel-preserving."""
    x = _check_chw(x)
    if conv_a.in_channels != x.shape[0] or conv_b.out_channels != x.shape[0]:
        raise ConfigError("resblock convs must preserve the channel count")
    t = leaky_relu(x, policy=policy)
    t = conv2d(t, conv_a, policy)
    t = leaky_relu(t, policy=policy)
    t = conv2d(t, conv_b, policy)
    if t.shape != x.shape:
        raise ConfigError("resblock convs must preserve spatial extents")
    return policy.finish(x + t)


def downsample2x(x: np.ndarray, spec: ConvSpec,
                 policy: EvalPolicy = DEFAULT_POLICY) -> np.ndarray:
    """Strided 2x2 convolution; halves both spatial extents."""
    x = _check_chw(x)
    _, h, w = x.shape
    if h % 2 or w % 2:
        raise ShapeError(f"downsample2x needs even extents, got {h}x{w}")
    if spec.kernel != 2 or spec.stride != 2 or spec.padding != 0:
        raise ConfigError("downsample2x spec must be kernel=2 stride=2 pad=0")
    return conv2d(x, spec, policy)


def upsample2x(x: np.ndarray, spec: ConvSpec,
               policy: EvalPolicy = DEFAULT_POLICY) -> np.ndarray:
    """Nearest-neighbor 2x duplication followed by a 3x3 convolution."""
    x = _check_chw(x)
    if spec.kernel != 3 or spec.stride != 1 or spec.padding != 1:
        raise ConfigError("upsample2x spec must be kernel=3 stride=1 pad=1")
    up = np.repeat(np.repeat(x, 2, axis=1), 2, axis=2)
    return conv2d(up, spec, policy)


def scaled_dot_attention(q: np.ndarray, k: np.ndarray, v: np.ndarray,
                         policy: EvalPolicy = DEFAULT_POLICY) -> np.ndarray:
    """softmax(q k^T / sqrt(d)) v with max-subtracted softmax.

    Accepts arbitrary leading batch dimensions: q is [..., n, d], k and v
    are [..., m, d].  Row reductions run sequentially left to right.
    """
    q = np.asarray(q, dtype=np.float32)
    k = np.asarray(k, dtype=np.float32)
    v = np.asarray(v, dtype=np.float32)
    if q.shape[-1] != k.shape[-1]:
        raise ShapeError(f"q dim {q.shape[-1]} != k dim {k.shape[-1]}")
    if k.shape[:-1] != v.shape[:-1]:
        raise ShapeError("k and v must agree on all but the last axis")
    d = q.shape[-1]
    m = k.shape[-2]

    def score_term(i):
        return q[..., :, None, i] * k[..., None, :, i]

    scores = _accumulate(score_term, d, policy)
    scores *= np.float32(1.0 / math.sqrt(d))
    scores -= scores.max(axis=-1, keepdims=True)
    e = np.exp(scores, dtype=np.float32)

    def row_term(j):
        return e[..., :, j]

    denom = _accumulate(row_term, m, policy)
    p = e / denom[..., :, None]

    def out_term(j):
        return p[..., :, j, None] * v[..., None, j, :]

    return policy.finish(_accumulate(out_term, m, policy))
