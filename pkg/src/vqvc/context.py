"""Cross-attention context model.

Queries come from non-overlapping windows of the current latents; keys and
values come from larger, zero-padded windows of the reference latents
centered on each query window.  No warping or flow estimation exists
anywhere in this module: temporal alignment is implicit in attention.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ShapeError
from .tensor_ops import (
    ConvSpec,
    DEFAULT_POLICY,
    EvalPolicy,
    conv2d,
    resblock,
    scaled_dot_attention,
)


@dataclass(frozen=True)
class ContextConfig:
    channels: int = 128       # latent channel count, also resblock width
    s_sw: int = 4             # query window size
    s_p: int = 2              # reference window padding
    heads: int = 8
    head_dim: int = 16
    repeats: int = 2

    def __post_init__(self):
        if self.s_sw < 1 or self.s_p < 0 or self.repeats < 1:
            raise ConfigError("invalid window/repeat configuration")
        if self.channels < 1 or self.heads < 1 or self.head_dim < 1:
            raise ConfigError("channels, heads and head_dim must be positive")

    @property
    def s_psw(self) -> int:
        return self.s_sw + 2 * self.s_p

    @property
    def inner(self) -> int:
        return self.heads * self.head_dim


def partition_query(y: np.ndarray, s_sw: int) -> np.ndarray:
    """Split [c, h, w] into raster-ordered [nw, c, s_sw, s_sw] windows."""
    c, h, w = y.shape
    if h % s_sw or w % s_sw:
        raise ShapeError(f"extents {h}x{w} not divisible by window {s_sw}")
    nh, nw = h // s_sw, w // s_sw
    win = y.reshape(c, nh, s_sw, nw, s_sw)
    return np.ascontiguousarray(win.transpose(1, 3, 0, 2, 4).reshape(
        nh * nw, c, s_sw, s_sw))


def unpartition(windows: np.ndarray, h: int, w: int) -> np.ndarray:
    """Inverse of partition_query."""
    nwin, c, s, _ = windows.shape
    nh, nw = h // s, w // s
    if nh * nw != nwin:
        raise ShapeError(f"{nwin} windows cannot tile {h}x{w} at size {s}")
    grid = windows.reshape(nh, nw, c, s, s).transpose(2, 0, 3, 1, 4)
    return np.ascontiguousarray(grid.reshape(c, h, w))


def partition_kv(y_ref: np.ndarray, s_sw: int, s_p: int) -> np.ndarray:
    """Overlapping reference windows, one per query window.

    Each window is (s_sw + 2*s_p) square, centered on the matching query
    window; positions outside the latent are zero-padded.
    """
    c, h, w = y_ref.shape
    if h % s_sw or w % s_sw:
        raise ShapeError(f"extents {h}x{w} not divisible by window {s_sw}")
    if s_p == 0:
        return partition_query(y_ref, s_sw)
    padded = np.zeros((c, h + 2 * s_p, w + 2 * s_p), np.float32)
    padded[:, s_p:s_p + h, s_p:s_p + w] = y_ref
    s_psw = s_sw + 2 * s_p
    nh, nw = h // s_sw, w // s_sw
    out = np.empty((nh * nw, c, s_psw, s_psw), np.float32)
    for iy in range(nh):
        for ix in range(nw):
            out[iy * nw + ix] = padded[:, iy * s_sw:iy * s_sw + s_psw,
                                       ix * s_sw:ix * s_sw + s_psw]
    return out


def _proj_spec(w: np.ndarray, b: np.ndarray) -> ConvSpec:
    # 1x1 conv == per-position linear map with channel-sequential reduction
    return ConvSpec(w.shape[1], w.shape[0], 1, 1, 0, w[:, :, None, None], b)


def wca_layer(y_cur: np.ndarray, y_ref: np.ndarray, cfg: ContextConfig,
              weights: dict[str, np.ndarray], prefix: str,
              policy: EvalPolicy = DEFAULT_POLICY) -> np.ndarray:
    """One windowed cross-attention layer with residual connection.

    Expects weights {prefix}.q/.k/.v/.o with ".w"/".b" suffixes; q/k/v map
    channels -> inner width, o maps back.
    """
    y_cur = np.ascontiguousarray(y_cur, dtype=np.float32)
    y_ref = np.ascontiguousarray(y_ref, dtype=np.float32)
    if y_cur.shape != y_ref.shape:
        raise ShapeError(
            f"current {y_cur.shape} and reference {y_ref.shape} must match")
    c, h, w = y_cur.shape
    if c != cfg.channels:
        raise ConfigError(f"latents have {c} channels, config says {cfg.channels}")

    def proj(x, name):
        return conv2d(x, _proj_spec(weights[f"{prefix}.{name}.w"],
                                    weights[f"{prefix}.{name}.b"]), policy)

    q = proj(y_cur, "q")
    k = proj(y_ref, "k")
    v = proj(y_ref, "v")

    s = cfg.s_sw
    qw = partition_query(q, s)                        # [nw, inner, s, s]
    kw = partition_kv(k, s, cfg.s_p)                  # [nw, inner, sp, sp]
    vw = partition_kv(v, s, cfg.s_p)
    nwin = qw.shape[0]
    n = s * s
    m = kw.shape[-1] * kw.shape[-2]

    def to_heads(x, length):
        # [nw, inner, a, a] -> [nw, heads, length, head_dim]
        seq = x.reshape(nwin, cfg.heads, cfg.head_dim, length)
        return np.ascontiguousarray(seq.transpose(0, 1, 3, 2))

    attn = scaled_dot_attention(to_heads(qw, n), to_heads(kw, m),
                                to_heads(vw, m), policy)
    # [nw, heads, n, head_dim] -> [nw, inner, s, s]
    merged = attn.transpose(0, 1, 3, 2).reshape(nwin, cfg.inner, s, s)
    full = unpartition(np.ascontiguousarray(merged), h, w)
    out = conv2d(full, _proj_spec(weights[f"{prefix}.o.w"],
                                  weights[f"{prefix}.o.b"]), policy)
    return policy.finish(y_cur + out)


def _ctx_pass(y: np.ndarray, y_ref: np.ndarray, cfg: ContextConfig,
              weights, prefix: str, policy: EvalPolicy) -> np.ndarray:
    for r in range(cfg.repeats):
        rep = f"{prefix}.rep{r}"
        y = wca_layer(y, y_ref, cfg, weights, f"{rep}.attn", policy)
        y = resblock(
            y,
            _res_conv(weights, f"{rep}.res.a"),
            _res_conv(weights, f"{rep}.res.b"),
            policy,
        )
    return y


def _res_conv(weights, name):
    w = weights[f"{name}.w"]
    return ConvSpec(w.shape[1], w.shape[0], 3, 1, 1, w, weights[f"{name}.b"])


def context_encode(y_next: np.ndarray, y_ref: np.ndarray, cfg: ContextConfig,
                   weights, policy: EvalPolicy = DEFAULT_POLICY) -> np.ndarray:
    """Fuse current latents with the reference into context latents."""
    return _ctx_pass(y_next, y_ref, cfg, weights, "ctxenc", policy)


def context_decode(y_ctx: np.ndarray, y_ref: np.ndarray, cfg: ContextConfig,
                   weights, policy: EvalPolicy = DEFAULT_POLICY) -> np.ndarray:
    """Recover current latents from quantized context + the same reference."""
    return _ctx_pass(y_ctx, y_ref, cfg, weights, "ctxdec", policy)


def context_weight_shapes(cfg: ContextConfig) -> dict[str, tuple[int, ...]]:
    """Expected weight names/shapes for both context passes."""
    shapes = {}
    c, inner = cfg.channels, cfg.inner
    for prefix in ("ctxenc", "ctxdec"):
        for r in range(cfg.repeats):
            rep = f"{prefix}.rep{r}"
            for name, shp in (("q", (inner, c)), ("k", (inner, c)),
                              ("v", (inner, c)), ("o", (c, inner))):
                shapes[f"{rep}.attn.{name}.w"] = shp
                shapes[f"{rep}.attn.{name}.b"] = (shp[0],)
            for ab in "ab":
                shapes[f"{rep}.res.{ab}.w"] = (c, c, 3, 3)
                shapes[f"{rep}.res.{ab}.b"] = (c,)
    return shapes
