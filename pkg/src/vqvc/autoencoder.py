"""Shared image encoder/decoder.

Three stride-2 stages each way (8x total resampling), resblocks between
stages, leaky-ReLU activations.  The "light" variant halves the decoder's
channel widths and resblock counts; the encoder is identical in both.
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
    leaky_relu,
    resblock,
    upsample2x,
)

DOWN_FACTOR = 8


@dataclass(frozen=True)
class AutoencoderConfig:
    widths: tuple[int, int] = (64, 128)   # first two encoder stage widths
    n_c: int = 128                        # latent channels
    resblocks: int = 2                    # per stage
    variant: str = "standard"             # or "light"

    def __post_init__(self):
        if self.variant not in ("standard", "light"):
            raise ConfigError(f"unknown variant {self.variant!r}")
        if self.n_c % 2:
            raise ConfigError("n_c must be even (codebooks split channels)")

    @property
    def enc_widths(self) -> tuple[int, int, int]:
        return (self.widths[0], self.widths[1], self.n_c)

    @property
    def dec_widths(self) -> tuple[int, int, int]:
        # channel widths after each decoder upsample; mirrors the encoder,
        # halved in the light variant
        w0, w1 = self.widths
        if self.variant == "light":
            return (max(2, w1 // 2), max(2, w0 // 2), max(2, w0 // 2))
        return (w1, w0, w0)

    @property
    def dec_resblocks(self) -> int:
        return max(1, self.resblocks // 2) if self.variant == "light" else self.resblocks


def weight_shapes(cfg: AutoencoderConfig) -> dict[str, tuple[int, ...]]:
    """Every autoencoder weight name with its expected shape."""
    shapes: dict[str, tuple[int, ...]] = {}

    def conv(name, cin, cout, k):
        shapes[f"{name}.w"] = (cout, cin, k, k)
        shapes[f"{name}.b"] = (cout,)

    def res_stage(name, width, count):
        for j in range(count):
            conv(f"{name}.res{j}.a", width, width, 3)
            conv(f"{name}.res{j}.b", width, width, 3)

    prev = 3
    for i, width in enumerate(cfg.enc_widths):
        conv(f"enc.down{i}", prev, width, 3)
        res_stage(f"enc.stage{i}", width, cfg.resblocks)
        prev = width
    prev = cfg.n_c
    res_stage("dec.stage0", prev, cfg.dec_resblocks)
    for i, width in enumerate(cfg.dec_widths):
        conv(f"dec.up{i}", prev, width, 3)
        res_stage(f"dec.stage{i + 1}", width, cfg.dec_resblocks)
        prev = width
    conv("dec.out", prev, 3, 3)
    return shapes


def validate_weights(cfg: AutoencoderConfig, tensors: dict[str, np.ndarray]):
    from .errors import WeightError
    for name, shape in weight_shapes(cfg).items():
        if name not in tensors:
            raise WeightError(f"missing weight {name!r}")
        if tuple(tensors[name].shape) != shape:
            raise WeightError(
                f"weight {name!r} shape {tensors[name].shape} != {shape}")


def init_weights(cfg: AutoencoderConfig, seed: int = 0) -> dict[str, np.ndarray]:
    """Seeded random initialization (scaled normal, zero biases)."""
    rng = np.random.default_rng(seed)
    out = {}
    for name, shape in weight_shapes(cfg).items():
        if name.endswith(".b"):
            out[name] = np.zeros(shape, np.float32)
        else:
            fan_in = int(np.prod(shape[1:]))
            std = 0.5 / np.sqrt(fan_in)
            out[name] = rng.normal(0.0, std, shape).astype(np.float32)
    return out


def _conv_spec(tensors, name, stride, padding=1):
    w = tensors[f"{name}.w"]
    return ConvSpec(w.shape[1], w.shape[0], w.shape[2], stride, padding,
                    w, tensors[f"{name}.b"])


def _run_res_stage(x, tensors, name, count, policy):
    for j in range(count):
        x = resblock(x,
                     _conv_spec(tensors, f"{name}.res{j}.a", 1),
                     _conv_spec(tensors, f"{name}.res{j}.b", 1),
                     policy)
    return x


def encode_image(x: np.ndarray, cfg: AutoencoderConfig, tensors,
                 policy: EvalPolicy = DEFAULT_POLICY) -> np.ndarray:
    """[3, H, W] pixels in [0,1] -> [n_c, H/8, W/8] latents."""
    x = np.ascontiguousarray(x, dtype=np.float32)
    if x.ndim != 3 or x.shape[0] != 3:
        raise ShapeError(f"expected [3, H, W] input, got {x.shape}")
    _, h, w = x.shape
    if h % DOWN_FACTOR or w % DOWN_FACTOR:
        raise ShapeError(f"extents {h}x{w} must be divisible by {DOWN_FACTOR}")
    for i in range(3):
        x = conv2d(x, _conv_spec(tensors, f"enc.down{i}", stride=2), policy)
        x = leaky_relu(x, policy=policy)
        x = _run_res_stage(x, tensors, f"enc.stage{i}", cfg.resblocks, policy)
    return x


def decode_image(y_hat: np.ndarray, cfg: AutoencoderConfig, tensors,
                 policy: EvalPolicy = DEFAULT_POLICY) -> np.ndarray:
    """[n_c, h, w] latents -> [3, 8h, 8w] pixels clamped to [0,1]."""
    y_hat = np.ascontiguousarray(y_hat, dtype=np.float32)
    if y_hat.ndim != 3 or y_hat.shape[0] != cfg.n_c:
        raise ShapeError(
            f"expected [{cfg.n_c}, h, w] latents, got {y_hat.shape}")
    x = _run_res_stage(y_hat, tensors, "dec.stage0", cfg.dec_resblocks, policy)
    for i in range(3):
        x = upsample2x(x, _conv_spec(tensors, f"dec.up{i}", stride=1), policy)
        x = leaky_relu(x, policy=policy)
        x = _run_res_stage(x, tensors, f"dec.stage{i + 1}", cfg.dec_resblocks,
                           policy)
    x = conv2d(x, _conv_spec(tensors, "dec.out", stride=1), policy)
    return np.clip(x, 0.0, 1.0)


def count_complexity(cfg: AutoencoderConfig, h: int, w: int):
    """(params, macs) for one encode+decode of an h x w frame.

    MACs follow standard conv arithmetic: out_c * out_h * out_w * in_c * k*k.
    """
    params = 0
    macs = 0

    def conv_cost(cin, cout, k, oh, ow):
        nonlocal params, macs
        params += cout * cin * k * k + cout
        macs += cout * oh * ow * cin * k * k

    def res_cost(width, count, oh, ow):
        for _ in range(count):
            conv_cost(width, width, 3, oh, ow)
            conv_cost(width, width, 3, oh, ow)

    prev, ch, cw = 3, h, w
    for width in cfg.enc_widths:
        ch, cw = ch // 2, cw // 2
        conv_cost(prev, width, 3, ch, cw)
        res_cost(width, cfg.resblocks, ch, cw)
        prev = width
    prev = cfg.n_c
    res_cost(prev, cfg.dec_resblocks, ch, cw)
    for width in cfg.dec_widths:
        ch, cw = ch * 2, cw * 2
        conv_cost(prev, width, 3, ch, cw)
        res_cost(width, cfg.dec_resblocks, ch, cw)
        prev = width
    conv_cost(prev, 3, 3, ch, cw)
    return params, macs
