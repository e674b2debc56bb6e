"""GOP-level orchestration: keyframe and predicted-frame paths with
reference-latent propagation.

The encoder simulates the decoder exactly (shared code path for every
reconstruction), so encoder-side and decoder-side reference latents are
bit-identical on one build by construction.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autoencoder as ae
from . import context as ctx
from .bitstream import GopBitstream, KIND_KEY, KIND_PRED
from .errors import ProtocolError, ShapeError
from .quantizer import (
    BOOKS_PER_STAGE,
    Codebook,
    CodebookSet,
    CodebookSpec,
    IndexGrid,
    KEYFRAME_SPEC,
    NUM_STAGES,
    PREDICTED_SPECS,
    multistage_dequantize,
    multistage_quantize,
)
from .tensor_ops import DEFAULT_POLICY, EvalPolicy
from .weights import WeightBundle, load_weights, save_weights


@dataclass(frozen=True)
class CodecConfig:
    gop: int = 32
    key_spec: CodebookSpec = KEYFRAME_SPEC
    pred_spec: CodebookSpec = PREDICTED_SPECS["low"]
    ae: ae.AutoencoderConfig = field(default_factory=ae.AutoencoderConfig)
    ctx: ctx.ContextConfig = field(default_factory=ctx.ContextConfig)

    def __post_init__(self):
        if self.gop < 1:
            raise ProtocolError("GOP size must be >= 1")


@dataclass
class LatentState:
    """Reference latents carried between frames, plus the in-GOP counter."""

    y_ref: np.ndarray
    counter: int


def codebook_names(kind: str, spec: CodebookSpec):
    for s in range(NUM_STAGES):
        for half in range(BOOKS_PER_STAGE):
            yield f"cb.{kind}.stage{s + 1}.half{half}", spec.sizes[s]


class CodecModel:
    """A codec configuration bound to a validated weight bundle."""

    def __init__(self, cfg: CodecConfig, bundle: WeightBundle):
        self.cfg = cfg
        self.bundle = bundle
        self.tensors = bundle.tensors
        ae.validate_weights(cfg.ae, self.tensors)
        for name, shape in ctx.context_weight_shapes(cfg.ctx).items():
            bundle.require(name, shape)
        half = cfg.ae.n_c // 2
        self.key_books = self._books("key", cfg.key_spec, half)
        self.pred_books = self._books("pred", cfg.pred_spec, half)

    def _books(self, kind, spec, half):
        stages = []
        for s in range(NUM_STAGES):
            pair = tuple(
                Codebook(self.bundle.require(
                    f"cb.{kind}.stage{s + 1}.half{b}", (spec.sizes[s], half)))
                for b in range(BOOKS_PER_STAGE))
            stages.append(pair)
        return CodebookSet(stages)

    @property
    def weight_hash(self) -> int:
        return self.bundle.content_hash

    def with_books(self, key_books: CodebookSet | None = None,
                   pred_books: CodebookSet | None = None) -> "CodecModel":
        """Rebind codebooks (used by offline fitting)."""
        tensors = dict(self.tensors)
        for kind, books in (("key", key_books), ("pred", pred_books)):
            if books is None:
                continue
            for s, pair in enumerate(books.stages):
                for b, book in enumerate(pair):
                    tensors[f"cb.{kind}.stage{s + 1}.half{b}"] = book.codewords
        spec_of = lambda books, cur: books.spec() if books is not None else cur
        cfg = CodecConfig(self.cfg.gop,
                          spec_of(key_books, self.cfg.key_spec),
                          spec_of(pred_books, self.cfg.pred_spec),
                          self.cfg.ae, self.cfg.ctx)
        bundle = WeightBundle(manifest=manifest_for(cfg), tensors=tensors)
        save_weights(bundle)   # recompute content hash
        return CodecModel(cfg, bundle)


def manifest_for(cfg: CodecConfig) -> dict[str, str]:
    return {
        "n_c": str(cfg.ae.n_c),
        "widths": ",".join(map(str, cfg.ae.widths)),
        "resblocks": str(cfg.ae.resblocks),
        "variant": cfg.ae.variant,
        "ctx.s_sw": str(cfg.ctx.s_sw),
        "ctx.s_p": str(cfg.ctx.s_p),
        "ctx.heads": str(cfg.ctx.heads),
        "ctx.head_dim": str(cfg.ctx.head_dim),
        "ctx.repeats": str(cfg.ctx.repeats),
        "key_sizes": ",".join(map(str, cfg.key_spec.sizes)),
        "pred_sizes": ",".join(map(str, cfg.pred_spec.sizes)),
    }


def config_from_manifest(manifest: dict[str, str], gop: int = 32,
                         variant: str | None = None) -> CodecConfig:
    ints = lambda key: tuple(int(v) for v in manifest[key].split(","))
    n_c = int(manifest["n_c"])
    acfg = ae.AutoencoderConfig(
        widths=ints("widths"), n_c=n_c,
        resblocks=int(manifest["resblocks"]),
        variant=variant or manifest.get("variant", "standard"))
    ccfg = ctx.ContextConfig(
        channels=n_c,
        s_sw=int(manifest["ctx.s_sw"]), s_p=int(manifest["ctx.s_p"]),
        heads=int(manifest["ctx.heads"]), head_dim=int(manifest["ctx.head_dim"]),
        repeats=int(manifest["ctx.repeats"]))
    return CodecConfig(gop=gop,
                       key_spec=CodebookSpec(ints("key_sizes")),
                       pred_spec=CodebookSpec(ints("pred_sizes")),
                       ae=acfg, ctx=ccfg)


def model_from_bytes(data: bytes, gop: int = 32,
                     variant: str | None = None,
                     pred_spec: CodebookSpec | None = None) -> CodecModel:
    bundle = load_weights(data)
    cfg = config_from_manifest(bundle.manifest, gop=gop, variant=variant)
    if pred_spec is not None and pred_spec != cfg.pred_spec:
        cfg = CodecConfig(cfg.gop, cfg.key_spec, pred_spec, cfg.ae, cfg.ctx)
    return CodecModel(cfg, bundle)


def init_bundle(cfg: CodecConfig, seed: int = 0) -> WeightBundle:
    """Random-initialized weights plus random codebooks (seeded)."""
    rng = np.random.default_rng(seed + 1)
    tensors = ae.init_weights(cfg.ae, seed)
    for name, shape in ctx.context_weight_shapes(cfg.ctx).items():
        if name.endswith(".b"):
            tensors[name] = np.zeros(shape, np.float32)
        else:
            fan_in = int(np.prod(shape[1:]))
            tensors[name] = rng.normal(0.0, 0.5 / np.sqrt(fan_in),
                                       shape).astype(np.float32)
    half = cfg.ae.n_c // 2
    for kind, spec in (("key", cfg.key_spec), ("pred", cfg.pred_spec)):
        for name, k in codebook_names(kind, spec):
            tensors[name] = rng.normal(0.0, 0.3, (k, half)).astype(np.float32)
    bundle = WeightBundle(manifest=manifest_for(cfg), tensors=tensors)
    save_weights(bundle)   # sets content hash
    return bundle


def _check_frame(x: np.ndarray, cfg: CodecConfig):
    x = np.ascontiguousarray(x, dtype=np.float32)
    if x.ndim != 3 or x.shape[0] != 3:
        raise ShapeError(f"frame must be [3, H, W], got {x.shape}")
    _, h, w = x.shape
    # latents must divide by 8 for the VQ stages and by the query window
    step = 8 * max(8, cfg.ctx.s_sw)
    if h % step or w % step:
        raise ShapeError(f"frame extents {h}x{w} must be divisible by {step}")
    return x


def encode_keyframe(x: np.ndarray, model: CodecModel,
                    policy: EvalPolicy = DEFAULT_POLICY):
    """Returns (IndexGrid, new state). The state's reference latents equal
    the decoder-side reconstruction bit for bit."""
    x = _check_frame(x, model.cfg)
    y = ae.encode_image(x, model.cfg.ae, model.tensors, policy)
    grid, y_hat = multistage_quantize(y, model.key_books, policy)
    return grid, LatentState(y_hat, 1)


def encode_predicted(x: np.ndarray, model: CodecModel, state: LatentState,
                     policy: EvalPolicy = DEFAULT_POLICY):
    if state is None:
        raise ProtocolError("predicted frame before any keyframe")
    x = _check_frame(x, model.cfg)
    y = ae.encode_image(x, model.cfg.ae, model.tensors, policy)
    y_ctx = ctx.context_encode(y, state.y_ref, model.cfg.ctx, model.tensors,
                               policy)
    grid, y_ctx_hat = multistage_quantize(y_ctx, model.pred_books, policy)
    y_hat = ctx.context_decode(y_ctx_hat, state.y_ref, model.cfg.ctx,
                               model.tensors, policy)
    return grid, LatentState(y_hat, state.counter + 1)


def decode_frame(grid: IndexGrid, kind: int, model: CodecModel,
                 state: LatentState | None,
                 policy: EvalPolicy = DEFAULT_POLICY,
                 gop: int | None = None):
    """Returns (reconstructed frame in [0,1], new state)."""
    gop = model.cfg.gop if gop is None else gop
    expect_key = state is None or state.counter % gop == 0
    if kind == KIND_KEY and not expect_key:
        raise ProtocolError("keyframe arrived mid-GOP")
    if kind == KIND_PRED and expect_key:
        raise ProtocolError("predicted frame where a keyframe was expected")
    if kind == KIND_KEY:
        grid.validate(model.cfg.key_spec)
        y_hat = multistage_dequantize(grid, model.key_books, policy)
        state = LatentState(y_hat, 1)
    else:
        grid.validate(model.cfg.pred_spec)
        y_ctx_hat = multistage_dequantize(grid, model.pred_books, policy)
        y_hat = ctx.context_decode(y_ctx_hat, state.y_ref, model.cfg.ctx,
                                   model.tensors, policy)
        state = LatentState(y_hat, state.counter + 1)
    x_hat = ae.decode_image(y_hat, model.cfg.ae, model.tensors, policy)
    return x_hat, state


def encode_sequence(frames, model: CodecModel,
                    policy: EvalPolicy = DEFAULT_POLICY,
                    return_recon: bool = False):
    """Encode frames into one GopBitstream per GOP.

    Frame i is a keyframe iff i % gop == 0.  With return_recon, also
    returns the encoder-side reconstructions (what the decoder will emit).
    """
    frames = list(frames)
    if not frames:
        raise ProtocolError("need at least one frame")
    m = model.cfg.gop
    h, w = frames[0].shape[1], frames[0].shape[2]
    streams = []
    recons = []
    state = None
    records = []
    for i, x in enumerate(frames):
        if i % m == 0:
            if records:
                streams.append(_make_stream(model, w, h, records))
                records = []
            grid, state = encode_keyframe(x, model, policy)
            records.append((KIND_KEY, grid))
        else:
            grid, state = encode_predicted(x, model, state, policy)
            records.append((KIND_PRED, grid))
        if return_recon:
            recons.append(ae.decode_image(state.y_ref, model.cfg.ae,
                                          model.tensors, policy))
    streams.append(_make_stream(model, w, h, records))
    return (streams, recons) if return_recon else streams


def _make_stream(model, w, h, records):
    return GopBitstream(width=w, height=h, gop=model.cfg.gop,
                        key_spec=model.cfg.key_spec,
                        pred_spec=model.cfg.pred_spec,
                        weight_hash=model.weight_hash,
                        frames=list(records))


def decode_sequence(streams, model: CodecModel,
                    policy: EvalPolicy = DEFAULT_POLICY):
    """Decode a list of GopBitstream objects back to frames."""
    frames = []
    for stream in streams:
        state = None
        for kind, grid in stream.frames:
            x_hat, state = decode_frame(grid, kind, model, state, policy,
                                        gop=stream.gop)
            frames.append(x_hat)
    return frames
