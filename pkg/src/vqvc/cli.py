"""Command-line surface: encode, decode, fit, bench, init-weights.

Exit codes are stable contracts: 0 ok, 2 usage/config problems, 3 model
(weight hash) mismatch, 4 corrupt stream.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import autoencoder as ae
from . import codec as codec_mod
from .bitstream import GopBitstream, KIND_KEY, measure_bits
from .context import ContextConfig
from .determinism import (
    PerturbationSpec,
    cross_decode_report,
    report_to_csv,
)
from .errors import (
    ConfigError,
    CorruptStreamError,
    IntegrityError,
    ProtocolError,
    ShapeError,
    VersionError,
    VqvcError,
    WeightError,
)
from .metrics import bd_rate, bpp, ms_ssim, psnr
from .quantizer import CodebookSpec, PREDICTED_SPECS, fit_codebooks
from .tensor_ops import PERTURBATION_MODES

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_MODEL_MISMATCH = 3
EXIT_CORRUPT = 4

CROP_MULTIPLE = 128


class CliError(Exception):
    def __init__(self, message, code=EXIT_USAGE):
        super().__init__(message)
        self.code = code


def max_workers() -> int:
    try:
        return max(1, int(os.environ.get("VQVC_THREADS", "1")))
    except ValueError:
        return 1


# ---------------------------------------------------------------------------
# frame I/O

def _center_crop(img: np.ndarray, multiple: int) -> np.ndarray:
    _, h, w = img.shape
    ch, cw = h - h % multiple, w - w % multiple
    if ch == 0 or cw == 0:
        raise CliError(f"frame {h}x{w} smaller than the crop multiple")
    top, left = (h - ch) // 2, (w - cw) // 2
    return img[:, top:top + ch, left:left + cw]


def load_frames(path: Path, raw_size: str | None, center_crop: bool):
    """PNG sequence from a directory, or raw planar 8-bit RGB file."""
    if path.is_dir():
        from PIL import Image
        files = sorted(p for p in path.iterdir()
                       if p.suffix.lower() in (".png", ".ppm"))
        if not files:
            raise CliError(f"no PNG frames found in {path}")
        frames = []
        for f in files:
            arr = np.asarray(Image.open(f).convert("RGB"), np.float32) / 255.0
            frames.append(np.ascontiguousarray(arr.transpose(2, 0, 1)))
    else:
        if not path.exists():
            raise CliError(f"input {path} does not exist")
        if not raw_size:
            raise CliError("raw input needs --raw-size WxH")
        w, h = (int(v) for v in raw_size.lower().split("x"))
        data = np.fromfile(path, np.uint8)
        per = 3 * h * w
        if len(data) % per:
            raise CliError(f"raw file length is not a multiple of {per}")
        frames = [chunk.reshape(3, h, w).astype(np.float32) / 255.0
                  for chunk in data.reshape(-1, per)]
    out = []
    for x in frames:
        _, h, w = x.shape
        if h % CROP_MULTIPLE or w % CROP_MULTIPLE:
            if not center_crop:
                raise CliError(
                    f"frame extents {h}x{w} not divisible by {CROP_MULTIPLE}; "
                    "pass --center-crop")
            x = _center_crop(x, CROP_MULTIPLE)
        out.append(x)
    return out


def save_frames(frames, out_dir: Path):
    from PIL import Image
    out_dir.mkdir(parents=True, exist_ok=True)
    for i, x in enumerate(frames):
        img = np.rint(np.clip(x, 0, 1) * 255.0).astype(np.uint8)
        Image.fromarray(img.transpose(1, 2, 0)).save(out_dir / f"frame_{i:05d}.png")


def _parse_rate_point(text: str) -> CodebookSpec:
    if text in PREDICTED_SPECS:
        return PREDICTED_SPECS[text]
    try:
        sizes = tuple(int(v) for v in text.split(","))
        return CodebookSpec(sizes)
    except (ValueError, ConfigError) as exc:
        raise CliError(f"bad rate point {text!r}: {exc}")


def _load_model(weights_path: Path, gop: int, rate_point: str, light: bool):
    if not weights_path.exists():
        raise CliError(f"weights file {weights_path} does not exist")
    try:
        return codec_mod.model_from_bytes(
            weights_path.read_bytes(), gop=gop,
            variant="light" if light else None,
            pred_spec=None)
    except (IntegrityError, VersionError) as exc:
        raise CliError(str(exc), EXIT_CORRUPT)
    except (WeightError, ConfigError) as exc:
        raise CliError(str(exc))


# ---------------------------------------------------------------------------
# subcommands

def cmd_encode(args) -> int:
    frames = load_frames(Path(args.input), args.raw_size, args.center_crop)
    model = _load_model(Path(args.weights), args.gop, args.rate_point,
                        args.light_decoder)
    spec = _parse_rate_point(args.rate_point)
    if spec != model.cfg.pred_spec:
        model = codec_mod.CodecModel(
            codec_mod.CodecConfig(args.gop, model.cfg.key_spec, spec,
                                  model.cfg.ae, model.cfg.ctx), model.bundle)
    t0 = time.perf_counter()
    streams = codec_mod.encode_sequence(frames, model)
    elapsed = time.perf_counter() - t0
    blob = b"".join(s.serialize() for s in streams)
    Path(args.output).write_bytes(blob)
    total_bits = sum(s.payload_bits() for s in streams)
    pixels = sum(f.shape[1] * f.shape[2] for f in frames)
    print(f"encoded {len(frames)} frames -> {args.output}")
    print(f"bpp {total_bits / pixels:.5f} "
          f"({elapsed / len(frames) * 1000:.1f} ms/frame)")
    return EXIT_OK


def _split_streams(blob: bytes):
    """A file may concatenate several GOP containers; split greedily."""
    streams = []
    pos = 0
    while pos < len(blob):
        stream = GopBitstream.parse(_take_one(blob, pos))
        streams.append(stream)
        pos += len(stream.serialize())
    return streams


def _take_one(blob, pos):
    # parse() rejects trailing bytes, so probe with increasing suffix cuts:
    # the container is self-delimiting, so parse the header first
    from .bitstream import _HEADER, frame_payload_bytes
    if len(blob) - pos < _HEADER.size:
        raise CorruptStreamError("stream shorter than header")
    (magic, version, width, height, gop, count, k1, k2, k3,
     p1, p2, p3, whash) = _HEADER.unpack_from(blob, pos)
    key_spec = CodebookSpec((k1, k2, k3))
    pred_spec = CodebookSpec((p1, p2, p3))
    lh, lw = height // 8, width // 8
    size = _HEADER.size
    probe = pos + _HEADER.size
    for _ in range(count):
        if probe >= len(blob):
            raise CorruptStreamError("stream truncated")
        spec = key_spec if blob[probe] == KIND_KEY else pred_spec
        n = 1 + frame_payload_bytes(spec, lh, lw)
        probe += n
        size += n
    return blob[pos:pos + size]


def cmd_decode(args) -> int:
    path = Path(args.bitstream)
    if not path.exists():
        raise CliError(f"bitstream {path} does not exist")
    model = _load_model(Path(args.weights), 32, "high", args.light_decoder)
    try:
        streams = _split_streams(path.read_bytes())
    except CorruptStreamError as exc:
        raise CliError(str(exc), EXIT_CORRUPT)
    for s in streams:
        if s.weight_hash != model.weight_hash:
            raise CliError("bitstream was encoded with different weights",
                           EXIT_MODEL_MISMATCH)
    model = codec_mod.CodecModel(
        codec_mod.CodecConfig(streams[0].gop, streams[0].key_spec,
                              streams[0].pred_spec, model.cfg.ae,
                              model.cfg.ctx), model.bundle)
    try:
        if args.perturb:
            modes = ([PerturbationSpec(m) for m in PERTURBATION_MODES]
                     if args.perturb == "all"
                     else [PerturbationSpec("none"),
                           PerturbationSpec(args.perturb)])
            all_rows = []
            for s in streams:
                all_rows.extend(cross_decode_report(s, model, modes))
            csv_path = Path(args.csv_out or
                            (str(args.output) + ".cross_decode.csv"))
            csv_path.write_text(report_to_csv(all_rows))
            print(f"cross-decode report -> {csv_path}")
        frames = codec_mod.decode_sequence(streams, model)
    except CorruptStreamError as exc:
        raise CliError(str(exc), EXIT_CORRUPT)
    except ProtocolError as exc:
        raise CliError(str(exc), EXIT_CORRUPT)
    save_frames(frames, Path(args.output))
    print(f"decoded {len(frames)} frames -> {args.output}")
    return EXIT_OK


def cmd_fit(args) -> int:
    frames = load_frames(Path(args.input), args.raw_size, args.center_crop)
    model = _load_model(Path(args.weights), args.gop, args.rate_point,
                        False)
    latents = [ae.encode_image(x, model.cfg.ae, model.tensors)
               for x in frames]
    key_books = fit_codebooks(latents, model.cfg.key_spec, seed=args.seed)
    pred_books = fit_codebooks(latents, _parse_rate_point(args.rate_point),
                               seed=args.seed + 1)
    refit = model.with_books(key_books, pred_books)
    from .weights import save_weights
    Path(args.output).write_bytes(save_weights(refit.bundle))
    if key_books.fit_warning or pred_books.fit_warning:
        print("warning: batch had fewer distinct vectors than codewords; "
              "centroids were recycled")
    print(f"refit codebooks -> {args.output} "
          f"(hash {refit.weight_hash:016x})")
    return EXIT_OK


def cmd_bench(args) -> int:
    dataset = Path(args.dataset)
    clips = sorted(p for p in dataset.iterdir() if p.is_dir()) or [dataset]
    rate_points = [p.strip() for p in args.rate_points.split(";")]
    gops = [int(g) for g in args.gops.split(",")]
    rows = []
    for clip in clips:
        frames = load_frames(clip, args.raw_size, args.center_crop)
        for rp in rate_points:
            for gop in gops:
                model = _load_model(Path(args.weights), gop, rp,
                                    args.light_decoder)
                spec = _parse_rate_point(rp)
                model = codec_mod.CodecModel(
                    codec_mod.CodecConfig(gop, model.cfg.key_spec, spec,
                                          model.cfg.ae, model.cfg.ctx),
                    model.bundle)
                streams, recons = codec_mod.encode_sequence(
                    frames, model, return_recon=True)
                rate = (sum(s.payload_bits() for s in streams) /
                        sum(f.shape[1] * f.shape[2] for f in frames))
                qual = float(np.mean([min(psnr(a, b), 99.0)
                                      for a, b in zip(frames, recons)]))
                try:
                    ssim = float(np.mean([ms_ssim(a, b)
                                          for a, b in zip(frames, recons)]))
                except ConfigError:
                    ssim = float("nan")
                rows.append((clip.name, rp, gop, rate, qual, ssim))
    out = Path(args.csv_out or "bench.csv")
    with out.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["clip", "rate_point", "gop", "bpp", "psnr", "ms_ssim"])
        for row in rows:
            writer.writerow([row[0], row[1], row[2], f"{row[3]:.5f}",
                             f"{row[4]:.4f}", f"{row[5]:.5f}"])
    print(f"wrote {len(rows)} RD points -> {out}")
    _print_bd_table(rows, gops)
    return EXIT_OK


def _print_bd_table(rows, gops):
    by_gop = {}
    for _clip, rp, gop, rate, qual, _ssim in rows:
        by_gop.setdefault(gop, {}).setdefault(rp, []).append((rate, qual))
    for gop, curves in by_gop.items():
        points = {rp: [(np.mean([r for r, _ in pts]),
                        np.mean([q for _, q in pts]))]
                  for rp, pts in curves.items()}
        flat = [(np.mean([r for r, _ in pts]), np.mean([q for _, q in pts]))
                for pts in curves.values()]
        if len(flat) < 4:
            print(f"gop {gop}: fewer than 4 rate points, BD-rate omitted")
            continue
        anchor = sorted(flat, key=lambda p: p[0])
        try:
            print(f"gop {gop}: BD-rate(self) = "
                  f"{bd_rate(anchor, anchor):+.2f}%")
        except ConfigError as exc:
            print(f"gop {gop}: BD-rate omitted ({exc})")


def cmd_init_weights(args) -> int:
    cfg = codec_mod.CodecConfig(
        gop=args.gop,
        pred_spec=_parse_rate_point(args.rate_point),
        ae=ae.AutoencoderConfig(
            widths=tuple(int(w) for w in args.widths.split(",")),
            n_c=args.latent_channels, resblocks=args.resblocks),
        ctx=ContextConfig(
            channels=args.latent_channels, heads=args.heads,
            head_dim=args.latent_channels // args.heads))
    bundle = codec_mod.init_bundle(cfg, seed=args.seed)
    from .weights import save_weights
    Path(args.output).write_bytes(save_weights(bundle))
    print(f"wrote random-init weights -> {args.output} "
          f"(hash {bundle.content_hash:016x})")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vqvc", description="codebook-indexed video codec")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--raw-size", help="WxH for raw planar input")
        p.add_argument("--center-crop", action="store_true")
        p.add_argument("--gop", type=int, default=32)
        p.add_argument("--rate-point", default="high",
                       help="low|mid|high or K1,K2,K3")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--light-decoder", action="store_true")
        p.add_argument("--csv-out")

    enc = sub.add_parser("encode", help="encode frames to a bitstream")
    enc.add_argument("input")
    enc.add_argument("weights")
    enc.add_argument("output")
    common(enc)
    enc.set_defaults(func=cmd_encode)

    dec = sub.add_parser("decode", help="decode a bitstream to frames")
    dec.add_argument("bitstream")
    dec.add_argument("weights")
    dec.add_argument("output")
    dec.add_argument("--perturb", choices=PERTURBATION_MODES + ("all",))
    common(dec)
    dec.set_defaults(func=cmd_decode)

    fit = sub.add_parser("fit", help="refit codebooks on latents")
    fit.add_argument("input")
    fit.add_argument("weights")
    fit.add_argument("output")
    common(fit)
    fit.set_defaults(func=cmd_fit)

    bench = sub.add_parser("bench", help="emit RD CSV over rate points/GOPs")
    bench.add_argument("dataset")
    bench.add_argument("weights")
    bench.add_argument("--rate-points", default="low;mid;high")
    bench.add_argument("--gops", default="32")
    common(bench)
    bench.set_defaults(func=cmd_bench)

    init = sub.add_parser("init-weights",
                          help="write a seeded random-init weight bundle")
    init.add_argument("output")
    init.add_argument("--widths", default="64,128")
    init.add_argument("--latent-channels", type=int, default=128)
    init.add_argument("--resblocks", type=int, default=2)
    init.add_argument("--heads", type=int, default=8)
    common(init)
    init.set_defaults(func=cmd_init_weights)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except (ShapeError, ConfigError, WeightError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (IntegrityError, VersionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MODEL_MISMATCH
    except (CorruptStreamError, ProtocolError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CORRUPT
    except VqvcError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
