"""Reference-fixture generation.

After toy training, every pipeline stage is evaluated once in eval mode
and its inputs/outputs are frozen to disk next to the exported weight
container.  A reimplementation that loads the container must reproduce
the float tensors within loose float32 tolerance and the index grids
exactly; the generator therefore refuses near-tie quantizations that
would make index parity depend on summation order.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import torch

from .config import TrainConfig
from .data import make_clip
from .model import CodecNet
from .train import TrainResult, train_toy
from .vqvcw import write_container

# the committed fixtures exercise a frame larger than the training size
GOLDEN_FRAME = 128


def _np(x: torch.Tensor) -> np.ndarray:
    return x.detach().cpu().numpy().astype(np.float32)


def _assert_no_near_ties(vecs: torch.Tensor, codewords: torch.Tensor,
                         rel_gap: float = 1e-3):
    d2 = torch.cdist(vecs.double(), codewords.double()) ** 2
    best2, _ = d2.topk(2, dim=1, largest=False)
    gap = (best2[:, 1] - best2[:, 0]) / best2[:, 1].clamp_min(1e-12)
    if float(gap.min()) < rel_gap:
        raise RuntimeError(
            "near-tie quantization in golden fixture; pick another seed")


def emit_golden(out_dir: Path, result: TrainResult | None = None,
                seed: int = 0) -> TrainResult:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if result is None:
        result = train_toy(seed=seed)
    model = result.model
    cfg: TrainConfig = model.cfg
    model.eval()

    (out_dir / "weights.vqvcw").write_bytes(
        write_container(cfg.manifest(), model.export_tensors()))
    (out_dir / "train_report.json").write_text(
        json.dumps(result.report(), indent=2) + "\n")

    clip = make_clip(seed + 11, frames=2, size=GOLDEN_FRAME)
    with torch.no_grad():
        x0, x1 = clip
        y0 = model.encoder(x0)
        y1 = model.encoder(x1)

        y_hat0, grids, _ = model.vq_key(y0)
        x_dec = model.decoder(y_hat0)

        wca = model.ctx_enc.attn[0]
        wca_out = wca(y1, y_hat0)
        ctx_enc = model.ctx_enc(y1, y_hat0)
        ctx_dec = model.ctx_dec(ctx_enc, y_hat0)

        # guard index parity: every stage-1..3 assignment must be decisive
        cur = y0
        for pair in model.vq_key.books:
            cur = torch.nn.functional.avg_pool2d(cur, 2)
            half = cur.shape[1] // 2
            z_hats = []
            for bi, book in enumerate(pair):
                part = cur[:, bi * half:(bi + 1) * half]
                vecs = part.permute(0, 2, 3, 1).reshape(-1, half)
                _assert_no_near_ties(vecs, book.codewords)
                idx = book.assign(vecs)
                z_hats.append(book.codewords[idx].reshape(
                    1, cur.shape[2], cur.shape[3], half).permute(0, 3, 1, 2))
            cur = cur - torch.cat(z_hats, dim=1)

    stages = {
        "x": _np(x0[0]),
        "y_enc": _np(y0[0]),
        "y_dec_in": _np(y_hat0[0]),
        "x_dec": _np(x_dec[0]),
        "wca_cur": _np(y1[0]),
        "wca_ref": _np(y_hat0[0]),
        "wca_out": _np(wca_out[0]),
        "ctx_cur": _np(y1[0]),
        "ctx_ref": _np(y_hat0[0]),
        "ctx_enc": _np(ctx_enc[0]),
        "ctx_dec": _np(ctx_dec[0]),
        "mq_in": _np(y0[0]),
        "mq_out": _np(y_hat0[0]),
    }
    for s, grid in enumerate(grids):
        stages[f"mq_idx{s}"] = _np(grid[0]).astype(np.int32)
    np.savez(out_dir / "stages.npz", **stages)
    return result
