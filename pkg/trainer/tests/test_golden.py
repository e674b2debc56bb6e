import json

import numpy as np
import pytest
import torch

from vqvc_trainer.config import TrainConfig
from vqvc_trainer.golden import GOLDEN_FRAME, emit_golden
from vqvc_trainer.train import train_toy
from vqvc_trainer.vqvcw import read_container


@pytest.fixture(scope="module")
def golden_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("golden")
    result = train_toy(TrainConfig(max_steps=200), seed=0)
    emit_golden(out, result=result, seed=0)
    return out


def test_emits_all_artifacts(golden_dir):
    for name in ("weights.vqvcw", "stages.npz", "train_report.json"):
        assert (golden_dir / name).exists()


def test_report_meets_training_bar(golden_dir):
    report = json.loads((golden_dir / "train_report.json").read_text())
    assert report["steps"] <= 2000
    assert report["final_mse"] <= 0.5 * report["initial_mse"]


def test_container_carries_full_schema(golden_dir):
    manifest, tensors = read_container(
        (golden_dir / "weights.vqvcw").read_bytes())
    assert manifest["n_c"] == "16"
    assert manifest["key_sizes"] == "64,32,16"
    assert "enc.down0.w" in tensors
    assert "ctxdec.rep1.attn.o.b" in tensors
    assert "cb.pred.stage3.half1" in tensors


def test_stage_tensors_are_consistent(golden_dir):
    g = np.load(golden_dir / "stages.npz")
    lat = GOLDEN_FRAME // 8
    assert g["x"].shape == (3, GOLDEN_FRAME, GOLDEN_FRAME)
    assert g["y_enc"].shape == (16, lat, lat)
    assert g["x_dec"].shape == (3, GOLDEN_FRAME, GOLDEN_FRAME)
    assert g["mq_idx0"].shape == (2, lat // 2, lat // 2)
    assert g["mq_idx2"].shape == (2, lat // 8, lat // 8)
    assert g["mq_idx0"].dtype == np.int32
    assert all(np.isfinite(g[k]).all() for k in g.files)


def test_indices_reconstruct_mq_out(golden_dir):
    """Replaying the committed index grids through the committed
    codebooks reproduces the committed reconstruction exactly."""
    g = np.load(golden_dir / "stages.npz")
    _, tensors = read_container((golden_dir / "weights.vqvcw").read_bytes())

    def up(x):
        return x.repeat(2, axis=-2).repeat(2, axis=-1)

    acc = None
    for s in (2, 1, 0):
        idx = g[f"mq_idx{s}"]
        halves = []
        for bi in range(2):
            book = tensors[f"cb.key.stage{s + 1}.half{bi}"]
            looked = book[idx[bi]]                     # [h, w, half]
            halves.append(np.moveaxis(looked, -1, 0))
        z_hat = np.concatenate(halves, axis=0)
        acc = z_hat if acc is None else z_hat + up(acc)
    recon = up(acc)
    assert np.abs(recon - g["mq_out"]).max() < 1e-5
