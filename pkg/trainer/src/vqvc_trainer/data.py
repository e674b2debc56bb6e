"""Synthetic clips: textured sinusoid mixtures drifting sideways, one
GOP per clip.  Deterministic per seed so loss curves are comparable."""

from __future__ import annotations

import numpy as np
import torch


def make_clip(seed: int, frames: int = 4, size: int = 64,
              shift: int = 2) -> list[torch.Tensor]:
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    base = np.zeros((3, size, size))
    for _ in range(4):
        fx, fy = rng.uniform(0.05, 0.45, 2)
        phase = rng.uniform(0, 2 * np.pi, 3)
        amp = rng.uniform(0.1, 0.3, 3)
        base += amp[:, None, None] * np.sin(
            fx * xx + fy * yy + phase[:, None, None])
    base += 0.15 * rng.standard_normal((3, size, size))
    base = np.clip(0.5 + 0.5 * base / np.abs(base).max(), 0, 1)
    clip = []
    for t in range(frames):
        frame = np.roll(base, shift * t, axis=2).astype(np.float32)
        clip.append(torch.from_numpy(frame).unsqueeze(0))
    return clip


def make_dataset(n_clips: int, seed: int = 0, frames: int = 4,
                 size: int = 64) -> list[list[torch.Tensor]]:
    return [make_clip(seed + 97 * i, frames=frames, size=size)
            for i in range(n_clips)]
