from __future__ import annotations

from dataclasses import dataclass, field

import torch

from .config import TrainConfig
from .data import make_dataset
from .model import CodecNet


@dataclass
class TrainResult:
    model: CodecNet
    steps: int
    initial_mse: float
    final_mse: float
    history: list[tuple[int, float]] = field(default_factory=list)

    def report(self) -> dict:
        return {
            "steps": self.steps,
            "initial_mse": self.initial_mse,
            "final_mse": self.final_mse,
        }


@torch.no_grad()
def eval_distortion(model: CodecNet, clips) -> float:
    model.eval()
    total = 0.0
    for clip in clips:
        _, dist, _ = model.forward_clip(clip, clamp=True)
        total += float(dist)
    model.train()
    return total / len(clips)


def train_toy(cfg: TrainConfig | None = None, seed: int = 0,
              n_clips: int = 6, eval_every: int = 25,
              target_ratio: float = 0.45) -> TrainResult:
    """Train on synthetic clips until eval distortion drops below
    target_ratio x its untrained value (or the step budget runs out)."""
    cfg = cfg or TrainConfig()
    torch.manual_seed(seed)
    model = CodecNet(cfg, seed=seed)
    train_clips = make_dataset(n_clips, seed=seed + 1, frames=cfg.gop,
                               size=cfg.frame_size)
    eval_clips = make_dataset(2, seed=seed + 5000, frames=cfg.gop,
                              size=cfg.frame_size)
    initial = eval_distortion(model, eval_clips)
    opt = torch.optim.Adam(model.parameters(), lr=cfg.lr)
    history = [(0, initial)]
    model.train()
    step = 0
    current = initial
    while step < cfg.max_steps:
        clip = train_clips[step % len(train_clips)]
        opt.zero_grad()
        _, dist, commit = model.forward_clip(clip)
        loss = dist + cfg.commit_beta * commit
        loss.backward()
        opt.step()
        step += 1
        if step % eval_every == 0:
            current = eval_distortion(model, eval_clips)
            history.append((step, current))
            if current <= target_ratio * initial:
                break
    final = eval_distortion(model, eval_clips)
    history.append((step, final))
    return TrainResult(model=model, steps=step, initial_mse=initial,
                       final_mse=final, history=history)
