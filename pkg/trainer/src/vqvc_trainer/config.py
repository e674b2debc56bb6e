from __future__ import annotations

from dataclasses import dataclass, field


@dataclass(frozen=True)
class TrainConfig:
    """Architecture and training hyper-parameters.

    The architecture fields mirror the decoder's manifest schema one for
    one; export writes them out verbatim.
    """

    widths: tuple[int, int] = (8, 16)
    n_c: int = 16
    resblocks: int = 1
    s_sw: int = 4
    s_p: int = 2
    heads: int = 4
    head_dim: int = 4
    repeats: int = 2
    key_sizes: tuple[int, int, int] = (64, 32, 16)
    pred_sizes: tuple[int, int, int] = (8, 32, 16)

    gop: int = 4
    frame_size: int = 64
    lr: float = 1e-3
    commit_beta: float = 0.25
    ema_decay: float = 0.99
    max_steps: int = 2000

    @property
    def inner(self) -> int:
        return self.heads * self.head_dim

    def manifest(self) -> dict[str, str]:
        return {
            "n_c": str(self.n_c),
            "widths": ",".join(map(str, self.widths)),
            "resblocks": str(self.resblocks),
            "variant": "standard",
            "ctx.s_sw": str(self.s_sw),
            "ctx.s_p": str(self.s_p),
            "ctx.heads": str(self.heads),
            "ctx.head_dim": str(self.head_dim),
            "ctx.repeats": str(self.repeats),
            "key_sizes": ",".join(map(str, self.key_sizes)),
            "pred_sizes": ",".join(map(str, self.pred_sizes)),
        }
