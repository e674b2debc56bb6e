from .config import TrainConfig
from .model import CodecNet
from .train import TrainResult, train_toy
from .vqvcw import read_container, write_container

__all__ = [
    "CodecNet",
    "TrainConfig",
    "TrainResult",
    "read_container",
    "train_toy",
    "write_container",
]
