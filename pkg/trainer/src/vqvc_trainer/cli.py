import argparse
import sys
from pathlib import Path

from .config import TrainConfig
from .golden import emit_golden
from .train import train_toy


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="vqvc-train",
        description="toy codec training and fixture export")
    parser.add_argument("out_dir", type=Path,
                        help="directory for weights.vqvcw and fixtures")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--max-steps", type=int, default=2000)
    parser.add_argument("--no-fixtures", action="store_true",
                        help="train and export weights only")
    args = parser.parse_args(argv)

    cfg = TrainConfig(max_steps=args.max_steps)
    result = train_toy(cfg, seed=args.seed)
    print(f"trained {result.steps} steps: "
          f"mse {result.initial_mse:.5f} -> {result.final_mse:.5f}")
    if args.no_fixtures:
        from .vqvcw import write_container
        args.out_dir.mkdir(parents=True, exist_ok=True)
        (args.out_dir / "weights.vqvcw").write_bytes(write_container(
            cfg.manifest(), result.model.export_tensors()))
    else:
        emit_golden(args.out_dir, result=result, seed=args.seed)
    print(f"fixtures -> {args.out_dir}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
