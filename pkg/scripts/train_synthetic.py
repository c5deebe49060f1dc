"""Train the toy model on the synthetic learning set and compare against a zero-motion baseline.

    python scripts/train_synthetic.py --out runs/learning [--epochs 50] [--seed 0]
"""

import argparse
import logging
from pathlib import Path

from attnvo.app.harness import LEARNING_DATA, LEARNING_SEQUENCES, predict, toy_train_config, zero_motion
from attnvo.data.dataset import synthetic_dataset
from attnvo.metrics import ate
from attnvo.training import save_checkpoint, train


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="runs/learning")
    ap.add_argument("--epochs", type=int, default=50)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    data = synthetic_dataset(LEARNING_SEQUENCES, LEARNING_DATA)
    result = train(toy_train_config(max_epochs=args.epochs, seed=args.seed), data, history_path=out / "history.csv")
    save_checkpoint(result.best, out / "best.ckpt")
    save_checkpoint(result.last, out / "last.ckpt")

    losses = [r.val_loss for r in result.history]
    print(f"validation loss {losses[0]:.4f} -> best {min(losses):.4f} (ratio {min(losses) / losses[0]:.3f})")
    for seq in data["test"]:
        model = ate(predict(result.best, seq), seq.trajectory)[0]
        zero = ate(zero_motion(seq), seq.trajectory)[0]
        print(f"{seq.name}: ATE {model:.3f} m, zero-motion {zero:.3f} m")


if __name__ == "__main__":
    main()
