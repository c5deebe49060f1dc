"""Clean vs corrupted evaluation of a checkpoint on a dataset split.

    python scripts/corruption_eval.py CHECKPOINT DATA_ROOT [--split test] [--seeds 0 1 2]
"""

import argparse
import dataclasses

from attnvo.app.harness import Summary, evaluate
from attnvo.data.dataset import load_split
from attnvo.data.images import AugmentConfig
from attnvo.training import load_checkpoint


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("checkpoint")
    ap.add_argument("data")
    ap.add_argument("--split", default="test")
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--lengths", type=float, nargs="+", default=[25.0, 50.0, 75.0])
    args = ap.parse_args()

    ckpt = load_checkpoint(args.checkpoint)
    seqs = load_split(args.data, args.split)
    if not seqs:
        raise SystemExit(f"no sequences in {args.data}/{args.split}")
    clean = evaluate(ckpt, seqs, args.lengths)
    for rep in clean:
        print(rep.to_text())
    corrupted = [
        r for s in args.seeds
        for r in evaluate(ckpt, seqs, args.lengths, corruption=AugmentConfig(apply_probability=1.0), seed=100 * s)
    ]
    names = [f.name for f in dataclasses.fields(Summary)]
    a, b = Summary.of(clean), Summary.of(corrupted)
    print(f"{'':>18}{'clean':>12}{'corrupted':>12}")
    for n in names:
        print(f"{n:>18}{getattr(a, n):>12.4f}{getattr(b, n):>12.4f}")
    print("corrupted >= clean on every error:", b.dominates(a))


if __name__ == "__main__":
    main()
