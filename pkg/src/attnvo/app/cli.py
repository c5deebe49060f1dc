"""Command-line entry point: ``attnvo {prepare,train,eval,infer,serve}``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from attnvo import config as kv
from attnvo.data.dataset import build_manifest, load_sequence, load_split, synthetic_dataset, write_dataset
from attnvo.data.images import ChannelStats, corrupt_frames
from attnvo.data.poses import load_pose_file, save_pose_file
from attnvo.data.synth import SynthConfig
from attnvo.metrics import DEFAULT_LENGTHS, build_report
from attnvo.training.checkpoint import load_checkpoint, save_checkpoint
from attnvo.training.config import TrainConfig
from attnvo.training.loop import dataset_stats, resize_sequence, train
from attnvo.trajectory import WindowConfig, infer_trajectory, prepare_frames

log = logging.getLogger("attnvo")


class CliError(Exception):
    pass


def read_stats_file(path) -> ChannelStats:
    vals = kv.parse_text(Path(path).read_text())
    try:
        mean = [float(v) for v in vals["mean"].split(",")]
        std = [float(v) for v in vals["std"].split(",")]
    except (KeyError, ValueError) as e:
        raise CliError(f"{path}: bad stats file ({e})") from None
    return ChannelStats(np.array(mean), np.array(std))


def write_stats_file(stats: ChannelStats, path) -> None:
    fmt = lambda a: ", ".join(repr(float(v)) for v in a)
    Path(path).write_text(f"mean = {fmt(stats.mean)}\nstd = {fmt(stats.std)}\n")


def _overrides(pairs: list[str]) -> dict[str, str]:
    out = {}
    for item in pairs:
        if "=" not in item:
            raise CliError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def _load_config(default, args):
    """File values, then --set overrides, then --seed."""
    cfg = default
    if args.config:
        cfg = kv.loads(cfg, Path(args.config).read_text())
    cfg = kv.apply(cfg, _overrides(args.set))
    if args.seed is not None:
        cfg = kv.apply(cfg, {"seed": str(args.seed)})
    return cfg


def _window(args) -> WindowConfig:
    return WindowConfig(args.window, args.overlap)


# -- subcommands ---------------------------------------------------------------


def cmd_prepare(args) -> int:
    if args.what == "synth":
        base = _load_config(SynthConfig(), args)
        ds = synthetic_dataset(args.count, base, first_seed=base.seed)
        write_dataset(args.path, ds)
        print(f"wrote {sum(len(v) for v in ds.values())} sequences to {args.path}")
    elif args.what == "manifest":
        print(build_manifest(args.path, args.frame_period))
    else:  # stats
        seqs = load_split(args.path, args.split)
        if not seqs:
            raise CliError(f"no sequences in {args.path}/{args.split}")
        size = tuple(args.size) if args.size else seqs[0].frames[0].image.shape[:2]
        stats = dataset_stats([resize_sequence(s, size) for s in seqs])
        out = args.out or Path(args.path) / "stats.txt"
        write_stats_file(stats, out)
        print(f"mean {stats.mean.tolist()} std {stats.std.tolist()} -> {out}")
    return 0


def cmd_train(args) -> int:
    cfg = _load_config(TrainConfig(), args)
    if args.data:
        cfg = kv.apply(cfg, {"data_root": args.data})
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    resume = load_checkpoint(args.resume) if args.resume else None
    (out / "config.txt").write_text(kv.dumps(cfg))
    result = train(cfg, resume=resume, history_path=out / "history.csv")
    save_checkpoint(result.best, out / "best.ckpt")
    save_checkpoint(result.last, out / "last.ckpt")
    h = result.history[-1] if result.history else None
    if h is not None:
        print(f"epoch {h.epoch} train {h.train_loss:.6f} val {h.val_loss:.6f}; best {result.best.best_loss:.6f}")
    return 0


def cmd_eval(args) -> int:
    est = load_pose_file(args.est)
    gt = load_pose_file(args.gt)
    lengths = args.lengths or list(DEFAULT_LENGTHS)
    limit = None if args.no_truncate else args.limit
    rep = build_report(est, gt, lengths, limit, trajectory_id=args.id or Path(args.est).stem)
    if args.csv:
        Path(args.csv).write_text(rep.to_csv())
    sys.stdout.write(rep.to_text())
    return 0


def cmd_infer(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    stats = read_stats_file(args.stats) if args.stats else ckpt.stats
    seq = load_sequence(args.seq)
    frames = seq.frames
    if args.corrupt:
        frames = corrupt_frames(frames, seed=args.seed or 0)
    images = prepare_frames(frames, stats, ckpt.config.model.image_size)
    traj = infer_trajectory(None, ckpt.params, images, _window(args), frame_period=seq.trajectory.frame_period)
    save_pose_file(traj, args.out)
    print(f"wrote {len(traj)} poses to {args.out}")
    return 0


def cmd_serve(args) -> int:
    from attnvo.app.serve import engine_from_checkpoint, serve, serve_tcp

    stats = read_stats_file(args.stats) if args.stats else None
    engine = engine_from_checkpoint(args.checkpoint, _window(args), stats)
    if args.listen:
        host, _, port = args.listen.rpartition(":")
        serve_tcp(host or "127.0.0.1", int(port), engine, sys.stderr, pipelined=not args.single_threaded)
    else:
        serve(sys.stdin.buffer, sys.stdout.buffer, engine, sys.stderr, args.report_every, not args.single_threaded)
    return 0


# -- parser --------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="override the config seed")
    common.add_argument("--config", default=None, help="key = value config file")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="config override")
    common.add_argument("-v", "--verbose", action="store_true")

    windowed = argparse.ArgumentParser(add_help=False)
    windowed.add_argument("--checkpoint", required=True)
    windowed.add_argument("--window", type=int, default=30)
    windowed.add_argument("--overlap", type=int, default=15)
    windowed.add_argument("--stats", default=None, help="channel stats file overriding the checkpoint's")

    p = argparse.ArgumentParser(prog="attnvo", description="Attention-based monocular visual odometry toolkit.")
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("prepare", parents=[common], help="generate synthetic data, manifests or channel stats")
    sp.add_argument("what", choices=["synth", "manifest", "stats"])
    sp.add_argument("path", help="dataset root (synth, stats) or sequence directory (manifest)")
    sp.add_argument("--count", type=int, default=20, help="synthetic sequences to generate")
    sp.add_argument("--frame-period", type=float, default=0.1)
    sp.add_argument("--split", default="train")
    sp.add_argument("--size", type=int, nargs=2, metavar=("H", "W"))
    sp.add_argument("--out", default=None)
    sp.set_defaults(func=cmd_prepare)

    sp = sub.add_parser("train", parents=[common], help="train a model")
    sp.add_argument("--data", default=None, help="dataset root (overrides data_root)")
    sp.add_argument("--out", required=True, help="output directory")
    sp.add_argument("--resume", default=None, help="checkpoint to resume from")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("eval", parents=[common], help="KITTI errors and ATE for a pose file")
    sp.add_argument("--est", required=True)
    sp.add_argument("--gt", required=True)
    sp.add_argument("--csv", default=None, help="write the report CSV here")
    sp.add_argument("--id", default=None)
    sp.add_argument("--lengths", type=float, nargs="+")
    sp.add_argument("--limit", type=float, default=1000.0)
    sp.add_argument("--no-truncate", action="store_true")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("infer", parents=[common, windowed], help="predict a pose file for a sequence")
    sp.add_argument("--seq", required=True, help="sequence directory with a manifest")
    sp.add_argument("--out", required=True)
    sp.add_argument("--corrupt", action="store_true", help="apply augmentation-style corruption (seeded by --seed)")
    sp.set_defaults(func=cmd_infer)

    sp = sub.add_parser("serve", parents=[common, windowed], help="stream frames in, poses out")
    sp.add_argument("--listen", default=None, metavar="HOST:PORT", help="TCP instead of stdin/stdout")
    sp.add_argument("--single-threaded", action="store_true")
    sp.add_argument("--report-every", type=int, default=100)
    sp.set_defaults(func=cmd_serve)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr)
    try:
        return args.func(args)
    except (CliError, ValueError, OSError, RuntimeError, KeyError) as e:
        msg = str(e).splitlines()[0] if str(e) else type(e).__name__
        print(f"attnvo {args.command}: error: {msg}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
