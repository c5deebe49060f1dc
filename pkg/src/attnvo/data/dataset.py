"""On-disk dataset layout: ``<root>/<split>/<trajectory_id>/{frames/, poses.txt, manifest.txt}``."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from attnvo.geometry import Trajectory
from attnvo.data.images import Frame, read_ppm, write_ppm
from attnvo.data.poses import load_pose_file, save_pose_file
from attnvo.data.synth import SynthConfig, synth_generate

SPLITS = ("train", "val", "test")
MANIFEST_HEADER = "# attnvo manifest v1"


class ManifestError(ValueError):
    pass


@dataclass
class Sequence:
    name: str
    trajectory: Trajectory
    frames: list[Frame]

    def __post_init__(self):
        if len(self.trajectory) != len(self.frames):
            raise ValueError(
                f"{self.name}: {len(self.trajectory)} poses but {len(self.frames)} frames"
            )


def write_manifest(seq_dir, frame_paths, timestamps, pose_file="poses.txt", frame_period=0.1):
    lines = [MANIFEST_HEADER, f"poses {pose_file}", f"frame_period {frame_period!r}"]
    lines += [f"frame {p} {t!r}" for p, t in zip(frame_paths, timestamps)]
    Path(seq_dir, "manifest.txt").write_text("\n".join(lines) + "\n")


def read_manifest(seq_dir) -> dict:
    path = Path(seq_dir, "manifest.txt")
    lines = path.read_text().splitlines()
    if not lines or lines[0].strip() != MANIFEST_HEADER:
        raise ManifestError(f"{path}: missing manifest header")
    out = {"poses": "poses.txt", "frame_period": 0.1, "frames": [], "timestamps": []}
    for lineno, line in enumerate(lines[1:], start=2):
        parts = line.split()
        if not parts or parts[0].startswith("#"):
            continue
        key = parts[0]
        if key == "poses" and len(parts) == 2:
            out["poses"] = parts[1]
        elif key == "frame_period" and len(parts) == 2:
            out["frame_period"] = float(parts[1])
        elif key == "frame" and len(parts) == 3:
            out["frames"].append(parts[1])
            out["timestamps"].append(float(parts[2]))
        else:
            raise ManifestError(f"{path}:{lineno}: cannot parse {line!r}")
    return out


def write_sequence(seq_dir, traj: Trajectory, frames: list[Frame]) -> Path:
    seq_dir = Path(seq_dir)
    (seq_dir / "frames").mkdir(parents=True, exist_ok=True)
    names = []
    for f in frames:
        name = f"frames/{f.index:06d}.ppm"
        write_ppm(seq_dir / name, f.image)
        names.append(name)
    save_pose_file(traj, seq_dir / "poses.txt")
    write_manifest(seq_dir, names, [f.timestamp for f in frames], frame_period=traj.frame_period)
    return seq_dir


def build_manifest(seq_dir, frame_period: float = 0.1) -> Path:
    """Write a manifest for an existing ``frames/`` directory plus ``poses.txt``."""
    seq_dir = Path(seq_dir)
    names = sorted(p.relative_to(seq_dir).as_posix() for p in (seq_dir / "frames").glob("*.ppm"))
    if not names:
        raise ManifestError(f"{seq_dir}: no .ppm frames")
    write_manifest(seq_dir, names, [i * frame_period for i in range(len(names))], frame_period=frame_period)
    return seq_dir / "manifest.txt"


def load_sequence(seq_dir, dtype=np.float32) -> Sequence:
    seq_dir = Path(seq_dir)
    man = read_manifest(seq_dir)
    traj = load_pose_file(seq_dir / man["poses"], man["frame_period"])
    frames = [
        Frame(i, read_ppm(seq_dir / p, dtype), t)
        for i, (p, t) in enumerate(zip(man["frames"], man["timestamps"]))
    ]
    return Sequence(seq_dir.name, traj, frames)


def load_split(root, split: str, dtype=np.float32) -> list[Sequence]:
    split_dir = Path(root) / split
    if not split_dir.is_dir():
        return []
    return [load_sequence(d, dtype) for d in sorted(split_dir.iterdir()) if (d / "manifest.txt").exists()]


def synthetic_sequences(n: int, base: SynthConfig, first_seed: int = 0) -> list[Sequence]:
    out = []
    for k in range(n):
        cfg = dataclasses.replace(base, seed=first_seed + k)
        traj, frames = synth_generate(cfg)
        out.append(Sequence(f"synth_{cfg.seed:04d}", traj, frames))
    return out


def split_counts(n: int, fractions=(0.7, 0.15, 0.15)) -> tuple[int, int, int]:
    n_val = max(1, int(round(n * fractions[1]))) if n >= 3 else 0
    n_test = max(1, int(round(n * fractions[2]))) if n >= 3 else 0
    return n - n_val - n_test, n_val, n_test


def synthetic_dataset(n: int, base: SynthConfig, first_seed: int = 0) -> dict[str, list[Sequence]]:
    seqs = synthetic_sequences(n, base, first_seed)
    n_train, n_val, _ = split_counts(n)
    return {
        "train": seqs[:n_train],
        "val": seqs[n_train : n_train + n_val],
        "test": seqs[n_train + n_val :],
    }


def write_dataset(root, dataset: dict[str, list[Sequence]]) -> None:
    for split, seqs in dataset.items():
        for seq in seqs:
            write_sequence(Path(root) / split / seq.name, seq.trajectory, seq.frames)


def load_dataset(root, dtype=np.float32) -> dict[str, list[Sequence]]:
    return {split: load_split(root, split, dtype) for split in SPLITS}
