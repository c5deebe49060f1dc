"""Trajectory error metrics: KITTI per-length drift and absolute trajectory error."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from attnvo.geometry import GeometryError, Trajectory, align_rigid, rotation_angle

DEFAULT_LENGTHS = (100.0, 200.0, 300.0, 400.0, 500.0, 600.0, 700.0, 800.0)


def cumulative_distances(gt: Trajectory) -> np.ndarray:
    t = gt.translations()
    steps = np.linalg.norm(np.diff(t, axis=0), axis=1)
    return np.concatenate([[0.0], np.cumsum(steps)])


def _check_pair(est: Trajectory, gt: Trajectory):
    if len(est) != len(gt):
        raise GeometryError(f"trajectory lengths differ: {len(est)} vs {len(gt)}")


@dataclass
class LengthRow:
    length: float
    trans_pct: float
    rot_deg_per_100m: float
    count: int


def _rel(a: np.ndarray, b: np.ndarray):
    """Rotation and translation of a^-1 b for rigid 4x4 matrices."""
    Ra = a[:3, :3]
    return Ra.T @ b[:3, :3], Ra.T @ (b[:3, 3] - a[:3, 3])


def kitti_errors(
    est: Trajectory, gt: Trajectory, lengths: Sequence[float] = DEFAULT_LENGTHS, stride: int = 1
) -> list[LengthRow]:
    """Mean relative drift over every start frame for each path length.

    Rows are returned only for lengths with at least one (start, end) pair.
    """
    _check_pair(est, gt)
    dist = cumulative_distances(gt)
    P = gt.matrices()
    Q = est.matrices()
    rows = []
    n = len(gt)
    for d in lengths:
        r_sum = t_sum = 0.0
        count = 0
        # end frame: first j with dist[j] - dist[i] >= d
        ends = np.searchsorted(dist, dist + d - 1e-12 * max(1.0, d), side="left")
        for i in range(0, n, stride):
            j = ends[i]
            if j >= n:
                continue
            d_actual = dist[j] - dist[i]
            if d_actual <= 0:
                continue
            R_gt, t_gt = _rel(P[i], P[j])
            R_est, t_est = _rel(Q[i], Q[j])
            # E = rel_est^-1 rel_gt, written so identical inputs give exact zeros
            r_sum += rotation_angle(R_est.T @ R_gt) / d_actual
            t_sum += float(np.linalg.norm(R_est.T @ (t_gt - t_est))) / d_actual
            count += 1
        if count:
            rows.append(LengthRow(float(d), float(100.0 * t_sum / count), float(100.0 * math.degrees(r_sum / count)), count))
    return rows


def ate(est: Trajectory, gt: Trajectory) -> tuple[float, float]:
    """(translation RMSE in metres, rotation RMSE in degrees) after rigid alignment."""
    _check_pair(est, gt)
    aligned = align_rigid(est, gt)
    dt = aligned.translations() - gt.translations()
    trans = math.sqrt(float(np.mean(np.sum(dt**2, axis=1))))
    angles = np.array([rotation_angle(a.R @ g.R.T) for a, g in zip(aligned.poses, gt.poses)])
    rot = math.degrees(math.sqrt(float(np.mean(angles**2))))
    return trans, rot


def truncate_at(est: Trajectory, gt: Trajectory, limit: float = 1000.0) -> tuple[Trajectory, Trajectory]:
    """Cut both trajectories after the last frame whose ground-truth path length is <= ``limit``."""
    if limit <= 0:
        raise ValueError("limit must be positive")
    _check_pair(est, gt)
    dist = cumulative_distances(gt)
    keep = int(np.searchsorted(dist, limit, side="right"))
    if keep >= len(gt):
        return est, gt
    return est[:keep], gt[:keep]


@dataclass
class MetricsReport:
    trajectory_id: str
    rows: list[LengthRow] = field(default_factory=list)
    mean_trans_pct: float = float("nan")
    mean_rot_deg_per_100m: float = float("nan")
    ate_trans: float = float("nan")
    ate_rot_deg: float = float("nan")

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["trajectory", "length_m", "trans_err_pct", "rot_err_deg_per_100m", "pairs"])
        for r in self.rows:
            w.writerow([self.trajectory_id, repr(r.length), repr(r.trans_pct), repr(r.rot_deg_per_100m), r.count])
        w.writerow([self.trajectory_id, "mean", repr(self.mean_trans_pct), repr(self.mean_rot_deg_per_100m), sum(r.count for r in self.rows)])
        w.writerow([self.trajectory_id, "ate", repr(self.ate_trans), repr(self.ate_rot_deg), ""])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "MetricsReport":
        reader = csv.DictReader(io.StringIO(text))
        rep = None
        for row in reader:
            if rep is None:
                rep = cls(row["trajectory"])
            kind = row["length_m"]
            a, b = float(row["trans_err_pct"]), float(row["rot_err_deg_per_100m"])
            if kind == "mean":
                rep.mean_trans_pct, rep.mean_rot_deg_per_100m = a, b
            elif kind == "ate":
                rep.ate_trans, rep.ate_rot_deg = a, b
            else:
                rep.rows.append(LengthRow(float(kind), a, b, int(row["pairs"])))
        if rep is None:
            raise ValueError("empty report CSV")
        return rep

    def to_text(self) -> str:
        lines = [
            f"Trajectory: {self.trajectory_id}",
            f"{'Length (m)':>10}  {'t_err (%)':>10}  {'r_err (deg/100m)':>16}  {'pairs':>6}",
        ]
        for r in self.rows:
            lines.append(f"{r.length:>10.0f}  {r.trans_pct:>10.4f}  {r.rot_deg_per_100m:>16.4f}  {r.count:>6d}")
        lines.append(f"{'Mean':>10}  {self.mean_trans_pct:>10.4f}  {self.mean_rot_deg_per_100m:>16.4f}")
        lines.append(f"ATE translation: {self.ate_trans:.4f} m")
        lines.append(f"ATE rotation:    {self.ate_rot_deg:.4f} deg")
        return "\n".join(lines) + "\n"


def build_report(
    est: Trajectory,
    gt: Trajectory,
    lengths: Sequence[float] = DEFAULT_LENGTHS,
    limit: float | None = 1000.0,
    trajectory_id: str = "",
    stride: int = 1,
) -> MetricsReport:
    if limit is not None:
        est, gt = truncate_at(est, gt, limit)
    rows = kitti_errors(est, gt, lengths, stride)
    rep = MetricsReport(trajectory_id, rows)
    if rows:
        rep.mean_trans_pct = float(np.mean([r.trans_pct for r in rows]))
        rep.mean_rot_deg_per_100m = float(np.mean([r.rot_deg_per_100m for r in rows]))
    if len(gt) >= 3:
        rep.ate_trans, rep.ate_rot_deg = ate(est, gt)
    return rep
