from __future__ import annotations

import numpy as np


def _check(pred, gt):
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    if pred.shape != gt.shape or pred.ndim != 3 or pred.shape[-1] != 6:
        raise ValueError(f"loss expects matching (B, T, 6) arrays, got {pred.shape} and {gt.shape}")
    return pred, gt


def per_segment_loss(pred, gt, rotation_weight: float = 100.0) -> np.ndarray:
    """Weighted squared error summed over timesteps, one value per segment."""
    pred, gt = _check(pred, gt)
    d = (pred - gt).astype(np.float64)
    rot = (d[..., :3] ** 2).sum(axis=(1, 2))
    trans = (d[..., 3:] ** 2).sum(axis=(1, 2))
    return rotation_weight * rot + trans


def loss_mse(pred, gt, rotation_weight: float = 100.0) -> float:
    """Batch loss: per-segment sum over timesteps of ``k*|dphi|^2 + |dt|^2``, averaged over segments."""
    return float(per_segment_loss(pred, gt, rotation_weight).mean())


def loss_mse_grad(pred, gt, rotation_weight: float = 100.0) -> np.ndarray:
    pred, gt = _check(pred, gt)
    d = pred - gt
    w = np.ones(6, dtype=pred.dtype)
    w[:3] = rotation_weight
    return (2.0 / pred.shape[0]) * d * w
