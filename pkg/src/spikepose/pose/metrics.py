"""MPJPE, pelvis-aligned MPJPE and rigidly aligned (Procrustes) MPJPE."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class MetricReport:
    mpjpe: float
    pel_mpjpe: float
    pa_mpjpe: float
    per_step: list = field(default_factory=list)
    degenerate_steps: int = 0

    def to_dict(self) -> dict:
        return {
            "mpjpe": self.mpjpe,
            "pel_mpjpe": self.pel_mpjpe,
            "pa_mpjpe": self.pa_mpjpe,
            "per_step": self.per_step,
        }


def rigid_align(pred: np.ndarray, gt: np.ndarray) -> tuple[np.ndarray, bool]:
    """Rotate and translate ``pred (J, 3)`` onto ``gt`` in the least-squares sense.

    No scaling is applied.  Returns ``(aligned, degenerate)``; a degenerate
    input (all joints coincident) is aligned by translation only.
    """
    if np.array_equal(pred, gt):
        # identity is optimal; SVD round-off would leave ~1e-16 residuals
        return gt.copy(), bool(np.linalg.norm(gt - gt.mean(axis=0)) < 1e-12)
    mu_p = pred.mean(axis=0)
    mu_g = gt.mean(axis=0)
    p0 = pred - mu_p
    g0 = gt - mu_g
    if np.linalg.norm(p0) < 1e-12 or np.linalg.norm(g0) < 1e-12:
        return p0 + mu_g, True
    H = p0.T @ g0
    U, _, Vt = np.linalg.svd(H)
    V = Vt.T
    sign = np.sign(np.linalg.det(V @ U.T)) or 1.0
    D = np.diag([1.0, 1.0, sign])
    R = V @ D @ U.T
    return p0 @ R.T + mu_g, False


def _joint_error(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.linalg.norm(a - b, axis=-1).mean())


def metrics(pred, gt, unit_scale: float = 1.0, pelvis: int = 0) -> MetricReport:
    """Compare joint sequences ``(T, J, 3)`` (or a single ``(J, 3)`` pose).

    ``unit_scale`` converts the input unit into the reported one (1000 for
    metres to millimetres).
    """
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ValueError(f"prediction {pred.shape} and ground truth {gt.shape} differ")
    if pred.ndim == 2:
        pred, gt = pred[None], gt[None]
    if pred.ndim != 3 or pred.shape[-1] != 3:
        raise ValueError("joints must be (T, J, 3)")
    per_step = []
    degenerate = 0
    for p, g in zip(pred, gt):
        e = _joint_error(p, g) * unit_scale
        pel = _joint_error(p - p[pelvis], g - g[pelvis]) * unit_scale
        aligned, flag = rigid_align(p, g)
        degenerate += flag
        pa = _joint_error(aligned, g) * unit_scale
        per_step.append({"mpjpe": e, "pel_mpjpe": pel, "pa_mpjpe": pa, "pa_degenerate": bool(flag)})
    mean = lambda key: float(np.mean([s[key] for s in per_step]))  # noqa: E731
    return MetricReport(mean("mpjpe"), mean("pel_mpjpe"), mean("pa_mpjpe"), per_step, degenerate)
