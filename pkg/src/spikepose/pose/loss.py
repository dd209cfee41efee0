"""Weighted pose/shape/translation/3-D/2-D training loss."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..numerics import Tensor
from ..numerics.tensor import as_tensor
from .kinematics import KinematicModel, fk, project, rodrigues

# keeps projected depths positive while predictions are still far off
MIN_LOSS_DEPTH = 0.05


@dataclass(frozen=True)
class LossWeights:
    pose: float = 10.0
    shape: float = 1.0
    trans: float = 50.0
    joints3d: float = 1.0
    joints2d: float = 10.0

    def as_tuple(self) -> tuple:
        return (self.pose, self.shape, self.trans, self.joints3d, self.joints2d)


def _mean_sq_norm(diff: Tensor, axis) -> Tensor:
    """Mean over the remaining axes of the squared norm over ``axis``."""
    return (diff * diff).sum(axis=axis).mean()


def loss_total(
    pred: dict,
    gt: dict,
    model: KinematicModel,
    weights: LossWeights = LossWeights(),
    image_width: float | None = None,
) -> tuple[Tensor, dict[str, float]]:
    """Return the weighted total and the unweighted components.

    ``pred`` and ``gt`` map ``theta (..., J, 3)``, ``beta (..., B)`` and
    ``d (..., 3)``; ``gt`` entries may be plain arrays.  2-D joint errors are
    measured in image widths.
    """
    p = {k: as_tensor(pred[k]) for k in ("theta", "beta", "d")}
    dtype = p["theta"].dtype
    g = {k: np.asarray(gt[k].data if isinstance(gt[k], Tensor) else gt[k], dtype=dtype) for k in ("theta", "beta", "d")}
    for k in ("theta", "beta", "d"):
        if p[k].shape != g[k].shape:
            raise ValueError(f"{k}: prediction {p[k].shape} and ground truth {g[k].shape} are not aligned")
    width = float(image_width if image_width is not None else 2.0 * model.intrinsics.cx)

    rp = rodrigues(p["theta"])
    rg = rodrigues(g["theta"].astype(np.float64)).astype(dtype)
    l_pose = _mean_sq_norm(rp - rg, axis=(-2, -1))
    l_shape = _mean_sq_norm(p["beta"] - g["beta"], axis=-1)
    l_trans = _mean_sq_norm(p["d"] - g["d"], axis=-1)

    jp = fk(model, p["theta"], p["beta"], p["d"])
    jg = fk(model, g["theta"].astype(np.float64), g["beta"].astype(np.float64), g["d"].astype(np.float64)).data.astype(dtype)
    l_3d = _mean_sq_norm(jp - jg, axis=-1)

    up = project(jp, model.intrinsics, min_depth=MIN_LOSS_DEPTH)
    ug = project(Tensor(jg), model.intrinsics, min_depth=MIN_LOSS_DEPTH).data
    l_2d = _mean_sq_norm((up - ug) * (1.0 / width), axis=-1)

    w = weights
    total = l_pose * w.pose + l_shape * w.shape + l_trans * w.trans + l_3d * w.joints3d + l_2d * w.joints2d
    components = {
        "pose": float(l_pose.data),
        "shape": float(l_shape.data),
        "trans": float(l_trans.data),
        "joints3d": float(l_3d.data),
        "joints2d": float(l_2d.data),
    }
    return total, components
