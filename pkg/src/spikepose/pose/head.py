"""Pose regression head: spatial average pooling then three parallel linear maps."""

from __future__ import annotations

import numpy as np

from ..numerics import Module, Tensor, avg_pool2d
from ..numerics.layers import Linear


class RegressionHead(Module):
    def __init__(
        self,
        in_channels: int,
        n_joints: int,
        n_shape: int,
        translation_offset=(0.0, 0.0, 0.0),
        average_beta: bool = False,
        rng=None,
        dtype=np.float32,
    ):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.n_joints = n_joints
        self.n_shape = n_shape
        self.fc_theta = Linear(in_channels, n_joints * 3, rng=rng, dtype=dtype)
        self.fc_beta = Linear(in_channels, n_shape, rng=rng, dtype=dtype)
        self.fc_trans = Linear(in_channels, 3, rng=rng, dtype=dtype)
        self.translation_offset = np.asarray(translation_offset, dtype=dtype)
        self.average_beta = average_beta
        self.last_shape = None

    def __call__(self, features: Tensor) -> dict[str, Tensor]:
        """``features (T, B, H, W, C)`` -> ``theta (T, B, J, 3)``, ``beta (T, B, n_shape)``, ``d (T, B, 3)``."""
        self.last_shape = features.shape
        pooled = avg_pool2d(features)
        lead = pooled.shape[:-1]
        theta = self.fc_theta(pooled).reshape(*lead, self.n_joints, 3)
        beta = self.fc_beta(pooled)
        if self.average_beta and not self.training:
            steps = beta.shape[0]
            beta = beta.mean(axis=0, keepdims=True) + Tensor(np.zeros((steps,) + beta.shape[1:], beta.dtype))
        d = self.fc_trans(pooled) + self.translation_offset
        return {"theta": theta, "beta": beta, "d": d}


def regression_head(features: Tensor, head: RegressionHead) -> dict[str, Tensor]:
    return head(features)
