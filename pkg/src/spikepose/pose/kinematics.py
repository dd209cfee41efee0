"""Axis-angle rotations, a toy articulated skeleton and pinhole projection."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..errors import ConfigurationError
from ..numerics import Tensor, clip_min, linear, matmul, stack
from ..numerics.tensor import as_tensor, make_result


class BehindCameraError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Rodrigues

# below this squared angle the sinc-like coefficients use their Taylor series
_SMALL_SQ = 1e-6

# skew(v) = v @ _SKEW reshaped to 3x3
_SKEW = np.zeros((3, 9))
_SKEW[2, 1], _SKEW[1, 2] = -1.0, 1.0  # row 0: (0, -z, y)
_SKEW[2, 3], _SKEW[0, 5] = 1.0, -1.0  # row 1: (z, 0, -x)
_SKEW[1, 6], _SKEW[0, 7] = -1.0, 1.0  # row 2: (-y, x, 0)


def _coef_a(s: np.ndarray):
    """sin(r)/r and its derivative w.r.t. s = r^2."""
    small = s < _SMALL_SQ
    r = np.sqrt(np.where(small, 1.0, s))
    val = np.where(small, 1.0 - s / 6.0 + s * s / 120.0, np.sin(r) / r)
    der = np.where(small, -1.0 / 6.0 + s / 60.0, (r * np.cos(r) - np.sin(r)) / (2.0 * r**3))
    return val, der


def _coef_b(s: np.ndarray):
    """(1 - cos r)/r^2 and its derivative w.r.t. s = r^2."""
    small = s < _SMALL_SQ
    r = np.sqrt(np.where(small, 1.0, s))
    val = np.where(small, 0.5 - s / 24.0 + s * s / 720.0, (1.0 - np.cos(r)) / r**2)
    der = np.where(small, -1.0 / 24.0 + s / 360.0, (r * np.sin(r) - 2.0 * (1.0 - np.cos(r))) / (2.0 * r**4))
    return val, der


def _coef(s: Tensor, fn) -> Tensor:
    val, der = fn(s.data)
    return make_result(val.astype(s.dtype), (s,), lambda g: (g * der,))


def _rodrigues_tensor(aa: Tensor) -> Tensor:
    lead = aa.shape[:-1]
    s = (aa * aa).sum(axis=-1)
    a = _coef(s, _coef_a).reshape(*lead, 1, 1)
    b = _coef(s, _coef_b).reshape(*lead, 1, 1)
    k = linear(aa, Tensor(_SKEW.astype(aa.dtype))).reshape(*lead, 3, 3)
    eye = np.eye(3, dtype=aa.dtype)
    return a * k + b * matmul(k, k) + eye


def rodrigues(aa):
    """Rotation matrices ``(..., 3, 3)`` from axis-angle vectors ``(..., 3)``.

    Accepts a :class:`Tensor` (differentiable) or an array (returns an array).
    """
    if isinstance(aa, Tensor):
        return _rodrigues_tensor(aa)
    arr = np.asarray(aa, dtype=np.float64)
    return _rodrigues_tensor(Tensor(arr)).data


def rotation_to_axis_angle(R: np.ndarray) -> np.ndarray:
    """Inverse of :func:`rodrigues` for a single rotation matrix."""
    R = np.asarray(R, dtype=np.float64)
    cos = np.clip((np.trace(R) - 1.0) / 2.0, -1.0, 1.0)
    angle = np.arccos(cos)
    if angle < 1e-8:
        return np.zeros(3)
    if np.pi - angle < 1e-6:
        # near a half turn use the symmetric part
        M = (R + np.eye(3)) / 2.0
        axis = np.sqrt(np.clip(np.diag(M), 0.0, None))
        i = int(np.argmax(axis))
        axis = M[:, i] / np.sqrt(M[i, i])
        return axis * angle
    w = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    return w / (2.0 * np.sin(angle)) * angle


# ---------------------------------------------------------------------------
# skeleton


@dataclass(frozen=True)
class Intrinsics:
    fx: float
    fy: float
    cx: float
    cy: float

    @classmethod
    def default(cls, width: int, height: int) -> "Intrinsics":
        return cls(2.0 * width, 2.0 * width, width / 2.0, height / 2.0)


@dataclass
class KinematicModel:
    """Joint tree with rest bone offsets and a linear shape basis.

    ``parents[0]`` is ``-1`` (the root); every other parent precedes its child.
    ``offsets[j]`` is the rest vector from ``parents[j]`` to joint ``j`` in the
    parent's frame; ``shape_basis[b, j]`` is added to it scaled by ``beta[b]``.
    """

    parents: tuple
    offsets: np.ndarray
    shape_basis: np.ndarray
    intrinsics: Intrinsics
    names: tuple = ()

    def __post_init__(self):
        self.parents = tuple(int(p) for p in self.parents)
        self.offsets = np.asarray(self.offsets, dtype=np.float64)
        self.shape_basis = np.asarray(self.shape_basis, dtype=np.float64)
        j = len(self.parents)
        if j == 0 or self.parents[0] != -1:
            raise ConfigurationError("joint 0 must be the root (parent -1)")
        for i, p in enumerate(self.parents[1:], start=1):
            if not 0 <= p < i:
                raise ConfigurationError(f"joint {i} has parent {p}; parents must precede children")
        if self.offsets.shape != (j, 3):
            raise ConfigurationError(f"offsets must be ({j}, 3), got {self.offsets.shape}")
        if self.shape_basis.ndim != 3 or self.shape_basis.shape[1:] != (j, 3):
            raise ConfigurationError(f"shape basis must be (B, {j}, 3), got {self.shape_basis.shape}")

    @property
    def n_joints(self) -> int:
        return len(self.parents)

    @property
    def n_shape(self) -> int:
        return self.shape_basis.shape[0]

    @property
    def links(self) -> list[tuple[int, int]]:
        return [(p, j) for j, p in enumerate(self.parents) if p >= 0]

    def limb_length(self) -> float:
        """Total rest length of all bones."""
        return float(np.linalg.norm(self.offsets[1:], axis=1).sum())

    def to_dict(self) -> dict:
        return {
            "parents": list(self.parents),
            "offsets": self.offsets.tolist(),
            "shape_basis": self.shape_basis.tolist(),
            "intrinsics": [self.intrinsics.fx, self.intrinsics.fy, self.intrinsics.cx, self.intrinsics.cy],
            "names": list(self.names),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "KinematicModel":
        return cls(
            tuple(d["parents"]),
            np.array(d["offsets"]),
            np.array(d["shape_basis"]).reshape(-1, len(d["parents"]), 3),
            Intrinsics(*d["intrinsics"]),
            tuple(d.get("names", ())),
        )


def _shape_basis(offsets: np.ndarray, n_shape: int, scale: float = 0.1) -> np.ndarray:
    """Coefficient ``b`` lengthens every ``b``-th bone (cyclically) by ``scale``."""
    j = len(offsets)
    basis = np.zeros((n_shape, j, 3))
    for bone in range(1, j):
        basis[(bone - 1) % n_shape, bone] = scale * offsets[bone] if n_shape else 0.0
    return basis


def chain_model(n_links: int = 1, length: float = 0.3, n_shape: int = 4, width: int = 64, height: int = 64) -> KinematicModel:
    """Serial chain hanging along +y (image down) from the root."""
    if n_links < 1:
        raise ConfigurationError("a chain needs at least one link")
    parents = (-1,) + tuple(range(n_links))
    offsets = np.zeros((n_links + 1, 3))
    offsets[1:, 1] = length
    names = ("root",) + tuple(f"link{i}" for i in range(1, n_links + 1))
    return KinematicModel(parents, offsets, _shape_basis(offsets, n_shape), Intrinsics.default(width, height), names)


def desk_model(length: float = 0.3, n_shape: int = 4, width: int = 64, height: int = 64) -> KinematicModel:
    """Five joints: root, spine, head and two arms attached at the spine."""
    parents = (-1, 0, 1, 1, 1)
    offsets = np.array(
        [
            [0.0, 0.0, 0.0],
            [0.0, -length, 0.0],
            [0.0, -length, 0.0],
            [-length, 0.0, 0.0],
            [length, 0.0, 0.0],
        ]
    )
    names = ("root", "spine", "head", "left_arm", "right_arm")
    return KinematicModel(parents, offsets, _shape_basis(offsets, n_shape), Intrinsics.default(width, height), names)


# ---------------------------------------------------------------------------
# pose parameters


@dataclass
class PoseParams:
    """Per-step axis-angle joints ``theta (T, J, 3)``, shape ``beta (T, B)``, translation ``d (T, 3)``."""

    theta: np.ndarray
    beta: np.ndarray
    d: np.ndarray
    t: np.ndarray = field(default=None)

    def __post_init__(self):
        self.theta = np.asarray(self.theta, dtype=np.float64)
        self.beta = np.asarray(self.beta, dtype=np.float64)
        self.d = np.asarray(self.d, dtype=np.float64)
        n = self.theta.shape[0]
        if self.t is None:
            self.t = np.arange(n, dtype=np.int64)
        self.t = np.asarray(self.t, dtype=np.int64)
        if self.theta.ndim != 3 or self.theta.shape[2] != 3:
            raise ValueError(f"theta must be (T, J, 3), got {self.theta.shape}")
        if self.beta.shape[0] != n or self.d.shape != (n, 3) or self.t.shape != (n,):
            raise ValueError("theta, beta, d and t must share the time extent")
        if not np.all(np.isfinite(self.theta)):
            raise ValueError("theta must be finite")

    def __len__(self) -> int:
        return self.theta.shape[0]

    def take(self, index) -> "PoseParams":
        return PoseParams(self.theta[index], self.beta[index], self.d[index], self.t[index])

    def to_json_list(self) -> list[dict]:
        return [
            {
                "t": int(self.t[i]),
                "theta": self.theta[i].reshape(-1).tolist(),
                "beta": self.beta[i].tolist(),
                "d": self.d[i].tolist(),
            }
            for i in range(len(self))
        ]

    @classmethod
    def from_json_list(cls, entries: Sequence[dict]) -> "PoseParams":
        theta = np.array([e["theta"] for e in entries], dtype=np.float64).reshape(len(entries), -1, 3)
        beta = np.array([e["beta"] for e in entries], dtype=np.float64).reshape(len(entries), -1)
        d = np.array([e["d"] for e in entries], dtype=np.float64).reshape(len(entries), 3)
        t = np.array([e["t"] for e in entries], dtype=np.int64)
        return cls(theta, beta, d, t)

    def dumps(self) -> str:
        return json.dumps(self.to_json_list())

    @classmethod
    def loads(cls, text: str) -> "PoseParams":
        return cls.from_json_list(json.loads(text))


# ---------------------------------------------------------------------------
# forward kinematics and projection


def fk(model: KinematicModel, theta, beta, d) -> Tensor:
    """Joint positions ``(..., J, 3)`` from ``theta (..., J, 3)``, ``beta (..., B)``, ``d (..., 3)``."""
    theta, beta, d = as_tensor(theta), as_tensor(beta), as_tensor(d)
    J = model.n_joints
    if theta.shape[-2:] != (J, 3):
        raise ConfigurationError(f"theta has {theta.shape[-2]} joints, model has {J}")
    if beta.shape[-1] != model.n_shape:
        raise ConfigurationError(f"beta has {beta.shape[-1]} coefficients, model has {model.n_shape}")
    lead = theta.shape[:-2]
    dtype = theta.dtype
    R = rodrigues(theta)
    basis = Tensor(model.shape_basis.reshape(model.n_shape, J * 3).astype(dtype))
    rest = model.offsets.astype(dtype)
    if model.n_shape:
        offsets = linear(beta, basis).reshape(*lead, J, 3) + rest
    else:
        offsets = Tensor(np.broadcast_to(rest, (*lead, J, 3)).copy())
    rots = [None] * J
    pos = [None] * J
    rots[0] = R[..., 0, :, :]
    pos[0] = d + offsets[..., 0, :]
    for j in range(1, J):
        p = model.parents[j]
        rots[j] = matmul(rots[p], R[..., j, :, :])
        step = matmul(rots[p], offsets[..., j, :].reshape(*lead, 3, 1)).reshape(*lead, 3)
        pos[j] = pos[p] + step
    return stack(pos, axis=-2)


def forward_kinematics(model: KinematicModel, pose: PoseParams, t: int | None = None) -> np.ndarray:
    """3-D joints for step ``t`` (``(J, 3)``) or every step (``(T, J, 3)``)."""
    if pose.theta.shape[1] != model.n_joints:
        raise ConfigurationError(f"pose has {pose.theta.shape[1]} joints, model has {model.n_joints}")
    if t is None:
        return fk(model, pose.theta, pose.beta, pose.d).data
    return fk(model, pose.theta[t], pose.beta[t], pose.d[t]).data


def project(joints3d, K: Intrinsics, min_depth: float | None = None):
    """Pinhole projection ``u = fx x/z + cx``, ``v = fy y/z + cy``.

    With ``min_depth=None`` any ``z <= 0`` raises :class:`BehindCameraError`;
    otherwise depth is clamped to ``min_depth`` (used inside training losses).
    """
    if not isinstance(joints3d, Tensor):
        arr = np.asarray(joints3d, dtype=np.float64)
        return project(Tensor(arr), K, min_depth).data
    z = joints3d[..., 2:3]
    if min_depth is None:
        if np.any(z.data <= 0):
            raise BehindCameraError("point at or behind the camera plane")
    else:
        z = clip_min(z, min_depth)
    scale = np.array([K.fx, K.fy], dtype=joints3d.dtype)
    center = np.array([K.cx, K.cy], dtype=joints3d.dtype)
    return joints3d[..., 0:2] / z * scale + center
