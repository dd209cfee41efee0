"""Rendered articulated-chain scenes with exact ground-truth poses."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..numerics import PreconditionError
from ..pose.kinematics import KinematicModel, PoseParams, chain_model, desk_model, fk, project
from .types import FrameSequence

SKELETONS = ("chain", "desk")


class RenderError(RuntimeError):
    def __init__(self, frame: int, message: str):
        super().__init__(f"frame {frame}: {message}")
        self.frame = frame


@dataclass
class ToyConfig:
    """An articulated figure moving in the image plane.

    ``skeleton`` is a serial chain of ``n_links`` equal links or the five-joint
    desk figure.  Every joint with children rotates about the optical axis by
    ``base + amplitude * sin(2 pi freq (t - delay) + phase)`` (per-joint
    values); before ``delay = start_delay * duration`` the figure holds its
    initial pose.
    """

    skeleton: str = "chain"
    n_links: int = 1
    link_length: float = 0.6
    width: int = 64
    height: int = 64
    fps: float = 30.0
    duration: float = 4.0
    start_delay: float = 0.0
    depth: float = 3.0
    root_xy: tuple | None = None
    base: tuple = (0.0,)
    amplitude: tuple = (0.8,)
    frequency: tuple = (0.5,)
    phase: tuple = (0.0,)
    n_shape: int = 4
    line_width: float = 1.0

    def __post_init__(self):
        if self.skeleton not in SKELETONS:
            raise PreconditionError(f"unknown skeleton {self.skeleton!r}")
        if self.n_links < 1:
            raise PreconditionError("need at least one link")
        if self.root_xy is None:
            # hang chains from above the centre, stand the desk figure below it
            self.root_xy = (0.0, -0.2) if self.skeleton == "chain" else (0.0, 0.2)
        self.root_xy = tuple(float(v) for v in self.root_xy)
        if self.duration <= 0 or self.fps <= 0:
            raise PreconditionError("duration and fps must be positive")
        if not 0.0 <= self.start_delay < 1.0:
            raise PreconditionError("start_delay is a fraction of the duration in [0, 1)")
        for name in ("base", "amplitude", "frequency", "phase"):
            values = tuple(float(v) for v in np.broadcast_to(np.asarray(getattr(self, name), float), (self.n_active,)))
            setattr(self, name, values)
        if self.fps < 2.0 * max(abs(f) for f in self.frequency):
            raise PreconditionError(f"fps {self.fps} is below twice the motion bandwidth {max(self.frequency)} Hz")

    @property
    def n_frames(self) -> int:
        return int(round(self.duration * self.fps))

    @property
    def frame_period_us(self) -> int:
        """Frames are exactly this many microseconds apart."""
        return int(round(1e6 / self.fps))

    def timestamps(self) -> np.ndarray:
        return np.arange(self.n_frames, dtype=np.int64) * self.frame_period_us

    @property
    def n_joints(self) -> int:
        return self.n_links + 1 if self.skeleton == "chain" else 5

    @property
    def active_joints(self) -> list[int]:
        """Joints with children, the only ones whose rotation moves anything."""
        return list(range(self.n_links)) if self.skeleton == "chain" else [0, 1]

    @property
    def n_active(self) -> int:
        return len(self.active_joints)

    def model(self) -> KinematicModel:
        if self.skeleton == "chain":
            return chain_model(self.n_links, self.link_length, self.n_shape, self.width, self.height)
        return desk_model(self.link_length, self.n_shape, self.width, self.height)

    def angles(self, t: np.ndarray) -> np.ndarray:
        """Joint angles ``(len(t), n_links)`` at times ``t`` in seconds."""
        t = np.asarray(t, dtype=np.float64)
        delay = self.start_delay * self.duration
        tau = np.maximum(t - delay, 0.0)[:, None]
        base, amp, freq, phase = (np.asarray(v) for v in (self.base, self.amplitude, self.frequency, self.phase))
        return base + amp * np.sin(2.0 * np.pi * freq * tau + phase)


def _segment_distance(px: np.ndarray, py: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    ab = b - a
    denom = float(ab @ ab)
    if denom == 0.0:
        return np.hypot(px - a[0], py - a[1])
    s = np.clip(((px - a[0]) * ab[0] + (py - a[1]) * ab[1]) / denom, 0.0, 1.0)
    return np.hypot(px - (a[0] + s * ab[0]), py - (a[1] + s * ab[1]))


def render_chain(joints2d: np.ndarray, links, width: int, height: int, line_width: float = 1.0) -> np.ndarray:
    """White anti-aliased segments on black; pixel ``(i, j)`` is centred at ``u=j, v=i``."""
    py, px = np.mgrid[0:height, 0:width].astype(np.float64)
    img = np.zeros((height, width))
    half = line_width / 2.0
    for p, c in links:
        d = _segment_distance(px, py, joints2d[p], joints2d[c])
        # full intensity inside the stroke, linear falloff over one pixel
        np.maximum(img, np.clip(half + 1.0 - d, 0.0, 1.0), out=img)
    return img


def pose_sequence(cfg: ToyConfig, stamps_us: np.ndarray) -> PoseParams:
    stamps = np.asarray(stamps_us, dtype=np.int64)
    ang = cfg.angles(stamps / 1e6)
    n = len(stamps)
    theta = np.zeros((n, cfg.n_joints, 3))
    theta[:, cfg.active_joints, 2] = ang
    beta = np.zeros((n, cfg.n_shape))
    d = np.tile([cfg.root_xy[0], cfg.root_xy[1], cfg.depth], (n, 1))
    return PoseParams(theta, beta, d, stamps)


def generate_toy_sequence(cfg: ToyConfig) -> tuple[FrameSequence, PoseParams]:
    """Render ``cfg.n_frames`` frames and return them with the per-frame poses."""
    n = cfg.n_frames
    if n < 1:
        raise PreconditionError("duration * fps gives no frames")
    pose = pose_sequence(cfg, cfg.timestamps())
    model = cfg.model()
    joints = fk(model, pose.theta, pose.beta, pose.d).data
    frames = np.empty((n, cfg.height, cfg.width))
    for i in range(n):
        if np.any(joints[i, :, 2] <= 0):
            raise RenderError(i, "chain behind the camera")
        uv = project(joints[i], model.intrinsics)
        if np.any(uv < 0) or np.any(uv[:, 0] > cfg.width - 1) or np.any(uv[:, 1] > cfg.height - 1):
            raise RenderError(i, "chain leaves the frame")
        frames[i] = render_chain(uv, model.links, cfg.width, cfg.height, cfg.line_width)
    return FrameSequence(frames, pose.t), pose
