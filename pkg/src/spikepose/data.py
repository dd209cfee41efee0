"""Toy datasets on disk and the voxel/pose samples cut from them.

A dataset directory holds ``dataset.json`` (scene settings, skeleton and the
sequence list) plus one ``seq_XXXX.evs`` event file and one
``seq_XXXX_gt.json`` ground-truth file per sequence.

A sample starting at frame ``s0`` with ``P`` frames per packet covers the
events caused by frames ``s0 + 1 .. s0 + T P``; packet ``t`` holds frames
``s0 + t P + 1 .. s0 + (t + 1) P`` and is labelled with the pose at frame
``s0 + (t + 1) P``, the end of its window.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .events import EventFormatError, EventStream, ToyConfig, generate_toy_sequence, read_events, synthesize_events, voxelize
from .events.io import dumps as dump_events
from .pose.kinematics import KinematicModel, PoseParams, rodrigues, rotation_to_axis_angle

DATASET_FILE = "dataset.json"
FORMAT_VERSION = 1


class DatasetError(ValueError):
    """Missing or inconsistent dataset files."""


@dataclass
class Sequence:
    events: EventStream
    poses: PoseParams
    frame_period_us: int

    @property
    def n_frames(self) -> int:
        return len(self.poses)


@dataclass
class Dataset:
    model: KinematicModel
    sequences: list
    meta: dict = field(default_factory=dict)
    splits: list = field(default_factory=list)

    def indices(self, split: str) -> list[int]:
        """Sequence indices of ``split`` ("train" or "eval")."""
        splits = self.splits or ["train"] * len(self.sequences)
        return [i for i, s in enumerate(splits) if s == split]

    @property
    def width(self) -> int:
        return self.sequences[0].events.width

    @property
    def height(self) -> int:
        return self.sequences[0].events.height


def _seq_names(i: int) -> tuple[str, str]:
    return f"seq_{i:04d}.evs", f"seq_{i:04d}_gt.json"


def gt_document(poses: PoseParams, model: KinematicModel, frame_period_us: int) -> dict:
    return {"frame_period_us": int(frame_period_us), "model": model.to_dict(), "poses": poses.to_json_list()}


def scene_configs(toy: ToyConfig, n_sequences: int, seed: int, random_phase: bool = True) -> list[ToyConfig]:
    """One scene per sequence; with ``random_phase`` each draws its own motion phases from ``seed``."""
    rng = np.random.default_rng(seed)
    scenes = []
    for _ in range(n_sequences):
        kw = asdict(toy)
        if random_phase:
            kw["phase"] = tuple(float(p) for p in np.asarray(toy.phase) + rng.uniform(0.0, 2.0 * np.pi, toy.n_active))
        scenes.append(ToyConfig(**kw))
    return scenes


def synthesize_dataset(
    out_dir,
    toy: ToyConfig,
    n_sequences: int = 1,
    seed: int = 0,
    contrast_threshold: float = 0.5,
    random_phase: bool = True,
    n_eval_sequences: int = 0,
) -> Dataset:
    """Render, convert to events and write toy sequences to ``out_dir``.

    The first ``n_sequences`` form the training split, the following
    ``n_eval_sequences`` the evaluation split.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    model = toy.model()
    sequences = []
    entries = []
    splits = ["train"] * n_sequences + ["eval"] * n_eval_sequences
    for i, scene in enumerate(scene_configs(toy, len(splits), seed, random_phase)):
        frames, poses = generate_toy_sequence(scene)
        events = synthesize_events(frames, contrast_threshold)
        ev_name, gt_name = _seq_names(i)
        (out / ev_name).write_bytes(dump_events(events))
        (out / gt_name).write_text(json.dumps(gt_document(poses, model, scene.frame_period_us)))
        sequences.append(Sequence(events, poses, scene.frame_period_us))
        entries.append({"events": ev_name, "ground_truth": gt_name, "split": splits[i], "phase": list(scene.phase)})
    meta = {
        "version": FORMAT_VERSION,
        "seed": int(seed),
        "contrast_threshold": float(contrast_threshold),
        "scene": asdict(toy),
        "model": model.to_dict(),
        "sequences": entries,
    }
    (out / DATASET_FILE).write_text(json.dumps(meta, indent=2))
    return Dataset(model, sequences, meta, splits)


def load_dataset(path) -> Dataset:
    root = Path(path)
    index = root / DATASET_FILE
    if not index.is_file():
        raise DatasetError(f"{index} not found")
    try:
        meta = json.loads(index.read_text())
        model = KinematicModel.from_dict(meta["model"])
        sequences = []
        splits = [entry.get("split", "train") for entry in meta["sequences"]]
        for entry in meta["sequences"]:
            events = read_events(root / entry["events"])
            gt = json.loads((root / entry["ground_truth"]).read_text())
            poses = PoseParams.from_json_list(gt["poses"])
            sequences.append(Sequence(events, poses, int(gt["frame_period_us"])))
    except (KeyError, TypeError, json.JSONDecodeError, OSError) as exc:
        raise DatasetError(f"malformed dataset at {root}: {exc}") from exc
    if not sequences:
        raise DatasetError(f"dataset at {root} lists no sequences")
    for s in sequences:
        if s.poses.theta.shape[1] != model.n_joints:
            raise DatasetError("ground truth joint count differs from the skeleton")
    return Dataset(model, sequences, meta, splits)


# ---------------------------------------------------------------------------
# samples


@dataclass(frozen=True)
class SampleSpec:
    T: int = 8
    H: int = 64
    W: int = 64
    C: int = 4
    threshold: int = 0
    polarity: bool = False
    frames_per_packet: int = 2


@dataclass(frozen=True)
class Window:
    seq: int
    start: int
    frames_per_packet: int
    angle: float = 0.0


def sample_windows(
    dataset: Dataset, T: int, frames_per_packet: int, stride: int | None = None, split: str | None = None
) -> list[Window]:
    """All windows of ``T`` packets in ``split`` (default: every sequence); ``stride`` defaults to non-overlapping."""
    span = T * frames_per_packet
    stride = stride or span
    chosen = range(len(dataset.sequences)) if split is None else dataset.indices(split)
    out = []
    for i in chosen:
        s = dataset.sequences[i]
        for start in range(0, s.n_frames - span, stride):  # last frame index start + span < n_frames
            out.append(Window(i, start, frames_per_packet))
    return out


def rotate_grid(grid: np.ndarray, angle: float, sensor_hw: tuple | None = None) -> np.ndarray:
    """Rotate ``(..., H, W, C)`` voxels by ``angle`` radians about the principal point.

    Works in sensor pixel coordinates (pixel ``j`` centred at ``u = j``,
    principal point at ``(width / 2, height / 2)``) so that it agrees with
    rotating the figure about the optical axis by the same angle.
    Nearest-neighbour sampling keeps the grid binary; voxels rotated in from
    outside the frame are empty.
    """
    if angle == 0.0:
        return grid.copy()
    H, W = grid.shape[-3], grid.shape[-2]
    height, width = sensor_hw if sensor_hw is not None else (H, W)
    # destination voxel centres in sensor coordinates
    v, u = np.meshgrid((np.arange(H) + 0.5) * height / H - 0.5, (np.arange(W) + 0.5) * width / W - 0.5, indexing="ij")
    cx, cy = width / 2.0, height / 2.0
    c, s = np.cos(angle), np.sin(angle)
    su = c * (u - cx) + s * (v - cy) + cx
    sv = -s * (u - cx) + c * (v - cy) + cy
    px, py = np.floor(su + 0.5).astype(np.int64), np.floor(sv + 0.5).astype(np.int64)
    valid = (px >= 0) & (px < width) & (py >= 0) & (py < height)
    ix, iy = px * W // width, py * H // height
    out = np.zeros_like(grid)
    out[..., valid, :] = grid[..., iy[valid], ix[valid], :]
    return out


def rotate_pose(poses: PoseParams, model: KinematicModel, angle: float) -> PoseParams:
    """Rotate the whole figure about the optical axis through the camera centre."""
    if angle == 0.0:
        return poses
    c, s = np.cos(angle), np.sin(angle)
    Rz = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    theta = poses.theta.copy()
    root_R = rodrigues(theta[:, 0])
    theta[:, 0] = np.stack([rotation_to_axis_angle(Rz @ R) for R in root_R])
    # the root joint sits at d + offset_0, which must rotate as a point
    o0 = model.offsets[0] + np.einsum("tb,bk->tk", poses.beta, model.shape_basis[:, 0])
    d = (poses.d + o0) @ Rz.T - o0
    return PoseParams(theta, poses.beta.copy(), d, poses.t.copy())


def build_sample(dataset: Dataset, window: Window, spec: SampleSpec) -> tuple[np.ndarray, PoseParams]:
    """Voxels ``(T, H, W, C)`` and the ``T`` end-of-packet poses for ``window``."""
    seq = dataset.sequences[window.seq]
    P = window.frames_per_packet
    last = window.start + spec.T * P
    if window.start < 0 or last > seq.n_frames - 1:
        raise DatasetError(f"window {window} runs past the {seq.n_frames}-frame sequence")
    t0 = int(seq.poses.t[window.start])
    vox = voxelize(
        seq.events,
        spec.T,
        spec.H,
        spec.W,
        spec.C,
        threshold=spec.threshold,
        window=P * seq.frame_period_us,
        origin=t0 + 1,
        polarity=spec.polarity,
    )
    grid = vox.grid
    poses = seq.poses.take(window.start + P * np.arange(1, spec.T + 1))
    if window.angle:
        grid = rotate_grid(grid, window.angle, (seq.events.height, seq.events.width))
        poses = rotate_pose(poses, dataset.model, window.angle)
    return grid, poses


def stack_batch(samples: list) -> tuple[np.ndarray, dict]:
    """Time-first voxels ``(T, B, H, W, C)`` and ground truth ``(T, B, ...)``."""
    grids = np.stack([g for g, _ in samples], axis=1).astype(np.float32)
    gt = {
        "theta": np.stack([p.theta for _, p in samples], axis=1),
        "beta": np.stack([p.beta for _, p in samples], axis=1),
        "d": np.stack([p.d for _, p in samples], axis=1),
    }
    return grids, gt


def augmented_windows(
    dataset: Dataset,
    T: int,
    frames_per_packet: int,
    stride: int,
    rng: np.random.Generator,
    scales=(1.0,),
    max_angle_deg: float = 0.0,
    split: str | None = "train",
) -> list[Window]:
    """Training windows with a random packet length and rotation each.

    Each base window draws a packet-length scale from ``scales`` (dropping
    those whose span would not fit) and an angle uniformly in
    ``[-max_angle_deg, max_angle_deg]``.
    """
    out = []
    for w in sample_windows(dataset, T, frames_per_packet, stride, split):
        n = dataset.sequences[w.seq].n_frames
        options = [max(1, int(round(sc * frames_per_packet))) for sc in scales]
        options = [p for p in options if w.start + T * p < n] or [frames_per_packet]
        P = options[int(rng.integers(len(options)))]
        angle = float(np.deg2rad(rng.uniform(-max_angle_deg, max_angle_deg))) if max_angle_deg > 0 else 0.0
        out.append(Window(w.seq, w.start, P, angle))
    return out


def check_dataset_path(path) -> None:
    if not os.path.isdir(path):
        raise DatasetError(f"dataset directory {path} does not exist")


__all__ = [
    "DATASET_FILE",
    "Dataset",
    "DatasetError",
    "EventFormatError",
    "SampleSpec",
    "Sequence",
    "Window",
    "augmented_windows",
    "build_sample",
    "check_dataset_path",
    "gt_document",
    "load_dataset",
    "rotate_grid",
    "rotate_pose",
    "sample_windows",
    "scene_configs",
    "stack_batch",
    "synthesize_dataset",
]
