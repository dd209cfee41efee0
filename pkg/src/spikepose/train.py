"""Surrogate-gradient training, evaluation, checkpoints and run manifests."""

from __future__ import annotations

import hashlib
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import RunConfig
from .data import (
    Dataset,
    DatasetError,
    Window,
    augmented_windows,
    build_sample,
    sample_windows,
    stack_batch,
)
from .model import SpikePoseModel
from .numerics import Tape, clip_grad_norm, cosine_lr, make_optimizer, read_checkpoint, write_checkpoint
from .numerics.tensor import NumericError
from .pose.kinematics import fk
from .pose.loss import loss_total
from .pose.metrics import metrics

log = logging.getLogger(__name__)

BEST_CHECKPOINT = "best.snnc"
LAST_GOOD_CHECKPOINT = "last_good.snnc"
MANIFEST = "manifest.json"
METRIC_KEYS = ("mpjpe", "pel_mpjpe", "pa_mpjpe")
MM = 1000.0  # metres -> millimetres


class NumericFailure(NumericError):
    """Training diverged (non-finite loss or gradient)."""

    def __init__(self, message: str, epoch: int, step: int, checkpoint: str | None):
        super().__init__(message)
        self.epoch = epoch
        self.step = step
        self.checkpoint = checkpoint


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def build_model(cfg: RunConfig) -> SpikePoseModel:
    return SpikePoseModel(cfg.model_config(), seed=cfg.run.seed)


def load_model(cfg: RunConfig, checkpoint) -> SpikePoseModel:
    """Model for ``cfg`` with weights from ``checkpoint``; mismatched tensors raise ``IncompatibleStateError``."""
    model = build_model(cfg)
    model.load_state_dict(read_checkpoint(checkpoint))
    return model.eval()


def _batches(items: list, size: int):
    for i in range(0, len(items), size):
        yield items[i : i + size]


def _check_compatible(cfg: RunConfig, dataset: Dataset) -> None:
    J = cfg.model_config().n_joints
    if dataset.model.n_joints != J:
        raise DatasetError(f"dataset skeleton has {dataset.model.n_joints} joints, model predicts {J}")
    if dataset.model.n_shape != cfg.data.n_shape:
        raise DatasetError(f"dataset skeleton has {dataset.model.n_shape} shape coefficients, config {cfg.data.n_shape}")
    if cfg.data.H > dataset.height or cfg.data.W > dataset.width:
        raise DatasetError(f"voxel grid {cfg.data.H}x{cfg.data.W} exceeds the {dataset.height}x{dataset.width} sensor")


# ---------------------------------------------------------------------------
# evaluation


def eval_windows(cfg: RunConfig, dataset: Dataset, split: str = "eval") -> list[Window]:
    """Non-overlapping windows of ``split``; falls back to the training split when it is empty."""
    if split == "eval" and not dataset.indices("eval"):
        split = "train"
    return sample_windows(dataset, cfg.data.T, cfg.data.frames_per_packet, split=split)


def predict_joints(model: SpikePoseModel, dataset: Dataset, grids: np.ndarray) -> np.ndarray:
    """Joints ``(T, B, J, 3)`` in metres for time-first voxels ``(T, B, H, W, C)``."""
    out = model(grids)
    return fk(dataset.model, out["theta"].data, out["beta"].data, out["d"].data).data


def evaluate(
    model: SpikePoseModel,
    cfg: RunConfig,
    dataset: Dataset,
    windows: list[Window],
    inject_gt: bool = False,
) -> dict:
    """Aggregate and per-time-step MPJPE / PEL-MPJPE / PA-MPJPE in millimetres.

    With ``inject_gt`` the ground truth stands in for the prediction, which
    must give exactly zero everywhere.
    """
    if not windows:
        raise DatasetError("no evaluation windows; the sequences are shorter than one sample")
    model.eval()
    spec = cfg.sample_spec()
    preds, gts = [], []
    for chunk in _batches(windows, cfg.train.batch):
        grids, gt = stack_batch([build_sample(dataset, w, spec) for w in chunk])
        gt_joints = fk(dataset.model, gt["theta"], gt["beta"], gt["d"]).data
        preds.append(gt_joints.copy() if inject_gt else predict_joints(model, dataset, grids))
        gts.append(gt_joints)
    pred = np.concatenate(preds, axis=1)  # (T, n_windows, J, 3)
    gt = np.concatenate(gts, axis=1)
    T, n = pred.shape[:2]
    J = pred.shape[2]
    overall = metrics(pred.reshape(T * n, J, 3), gt.reshape(T * n, J, 3), unit_scale=MM)
    per_t = []
    for t in range(T):
        r = metrics(pred[t], gt[t], unit_scale=MM)
        per_t.append({"t": t, "mpjpe": r.mpjpe, "pel_mpjpe": r.pel_mpjpe, "pa_mpjpe": r.pa_mpjpe})
    return {
        "mpjpe": overall.mpjpe,
        "pel_mpjpe": overall.pel_mpjpe,
        "pa_mpjpe": overall.pa_mpjpe,
        "per_t": per_t,
        "windows": n,
        "degenerate_steps": overall.degenerate_steps,
    }


def early_error(report: dict, fraction: float = 0.25, key: str = "mpjpe") -> float:
    """Mean ``key`` over the first ``fraction`` of time steps (at least one)."""
    steps = report["per_t"]
    k = max(1, int(round(len(steps) * fraction)))
    return float(np.mean([s[key] for s in steps[:k]]))


# ---------------------------------------------------------------------------
# training


@dataclass
class TrainResult:
    manifest: dict
    model: SpikePoseModel
    out_dir: Path | None
    history: list = field(default_factory=list)


def _finite_grads(model) -> bool:
    return all(np.all(np.isfinite(p.grad)) for p in model.parameters())


def train(cfg: RunConfig, dataset: Dataset, out_dir=None, log_every: int = 0) -> TrainResult:
    """Train on the dataset's training split, keep the best checkpoint by eval MPJPE.

    Writes ``best.snnc`` and ``manifest.json`` into ``out_dir`` when given.  A
    non-finite loss or gradient stops training with :class:`NumericFailure`
    after saving the last good weights.
    """
    _check_compatible(cfg, dataset)
    tc, dc = cfg.train, cfg.data
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    model = build_model(cfg)
    rng = np.random.default_rng([cfg.run.seed, 1])
    opt = make_optimizer(tc.optimizer, model.parameters(), tc.lr)
    weights = cfg.loss_weights()
    spec = cfg.sample_spec()
    held_out = eval_windows(cfg, dataset, "eval")
    if not sample_windows(dataset, dc.T, dc.frames_per_packet, dc.train_stride, "train"):
        raise DatasetError("training sequences are shorter than one sample")

    best_state, best_score, best_epoch = model.state_dict(), np.inf, -1
    last_good = model.state_dict()
    history = []
    started = time.perf_counter()
    for epoch in range(tc.epochs):
        if tc.augment:
            windows = augmented_windows(
                dataset, dc.T, dc.frames_per_packet, dc.train_stride, rng, tc.window_scales, tc.rotation_deg
            )
        else:
            windows = sample_windows(dataset, dc.T, dc.frames_per_packet, dc.train_stride, "train")
        order = rng.permutation(len(windows))
        windows = [windows[i] for i in order]
        n_batches = -(-len(windows) // tc.batch)
        model.train()
        losses, norms, parts = [], [], {}
        for b, chunk in enumerate(_batches(windows, tc.batch)):
            progress = epoch + b / n_batches
            lr = cosine_lr(tc.lr, progress, tc.epochs) if tc.schedule == "cosine" else tc.lr
            grids, gt = stack_batch([build_sample(dataset, w, spec) for w in chunk])
            opt.zero_grad()
            with Tape() as tape:
                pred = model(grids)
                loss, comps = loss_total(pred, gt, dataset.model, weights, image_width=dataset.width)
            value = float(loss.data)
            if not np.isfinite(value):
                raise _diverged(model, last_good, out, epoch, b, f"loss is {value}")
            tape.backward(loss)
            if not _finite_grads(model):
                raise _diverged(model, last_good, out, epoch, b, "non-finite gradient")
            norms.append(clip_grad_norm(model.parameters(), tc.grad_clip))
            opt.step(lr)
            losses.append(value)
            for k, v in comps.items():
                parts.setdefault(k, []).append(float(v))
        last_good = model.state_dict()
        entry = {
            "epoch": epoch,
            "lr": lr,
            "loss": float(np.mean(losses)),
            "grad_norm_median": float(np.median(norms)),
            "components": {k: float(np.mean(v)) for k, v in parts.items()},
        }
        if (epoch + 1) % tc.eval_every == 0 or epoch == tc.epochs - 1:
            report = evaluate(model, cfg, dataset, held_out)
            entry["eval"] = {k: report[k] for k in METRIC_KEYS}
            if report["mpjpe"] < best_score:
                best_score, best_epoch, best_state = report["mpjpe"], epoch, model.state_dict()
        history.append(entry)
        if log_every and (epoch % log_every == 0 or epoch == tc.epochs - 1):
            log.info("epoch %d loss %.4f eval %s", epoch, entry["loss"], entry.get("eval"))

    # final numbers always come from the weights as stored on disk
    if out is not None:
        ckpt = out / BEST_CHECKPOINT
        write_checkpoint(ckpt, best_state)
        model = load_model(cfg, ckpt)
    else:
        model.load_state_dict(best_state)
        model.eval()
    final_eval = evaluate(model, cfg, dataset, held_out)
    final_train = evaluate(model, cfg, dataset, eval_windows(cfg, dataset, "train"))
    manifest = {
        "config": cfg.to_dict(),
        "seed": cfg.run.seed,
        "dataset": str(cfg.run.dataset),
        "checkpoint": BEST_CHECKPOINT if out is not None else None,
        "checkpoint_sha256": sha256_file(out / BEST_CHECKPOINT) if out is not None else None,
        "best_epoch": best_epoch,
        "loss_weights": list(weights.as_tuple()),
        "parameters": model.num_parameters(),
        "history": history,
        "final": {"eval": final_eval, "train": final_train},
        "seconds": time.perf_counter() - started,
    }
    if out is not None:
        (out / MANIFEST).write_text(json.dumps(manifest, indent=2))
    return TrainResult(manifest, model, out, history)


def _diverged(model, last_good: dict, out: Path | None, epoch: int, step: int, why: str) -> NumericFailure:
    path = None
    if out is not None:
        path = out / LAST_GOOD_CHECKPOINT
        write_checkpoint(path, last_good)
    model.load_state_dict(last_good)
    msg = f"training diverged at epoch {epoch}, batch {step}: {why}"
    if path is not None:
        msg += f"; last good weights saved to {path}"
    return NumericFailure(msg, epoch, step, str(path) if path else None)


def load_manifest(path) -> tuple[dict, RunConfig, Path]:
    """Manifest dict, its configuration and the checkpoint path it names."""
    path = Path(path)
    manifest = json.loads(path.read_text())
    cfg = RunConfig.from_dict(manifest["config"])
    return manifest, cfg, path.parent / manifest["checkpoint"]
