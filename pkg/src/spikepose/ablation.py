"""Variant sweeps over score function, voxel channels and attention depth."""

from __future__ import annotations

import csv
import io
import time

from .attention import SCORE_KINDS
from .config import RunConfig
from .data import Dataset
from .train import early_error, train

AXES = {
    "score_fn": ("model", "score_fn", SCORE_KINDS),
    "channels": ("data", "C", (1, 2, 4, 6, 8)),
    "layers": ("model", "layers", (0, 1, 2, 4, 6)),
}
ABLATION_COLUMNS = ("axis", "value", "seed", "mpjpe", "pel_mpjpe", "pa_mpjpe", "early_mpjpe", "train_mpjpe", "seconds")


def axis_values(axis: str) -> tuple:
    if axis not in AXES:
        raise ValueError(f"unknown ablation axis {axis!r}; expected one of {sorted(AXES)}")
    return AXES[axis][2]


def variant(cfg: RunConfig, axis: str, value, seed: int) -> RunConfig:
    section, key, _ = AXES[axis]
    cfg = cfg.with_updates(**{section: {key: value}})
    return cfg.with_updates(run={"seed": seed})


def run_ablation(cfg: RunConfig, dataset: Dataset, axis: str, seeds=(0,), values=None, progress=None) -> list[dict]:
    """Train and evaluate every ``(value, seed)`` pair with identical budgets."""
    values = axis_values(axis) if values is None else tuple(values)
    rows = []
    for value in values:
        for seed in seeds:
            started = time.perf_counter()
            result = train(variant(cfg, axis, value, seed), dataset)
            final = result.manifest["final"]
            row = {
                "axis": axis,
                "value": value,
                "seed": seed,
                "mpjpe": final["eval"]["mpjpe"],
                "pel_mpjpe": final["eval"]["pel_mpjpe"],
                "pa_mpjpe": final["eval"]["pa_mpjpe"],
                "early_mpjpe": early_error(final["eval"]),
                "train_mpjpe": final["train"]["mpjpe"],
                "seconds": time.perf_counter() - started,
            }
            rows.append(row)
            if progress is not None:
                progress(row)
    return rows


def rows_to_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=ABLATION_COLUMNS, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow(row)
    return buf.getvalue()
