"""Command line: ``spikepose [--config F] [--seed N] [--out P] <command> ...``.

Exit codes: 0 success, 2 configuration error, 3 data or file-format error,
4 numeric failure.  Results go to ``--out`` when given, otherwise to stdout
as JSON (CSV for tables).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .ablation import AXES, rows_to_csv, run_ablation
from .attention import JLVerifyConfig, temporal_attention_map, verify_jl
from .config import ConfigError, RunConfig
from .data import DatasetError, build_sample, load_dataset, stack_batch, synthesize_dataset
from .errors import ConfigurationError
from .events import EventError, RenderError, read_events, voxelize
from .numerics import CheckpointFormatError, IncompatibleStateError, NumericError, PreconditionError
from .profiler import count_flops, emit_report
from .train import build_model, eval_windows, evaluate, load_manifest, load_model, train

log = logging.getLogger("spikepose")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4


class UsageError(Exception):
    """Bad combination of command-line arguments."""


def _emit(text: str, out) -> None:
    if out is None:
        sys.stdout.write(text if text.endswith("\n") else text + "\n")
    else:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text)


def _json(obj) -> str:
    return json.dumps(obj, indent=2)


def _config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    if args.seed is not None:
        cfg = cfg.with_updates(run={"seed": args.seed})
    return cfg


def _dataset(cfg: RunConfig, override):
    path = override or cfg.run.dataset
    if not Path(path).is_dir():
        raise DatasetError(f"dataset directory {path} does not exist; run `spikepose synth` first")
    return load_dataset(path)


def _model_and_config(args):
    """Configuration and model from ``--manifest``, or ``--config`` plus ``--checkpoint``."""
    if getattr(args, "manifest", None):
        manifest, cfg, ckpt = load_manifest(args.manifest)
        if args.seed is not None:
            cfg = cfg.with_updates(run={"seed": args.seed})
        if getattr(args, "checkpoint", None):
            ckpt = args.checkpoint
        return cfg, load_model(cfg, ckpt)
    cfg = _config(args)
    if getattr(args, "checkpoint", None):
        return cfg, load_model(cfg, args.checkpoint)
    return cfg, None


# ---------------------------------------------------------------------------
# commands


def cmd_synth(args) -> int:
    cfg = _config(args)
    out = args.out or cfg.run.dataset
    n_train = args.sequences if args.sequences is not None else cfg.data.n_sequences
    n_eval = args.eval_sequences if args.eval_sequences is not None else cfg.data.n_eval_sequences
    ds = synthesize_dataset(
        out,
        cfg.toy_config(),
        n_sequences=n_train,
        seed=cfg.run.seed,
        contrast_threshold=cfg.data.contrast_threshold,
        random_phase=cfg.data.random_phase,
        n_eval_sequences=n_eval,
    )
    summary = {
        "dataset": str(out),
        "sequences": [
            {**entry, "events_count": len(s.events), "poses": len(s.poses)}
            for entry, s in zip(ds.meta["sequences"], ds.sequences)
        ],
    }
    sys.stdout.write(_json(summary) + "\n")
    return EXIT_OK


def cmd_voxelize(args) -> int:
    cfg = _config(args)
    d = cfg.data
    stream = read_events(args.events)
    vox = voxelize(
        stream,
        d.T,
        d.H,
        d.W,
        d.C,
        threshold=d.threshold if args.threshold is None else args.threshold,
        window=args.window,
        origin=args.origin,
        polarity=d.polarity,
    )
    if args.out:
        np.savez(args.out, grid=vox.grid, window=vox.window, origin=vox.origin)
    summary = {
        "shape": list(vox.grid.shape),
        "ones": int(vox.grid.sum()),
        "ones_per_step": vox.grid.reshape(vox.grid.shape[0], -1).sum(axis=1).tolist(),
        "window_us": vox.window,
        "origin_us": vox.origin,
    }
    sys.stdout.write(_json(summary) + "\n")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _config(args)
    out = args.out or cfg.run.out
    # the manifest snapshot records the paths actually used
    cfg = cfg.with_updates(run={"dataset": str(args.dataset or cfg.run.dataset), "out": str(out)})
    dataset = _dataset(cfg, None)
    result = train(cfg, dataset, out, log_every=args.log_every)
    summary = {
        "run": str(out),
        "best_epoch": result.manifest["best_epoch"],
        "checkpoint_sha256": result.manifest["checkpoint_sha256"],
        "final": {k: {m: v[m] for m in ("mpjpe", "pel_mpjpe", "pa_mpjpe")} for k, v in result.manifest["final"].items()},
    }
    sys.stdout.write(_json(summary) + "\n")
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg, model = _model_and_config(args)
    if model is None and not args.inject_gt:
        raise UsageError("eval needs --manifest or --checkpoint (or --inject-gt)")
    dataset = _dataset(cfg, args.dataset)
    model = model if model is not None else build_model(cfg)
    report = evaluate(model, cfg, dataset, eval_windows(cfg, dataset, args.split), inject_gt=args.inject_gt)
    _emit(_json(report), args.out)
    return EXIT_OK


def cmd_profile(args) -> int:
    cfg, model = _model_and_config(args)
    dataset = _dataset(cfg, args.dataset)
    model = (model if model is not None else build_model(cfg)).eval()
    windows = eval_windows(cfg, dataset, "eval")
    if not windows:
        raise DatasetError("no sample long enough to profile")
    grids, _ = stack_batch([build_sample(dataset, windows[min(args.sample, len(windows) - 1)], cfg.sample_spec())])
    model(grids)
    report = count_flops(model, T=args.T)
    _emit(emit_report(report, args.format), args.out)
    return EXIT_OK


def cmd_ablate(args) -> int:
    cfg = _config(args)
    path = Path(args.dataset or cfg.run.dataset)
    if not path.is_dir():
        log.info("synthesizing the toy dataset into %s", path)
        synthesize_dataset(
            path,
            cfg.toy_config(),
            cfg.data.n_sequences,
            cfg.run.seed,
            cfg.data.contrast_threshold,
            cfg.data.random_phase,
            cfg.data.n_eval_sequences,
        )
    dataset = load_dataset(path)
    seeds = [int(s) for s in args.seeds.split(",")] if args.seeds else [cfg.run.seed]
    values = None
    if args.values:
        kind = type(AXES[args.axis][2][0])
        values = [kind(v) for v in args.values.split(",")]
    rows = run_ablation(
        cfg, dataset, args.axis, seeds, values, progress=lambda r: log.info("%s=%s seed %s: %.1f mm", r["axis"], r["value"], r["seed"], r["mpjpe"])
    )
    _emit(rows_to_csv(rows), args.out)
    return EXIT_OK


def cmd_verify_jl(args) -> int:
    seed = args.seed if args.seed is not None else 0
    cfg = JLVerifyConfig(d_k=args.d_k, c_k=args.c_k, delta=args.delta, m=args.m, trials=args.trials)
    report = verify_jl(cfg, seed=seed)
    _emit(_json(report.to_dict()), args.out)
    return EXIT_OK


def cmd_export_attention(args) -> int:
    cfg, model = _model_and_config(args)
    dataset = _dataset(cfg, args.dataset)
    model = (model if model is not None else build_model(cfg)).eval()
    layers = model.transformer.layers
    if not layers:
        raise ConfigError("the model has no attention layers")
    model.set_keep_attention(True)
    windows = eval_windows(cfg, dataset, args.split)
    T = cfg.data.T
    sums = [np.zeros((T, T)) for _ in layers]
    for w in windows:
        grids, _ = stack_batch([build_sample(dataset, w, cfg.sample_spec())])
        model(grids)
        for i, layer in enumerate(layers):
            sums[i] += temporal_attention_map(layer.attn.last_attention, T)
    maps = [(s / len(windows)).tolist() for s in sums]
    doc = {"T": T, "windows": len(windows), "layers": [{"layer": i, "temporal": m} for i, m in enumerate(maps)]}
    _emit(_json(doc), args.out)
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def _global_flags(parser: argparse.ArgumentParser, suppress: bool) -> None:
    default = argparse.SUPPRESS if suppress else None
    parser.add_argument("--config", default=default, help="INI configuration file")
    parser.add_argument("--seed", type=int, default=default, help="override the configured seed")
    parser.add_argument("--out", default=default, help="output file or directory (stdout when omitted)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="spikepose", description="Spiking pose tracking from event streams.")
    _global_flags(parser, suppress=False)
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn, help_text):
        p = sub.add_parser(name, help=help_text)
        _global_flags(p, suppress=True)
        p.set_defaults(fn=fn)
        return p

    p = add("synth", cmd_synth, "render toy sequences and write events plus ground truth")
    p.add_argument("--sequences", type=int, help="training sequences (default: config)")
    p.add_argument("--eval-sequences", type=int, help="evaluation sequences (default: config)")

    p = add("voxelize", cmd_voxelize, "turn an event file into a binary voxel grid")
    p.add_argument("events", help="EVS1 event file")
    p.add_argument("--threshold", type=int)
    p.add_argument("--window", type=int, help="packet length in microseconds")
    p.add_argument("--origin", type=int, help="start time in microseconds")

    p = add("train", cmd_train, "train a model; writes best.snnc and manifest.json")
    p.add_argument("--dataset")
    p.add_argument("--log-every", type=int, default=0)

    for name, fn, text in (
        ("eval", cmd_eval, "evaluate a checkpoint"),
        ("profile", cmd_profile, "count sparse and dense operations"),
        ("export-attention", cmd_export_attention, "average temporal attention maps"),
    ):
        p = add(name, fn, text)
        p.add_argument("--manifest", help="run manifest (config and checkpoint)")
        p.add_argument("--checkpoint", help="SNNC checkpoint")
        p.add_argument("--dataset")
        if name == "eval":
            p.add_argument("--split", choices=("eval", "train"), default="eval")
            p.add_argument("--inject-gt", action="store_true", help="use ground truth as prediction")
        elif name == "profile":
            p.add_argument("--format", choices=("csv", "json"), default="csv")
            p.add_argument("--T", type=int, help="report counts for a different number of time steps")
            p.add_argument("--sample", type=int, default=0)
        else:
            p.add_argument("--split", choices=("eval", "train"), default="eval")

    p = add("ablate", cmd_ablate, "compare model variants on the toy task")
    p.add_argument("--axis", choices=sorted(AXES), required=True)
    p.add_argument("--seeds", help="comma-separated seeds (default: config seed)")
    p.add_argument("--values", help="comma-separated subset of the axis values")
    p.add_argument("--dataset")

    p = add("verify-jl", cmd_verify_jl, "Monte Carlo check of the Hamming/cosine sandwich bound")
    p.add_argument("--d-k", type=int, default=64)
    p.add_argument("--c-k", type=int, default=4096)
    p.add_argument("--delta", type=float, default=0.1)
    p.add_argument("--m", type=int, help="candidate count M in the premise (default: trials)")
    p.add_argument("--trials", type=int, default=1000)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.fn(args)
    except (ConfigError, ConfigurationError, IncompatibleStateError, UsageError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DatasetError, EventError, CheckpointFormatError, RenderError, PreconditionError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
