"""Sparsity-aware operation counts for spiking models and their dense equivalents.

Counts are in multiply-accumulate units per sample.  A weighted layer fed by
spikes only does work for its non-zero inputs, so it costs
``rho * T * (MACs per position) * positions`` where ``rho`` is the measured
fraction of non-zero inputs; its dense counterpart costs the same with
``rho = 1``.  Accumulation-only work (batch norm, residual adds, pooling,
softmax) is charged one op per element in both columns.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .attention import SpikingSelfAttention, TransformerLayer
from .backbone import SEWBlock
from .neuron import SpikingLayer
from .numerics import Module, PreconditionError
from .numerics.layers import ActivityMeter, Conv2d, Linear
from .pose.head import RegressionHead

CSV_COLUMNS = ("layer", "kind", "T", "n_in", "n_out", "rho", "flops_snn", "flops_ann", "ratio")


@dataclass
class LayerStats:
    layer: str
    kind: str
    T: int
    n_in: int
    n_out: int
    rho: Fraction
    flops_snn: Fraction
    flops_ann: Fraction

    @property
    def ratio(self) -> float:
        return float(self.flops_snn / self.flops_ann) if self.flops_ann else 0.0

    def row(self) -> dict:
        return {
            "layer": self.layer,
            "kind": self.kind,
            "T": self.T,
            "n_in": self.n_in,
            "n_out": self.n_out,
            "rho": float(self.rho),
            "flops_snn": float(self.flops_snn),
            "flops_ann": float(self.flops_ann),
            "ratio": self.ratio,
        }


@dataclass
class CostReport:
    layers: list = field(default_factory=list)

    @property
    def total_snn(self) -> Fraction:
        return sum((s.flops_snn for s in self.layers), Fraction(0))

    @property
    def total_ann(self) -> Fraction:
        return sum((s.flops_ann for s in self.layers), Fraction(0))

    @property
    def ratio(self) -> float:
        return float(self.total_snn / self.total_ann) if self.total_ann else 0.0

    def by_name(self, name: str) -> LayerStats:
        for s in self.layers:
            if s.layer == name:
                return s
        raise KeyError(name)

    def totals_row(self) -> dict:
        return {
            "layer": "total",
            "kind": "total",
            "T": max((s.T for s in self.layers), default=0),
            "n_in": 0,
            "n_out": 0,
            "rho": "",
            "flops_snn": float(self.total_snn),
            "flops_ann": float(self.total_ann),
            "ratio": self.ratio,
        }


def _rho(meter: ActivityMeter) -> Fraction:
    return Fraction(meter.input_nonzero, meter.input_total) if meter.input_total else Fraction(0)


def _per_sample_positions(meter: ActivityMeter) -> int:
    return meter.positions // max(meter.batch, 1)


def _elements(shape, T: int) -> int:
    """Per-sample elements of a ``(T, B, ...)`` tensor with ``T`` substituted."""
    return T * int(np.prod(shape[2:]))


class _Counter:
    def __init__(self, T: int | None):
        self.T_override = T
        self.rows: list[LayerStats] = []

    def steps(self, recorded: int) -> int:
        return self.T_override if self.T_override is not None else recorded

    def weighted(self, name: str, op, spiking: bool) -> None:
        m = op.meter
        T = self.steps(m.last_steps)
        dense = Fraction(T * op.macs_per_position() * _per_sample_positions(m))
        rho = _rho(m)
        kind = ("spiking_" if spiking else "dense_") + ("conv" if isinstance(op, Conv2d) else "linear")
        n_in = op.in_features if isinstance(op, Linear) else op.in_channels
        n_out = op.out_features if isinstance(op, Linear) else op.out_channels
        self.rows.append(LayerStats(name, kind, T, n_in, n_out, rho, rho * dense if spiking else dense, dense))

    def elementwise(self, name: str, kind: str, elements: int, T: int, channels: int) -> None:
        n = Fraction(elements)
        self.rows.append(LayerStats(name, kind, T, channels, channels, Fraction(1), n, n))

    def spiking_layer(self, name: str, layer: SpikingLayer) -> None:
        self.weighted(f"{name}.op", layer.op, spiking=True)
        m = layer.op.meter
        T = self.steps(m.last_steps)
        c = layer.bn.channels
        self.elementwise(f"{name}.bn", "bn", T * _per_sample_positions(m) * c, T, c)

    def attention(self, name: str, layer: SpikingSelfAttention) -> None:
        _, _, H, W, C = layer.last_shape
        T = self.steps(layer.last_shape[0])
        cfg = layer.cfg
        n = T * H * W
        qm = layer.q.rate_meter
        rho_q = Fraction(qm.ones, qm.total) if qm.total else Fraction(0)
        # query/key scores: a binary query only touches the key bits where it is 1
        dense_scores = Fraction(n * n * cfg.c_k)
        score_snn = dense_scores if cfg.score_fn == "manhattan" else rho_q * dense_scores
        self.rows.append(LayerStats(f"{name}.scores", f"scores_{cfg.score_fn}", T, cfg.c_k, n, rho_q, score_snn, dense_scores))
        self.elementwise(f"{name}.softmax", "softmax", n * n * cfg.heads, T, n)
        weighted_sum = Fraction(n * n * cfg.c_v)
        self.rows.append(LayerStats(f"{name}.alpha_v", "dense_matmul", T, n, cfg.c_v, Fraction(1), weighted_sum, weighted_sum))
        self.elementwise(f"{name}.att_bn", "bn", n * cfg.c_v, T, cfg.c_v)
        self.elementwise(f"{name}.sew", "residual", n * C, T, C)


def count_flops(model: Module, T: int | None = None) -> CostReport:
    """Build a :class:`CostReport` from the activity recorded by earlier forward passes.

    ``T`` substitutes a different number of time steps while keeping the
    measured rates, which exposes how each count scales with ``T``.
    """
    spiking = [(n, m) for n, m in model.modules() if isinstance(m, SpikingLayer)]
    if not spiking and not any(isinstance(m, (Linear, Conv2d)) for _, m in model.modules()):
        raise PreconditionError("model has no weighted layers to profile")
    weighted = [m for _, m in model.modules() if isinstance(m, (Linear, Conv2d))]
    if not weighted or any(m.meter.calls == 0 for m in weighted):
        raise PreconditionError("run a forward pass before profiling; some layers recorded no activity")
    inner_ops = {id(layer.op) for _, layer in spiking}
    counter = _Counter(T)
    for name, m in model.modules():
        name = name or type(m).__name__
        if isinstance(m, SpikingLayer):
            counter.spiking_layer(name, m)
        elif isinstance(m, (Linear, Conv2d)) and id(m) not in inner_ops:
            counter.weighted(name, m, spiking=False)
        elif isinstance(m, SpikingSelfAttention) and m.last_shape is not None:
            counter.attention(name, m)
        elif isinstance(m, SEWBlock) and m.last_shape is not None:
            steps = counter.steps(m.last_shape[0])
            counter.elementwise(f"{name}.sew", "residual", _elements(m.last_shape, steps), steps, m.last_shape[-1])
        elif isinstance(m, TransformerLayer) and m.last_shape is not None:
            steps = counter.steps(m.last_shape[0])
            counter.elementwise(f"{name}.sew", "residual", _elements(m.last_shape, steps), steps, m.last_shape[-1])
        elif isinstance(m, RegressionHead) and m.last_shape is not None:
            steps = counter.steps(m.last_shape[0])
            counter.elementwise(f"{name}.pool", "pool", _elements(m.last_shape, steps), steps, m.last_shape[-1])
    return CostReport(counter.rows)


def emit_report(report: CostReport, fmt: str = "csv", path=None) -> str:
    """Serialize to CSV (stable column order, trailing totals row) or JSON; write to ``path`` if given."""
    if fmt == "csv":
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, lineterminator="\n")
        writer.writeheader()
        for s in report.layers:
            writer.writerow(s.row())
        writer.writerow(report.totals_row())
        text = buf.getvalue()
    elif fmt == "json":
        text = json.dumps(
            {
                "layers": [s.row() for s in report.layers],
                "total_snn": float(report.total_snn),
                "total_ann": float(report.total_ann),
                "ratio": report.ratio,
            },
            indent=2,
        )
    else:
        raise ValueError(f"unknown report format {fmt!r}")
    if path is not None:
        with open(path, "w", newline="") as fh:
            fh.write(text)
    return text
