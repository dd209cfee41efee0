"""Spike-element-wise residual blocks and a small SEW-ResNet backbone."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError
from .neuron import LIFConfig, SpikingLayer, check_spike_like, spike_rate
from .numerics import Module, Tensor
from .numerics.tensor import as_tensor, make_result

SEW_KINDS = ("ADD", "AND", "IAND")


def sew_combine(a, s, kind: str = "ADD") -> Tensor:
    """Combine the residual branch ``a`` with the identity branch ``s``.

    ADD gives ``a + s``, AND gives ``a * s`` and IAND gives ``(1 - a) * s``.
    """
    a, s = as_tensor(a), as_tensor(s)
    if a.shape != s.shape:
        raise ValueError(f"SEW operands differ in shape: {a.shape} vs {s.shape}")
    check_spike_like(a, "residual branch")
    check_spike_like(s, "identity branch")
    x, y = a.data, s.data
    kind = kind.upper()
    if kind == "ADD":
        return make_result(x + y, (a, s), lambda g: (g, g))
    if kind == "AND":
        return make_result(x * y, (a, s), lambda g: (g * y, g * x), binary=a.binary and s.binary)
    if kind == "IAND":
        return make_result((1 - x) * y, (a, s), lambda g: (-g * y, g * (1 - x)), binary=a.binary and s.binary)
    raise ValueError(f"unknown SEW kind {kind!r}; expected one of {SEW_KINDS}")


@dataclass(frozen=True)
class SEWBlockConfig:
    in_channels: int
    out_channels: int
    stride: int = 1
    sew_kind: str = "ADD"

    def __post_init__(self):
        if self.stride not in (1, 2):
            raise ConfigurationError(f"block stride must be 1 or 2, got {self.stride}")
        if self.sew_kind.upper() not in SEW_KINDS:
            raise ConfigurationError(f"unknown SEW kind {self.sew_kind!r}")


class SEWBlock(Module):
    """conv-BN-spike twice, then SEW with the identity (or 1x1 downsample) path."""

    def __init__(self, cfg: SEWBlockConfig, lif: LIFConfig = LIFConfig(), rng=None, dtype=np.float32):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.cfg = cfg
        self.conv1 = SpikingLayer(cfg.in_channels, cfg.out_channels, "conv", 3, cfg.stride, lif=lif, rng=rng, dtype=dtype)
        self.conv2 = SpikingLayer(cfg.out_channels, cfg.out_channels, "conv", 3, 1, lif=lif, rng=rng, dtype=dtype)
        if cfg.stride != 1 or cfg.in_channels != cfg.out_channels:
            self.downsample = SpikingLayer(cfg.in_channels, cfg.out_channels, "conv", 1, cfg.stride, lif=lif, rng=rng, dtype=dtype)
        else:
            self.downsample = None
        self.last_shape = None

    def spiking_layers(self) -> list[SpikingLayer]:
        return [m for m in (self.conv1, self.conv2, self.downsample) if m is not None]

    def __call__(self, x: Tensor) -> Tensor:
        a = self.conv2(self.conv1(x))
        s = self.downsample(x) if self.downsample is not None else x
        self.last_shape = a.shape
        return sew_combine(a, s, self.cfg.sew_kind)


def sew_block(S_in: Tensor, block: SEWBlock) -> Tensor:
    return block(S_in)


@dataclass(frozen=True)
class BackboneConfig:
    """Stem conv followed by stages of SEW blocks; ``strides`` apply to each stage's first block."""

    in_channels: int = 1
    stem_width: int = 16
    stem_stride: int = 2
    widths: tuple = (16, 32, 64, 128)
    blocks: tuple = (1, 1, 1, 1)
    strides: tuple = (1, 2, 2, 2)
    sew_kind: str = "ADD"
    clip_output: bool = False

    def __post_init__(self):
        if not (len(self.widths) == len(self.blocks) == len(self.strides)) or not self.widths:
            raise ConfigurationError("widths, blocks and strides need one entry per stage")
        if self.stem_stride < 1 or any(s not in (1, 2) for s in self.strides):
            raise ConfigurationError("strides must be positive (stages: 1 or 2)")
        if min(self.blocks) < 1:
            raise ConfigurationError("every stage needs at least one block")
        if self.sew_kind.upper() not in SEW_KINDS:
            raise ConfigurationError(f"unknown SEW kind {self.sew_kind!r}")

    @property
    def downsample(self) -> int:
        return self.stem_stride * int(np.prod(self.strides))

    @property
    def feature_channels(self) -> int:
        return self.widths[-1]

    def output_hw(self, h: int, w: int) -> tuple[int, int]:
        f = self.downsample
        if h % f or w % f:
            raise ConfigurationError(f"input {h}x{w} is not divisible by the downsample factor {f}")
        return h // f, w // f

    def block_configs(self) -> list[SEWBlockConfig]:
        out = []
        c = self.stem_width
        for width, n, stride in zip(self.widths, self.blocks, self.strides):
            for i in range(n):
                out.append(SEWBlockConfig(c, width, stride if i == 0 else 1, self.sew_kind))
                c = width
        return out


def desk_backbone_config(in_channels: int = 1, sew_kind: str = "ADD") -> BackboneConfig:
    return BackboneConfig(in_channels=in_channels, sew_kind=sew_kind)


def full_scale_backbone_config(in_channels: int = 1) -> BackboneConfig:
    """Declared 50-layer layout: /32 overall and 2048 feature channels.

    The stem stride of 4 stands for a stride-2 convolution followed by a
    stride-2 pooling stage.
    """
    return BackboneConfig(
        in_channels=in_channels,
        stem_width=64,
        stem_stride=4,
        widths=(256, 512, 1024, 2048),
        blocks=(3, 4, 6, 3),
        strides=(1, 2, 2, 2),
    )


class Backbone(Module):
    def __init__(self, cfg: BackboneConfig, lif: LIFConfig = LIFConfig(), rng=None, dtype=np.float32):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.cfg = cfg
        self.stem = SpikingLayer(cfg.in_channels, cfg.stem_width, "conv", 3, cfg.stem_stride, lif=lif, rng=rng, dtype=dtype)
        self.blocks = [SEWBlock(b, lif, rng=rng, dtype=dtype) for b in cfg.block_configs()]

    def spiking_layers(self) -> list[tuple[str, SpikingLayer]]:
        layers = [("stem", self.stem)]
        for i, block in enumerate(self.blocks):
            names = ("conv1", "conv2", "downsample")
            for name, layer in zip(names, (block.conv1, block.conv2, block.downsample)):
                if layer is not None:
                    layers.append((f"blocks.{i}.{name}", layer))
        return layers

    def spike_rates(self) -> dict[str, float]:
        return {name: spike_rate(layer.rate_meter) for name, layer in self.spiking_layers() if layer.rate_meter.total}

    def __call__(self, x) -> Tensor:
        """``x (T, B, H, W, C_in)`` spikes -> ``(T, B, H/f, W/f, C_feat)`` spike features."""
        x = as_tensor(x)
        if x.ndim != 5:
            raise ValueError(f"backbone input must be (T, B, H, W, C), got {x.shape}")
        self.cfg.output_hw(x.shape[2], x.shape[3])
        if x.shape[4] != self.cfg.in_channels:
            raise ConfigurationError(f"input has {x.shape[4]} channels, backbone expects {self.cfg.in_channels}")
        h = self.stem(x)
        for block in self.blocks:
            h = block(h)
        if self.cfg.clip_output:
            clipped = np.minimum(h.data, 1.0)
            h = make_result(clipped, (h,), lambda g, keep=h.data <= 1.0: (g * keep,), binary=True)
        return h


def backbone_forward(S_in, backbone: Backbone) -> Tensor:
    return backbone(S_in)
