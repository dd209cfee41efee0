"""Voxel grid -> SEW backbone -> spiking transformer -> pose parameters."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .attention import AttentionConfig, SpikingTransformer
from .backbone import Backbone, BackboneConfig
from .errors import ConfigurationError
from .neuron import LIFConfig
from .numerics import Module, Tensor
from .numerics.tensor import as_tensor
from .pose.head import RegressionHead


@dataclass(frozen=True)
class ModelConfig:
    height: int = 64
    width: int = 64
    n_joints: int = 2
    n_shape: int = 4
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    attention: AttentionConfig = field(default_factory=AttentionConfig)
    lif: LIFConfig = field(default_factory=LIFConfig)
    translation_offset: tuple = (0.0, 0.0, 3.0)
    average_beta: bool = False

    def __post_init__(self):
        if self.attention.channels != self.backbone.feature_channels:
            raise ConfigurationError(
                f"attention channels {self.attention.channels} must equal backbone features {self.backbone.feature_channels}"
            )
        self.backbone.output_hw(self.height, self.width)

    def with_layers(self, n: int) -> "ModelConfig":
        return replace(self, attention=replace(self.attention, layers=n))


class SpikePoseModel(Module):
    def __init__(self, cfg: ModelConfig, seed: int = 0, dtype=np.float32):
        rng = np.random.default_rng(seed)
        self.cfg = cfg
        self.backbone = Backbone(cfg.backbone, cfg.lif, rng=rng, dtype=dtype)
        self.transformer = SpikingTransformer(cfg.attention, cfg.lif, rng=rng, dtype=dtype)
        self.head = RegressionHead(
            cfg.backbone.feature_channels,
            cfg.n_joints,
            cfg.n_shape,
            translation_offset=cfg.translation_offset,
            average_beta=cfg.average_beta,
            rng=rng,
            dtype=dtype,
        )

    def features(self, voxels) -> Tensor:
        x = as_tensor(np.asarray(voxels, dtype=np.float32) if not isinstance(voxels, Tensor) else voxels)
        x.binary = bool(np.all((x.data == 0) | (x.data == 1)))
        return self.transformer(self.backbone(x))

    def __call__(self, voxels) -> dict[str, Tensor]:
        """``voxels (T, B, H, W, C)`` -> ``theta (T, B, J, 3)``, ``beta (T, B, n_shape)``, ``d (T, B, 3)``."""
        return self.head(self.features(voxels))

    def set_keep_attention(self, keep: bool = True) -> None:
        self.transformer.set_keep_attention(keep)
