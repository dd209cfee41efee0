"""Weighted layers with fan-in initialisation and activity metering."""

from __future__ import annotations

import threading

import numpy as np

from .functional import BatchNormState, batch_norm, conv2d, conv_output_size, linear
from .module import Module
from .tensor import Parameter, Tensor


class ActivityMeter:
    """Counts non-zero input entries and output positions seen by a weighted layer."""

    def __init__(self):
        self._lock = threading.Lock()
        self.reset()

    def reset(self) -> None:
        self.calls = 0
        self.input_nonzero = 0
        self.input_total = 0
        self.steps = 0  # length of the leading (time) axis, summed over calls
        self.positions = 0  # output positions per time step (batch x spatial), last call
        self.batch = 1  # batch extent of the last call
        self.out_hw = (1, 1)

    def record(self, x: np.ndarray, steps: int, positions: int, out_hw=(1, 1), batch: int = 1) -> None:
        nnz = int(np.count_nonzero(x))
        with self._lock:
            self.calls += 1
            self.input_nonzero += nnz
            self.input_total += int(x.size)
            self.steps += steps
            self.positions = positions
            self.batch = batch
            self.out_hw = tuple(out_hw)

    @property
    def last_steps(self) -> int:
        return self.steps // self.calls if self.calls else 0

    @property
    def rate(self) -> float:
        return self.input_nonzero / self.input_total if self.input_total else 0.0


def _uniform(rng: np.random.Generator, shape, fan_in: int, dtype) -> np.ndarray:
    bound = np.sqrt(1.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Linear(Module):
    """``y = x @ W + b`` on the last axis; the leading axis is treated as time."""

    def __init__(self, in_features: int, out_features: int, bias: bool = True, rng=None, dtype=np.float32):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.in_features = in_features
        self.out_features = out_features
        self.weight = Parameter(_uniform(rng, (in_features, out_features), in_features, dtype), dtype=dtype)
        self.bias = Parameter(_uniform(rng, (out_features,), in_features, dtype), dtype=dtype) if bias else None
        self.meter = ActivityMeter()

    def __call__(self, x: Tensor) -> Tensor:
        steps = x.shape[0] if x.ndim > 1 else 1
        positions = int(np.prod(x.shape[1:-1])) if x.ndim > 2 else 1
        batch = x.shape[1] if x.ndim > 2 else 1
        self.meter.record(x.data, steps, positions, batch=batch)
        return linear(x, self.weight, self.bias)

    def macs_per_position(self) -> int:
        return self.in_features * self.out_features


class Conv2d(Module):
    """Channel-last 2-D convolution without bias (batch norm follows)."""

    def __init__(self, in_channels: int, out_channels: int, k: int = 3, stride: int = 1, rng=None, dtype=np.float32):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.k = k
        self.stride = stride
        self.pad = k // 2
        fan_in = k * k * in_channels
        self.weight = Parameter(_uniform(rng, (k, k, in_channels, out_channels), fan_in, dtype), dtype=dtype)
        self.meter = ActivityMeter()

    def output_hw(self, h: int, w: int) -> tuple[int, int]:
        return (
            conv_output_size(h, self.k, self.stride, self.pad),
            conv_output_size(w, self.k, self.stride, self.pad),
        )

    def __call__(self, x: Tensor) -> Tensor:
        # x: (T, B, H, W, C)
        ho, wo = self.output_hw(x.shape[-3], x.shape[-2])
        batch = int(np.prod(x.shape[1:-3])) if x.ndim > 4 else 1
        self.meter.record(x.data, x.shape[0], batch * ho * wo, (ho, wo), batch=batch)
        return conv2d(x, self.weight, stride=self.stride, pad=self.pad)

    def macs_per_position(self) -> int:
        return self.k * self.k * self.in_channels * self.out_channels


class BatchNorm(Module):
    def __init__(self, channels: int, momentum: float = 0.1, eps: float = 1e-5, dtype=np.float32):
        self.channels = channels
        self.gamma = Parameter(np.ones(channels), dtype=dtype)
        self.beta = Parameter(np.zeros(channels), dtype=dtype)
        self.stats = BatchNormState.fresh(channels, momentum, eps, dtype)

    def __call__(self, x: Tensor) -> Tensor:
        return batch_norm(x, self.gamma, self.beta, self.stats, training=self.training)
