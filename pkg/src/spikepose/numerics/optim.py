"""Optimizers and the cosine learning-rate schedule."""

from __future__ import annotations

import math
from typing import Iterable

import numpy as np

from .tensor import Parameter, PreconditionError


def cosine_lr(lr0: float, epoch: float, max_epochs: float) -> float:
    """Cosine annealing from ``lr0`` at epoch 0 to 0 at ``max_epochs``."""
    if max_epochs <= 0:
        return lr0
    return lr0 * (1.0 + math.cos(math.pi * epoch / max_epochs)) / 2.0


class Optimizer:
    def __init__(self, params: Iterable[Parameter], lr: float):
        if lr < 0:
            raise PreconditionError("learning rate must be >= 0")
        self.params = list(params)
        self.lr = lr

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()

    def step(self, lr: float | None = None) -> None:
        raise NotImplementedError


class SGD(Optimizer):
    def step(self, lr: float | None = None) -> None:
        lr = self.lr if lr is None else lr
        if lr < 0:
            raise PreconditionError("learning rate must be >= 0")
        for p in self.params:
            p.data -= (lr * p.grad).astype(p.data.dtype)


class Adam(Optimizer):
    def __init__(self, params, lr: float = 0.01, betas=(0.9, 0.999), eps: float = 1e-8):
        super().__init__(params, lr)
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self, lr: float | None = None) -> None:
        lr = self.lr if lr is None else lr
        if lr < 0:
            raise PreconditionError("learning rate must be >= 0")
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1**self.t
        c2 = 1.0 - b2**self.t
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            update = lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
            p.data -= update.astype(p.data.dtype)


def clip_grad_norm(params: Iterable[Parameter], max_norm: float) -> float:
    """Scale gradients in place so their global L2 norm is at most ``max_norm``; returns the norm before."""
    params = list(params)
    total = math.sqrt(sum(float(np.sum(np.square(p.grad, dtype=np.float64))) for p in params))
    if max_norm > 0 and total > max_norm and math.isfinite(total):
        scale = max_norm / total
        for p in params:
            p.grad *= np.asarray(scale, dtype=p.grad.dtype)
    return total


def make_optimizer(kind: str, params, lr: float) -> Optimizer:
    if kind == "adam":
        return Adam(params, lr=lr)
    if kind == "sgd":
        return SGD(params, lr=lr)
    raise ValueError(f"unknown optimizer {kind!r}")


def optimizer_step(optimizer: Optimizer, epoch: int, max_epochs: int, lr0: float | None = None) -> float:
    """Apply one update at the cosine-scheduled rate for ``epoch``; returns the rate used."""
    lr = cosine_lr(optimizer.lr if lr0 is None else lr0, epoch, max_epochs)
    optimizer.step(lr)
    return lr
