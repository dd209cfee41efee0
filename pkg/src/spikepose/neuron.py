"""Leaky integrate-and-fire dynamics with surrogate gradients.

The forward pass is clock driven over the leading time axis.  With leak
factor ``lam`` and resting potential ``u_rest`` each step is

    h[t] = lam * u[t-1] + (1 - lam) * u_rest + X[t]      (leak + charge)
    s[t] = H(h[t] - v_th)                                (spike, H(0) = 1)
    u[t] = h[t] - (v_th - u_rest) * s[t]                 (soft reset)

Hard reset replaces the last line with ``u[t] = u_rest`` where ``s[t] = 1``.
The backward pass replaces ``H'`` with a surrogate derivative and keeps the
gradient that flows through the reset term.
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass, field

import numpy as np

from .numerics import ContractError, Module, NumericError, Parameter, PreconditionError, Tensor
from .numerics.layers import BatchNorm, Conv2d, Linear
from .numerics.tensor import as_tensor, make_result, sigmoid


@dataclass(frozen=True)
class Surrogate:
    """Smooth stand-in for the Heaviside derivative.

    ``atan``: ``alpha / (2 (1 + (pi alpha x / 2)^2))``.
    ``rectangular``: ``1/width`` on ``|x| < width/2``, else 0.
    """

    kind: str = "atan"
    alpha: float = 2.0
    width: float = 0.5

    def __post_init__(self):
        if self.kind not in ("atan", "rectangular"):
            raise ValueError(f"unknown surrogate {self.kind!r}")

    def grad(self, x: np.ndarray) -> np.ndarray:
        if self.kind == "atan":
            return self.alpha / (2.0 * (1.0 + (math.pi / 2.0 * self.alpha * x) ** 2))
        return (np.abs(x) < self.width / 2.0) / self.width

    def primitive(self, x: np.ndarray) -> np.ndarray:
        """The smooth function whose derivative is :meth:`grad`."""
        if self.kind == "atan":
            return np.arctan(math.pi / 2.0 * self.alpha * x) / math.pi + 0.5
        return np.clip(x / self.width + 0.5, 0.0, 1.0)


@dataclass(frozen=True)
class LIFConfig:
    lam: float = 0.5
    v_th: float = 1.0
    u_rest: float = 0.0
    reset: str = "soft"
    surrogate: Surrogate = field(default_factory=Surrogate)
    learnable_tau: bool = False
    detach_reset: bool = False

    def __post_init__(self):
        if not 0.0 <= self.lam < 1.0:
            raise ValueError("leak factor must satisfy 0 <= lam < 1")
        if not self.v_th > self.u_rest:
            raise ValueError("v_th must exceed u_rest")
        if self.reset not in ("soft", "hard"):
            raise ValueError(f"unknown reset mode {self.reset!r}")

    @classmethod
    def from_tau(cls, tau: float, **kw) -> "LIFConfig":
        return cls(lam=1.0 - 1.0 / tau, **kw)


@dataclass
class LIFState:
    u: np.ndarray

    @classmethod
    def rest(cls, shape, cfg: LIFConfig, dtype=np.float64) -> "LIFState":
        return cls(np.full(shape, cfg.u_rest, dtype=dtype))


def heaviside(x, surrogate: Surrogate = Surrogate()) -> Tensor:
    """Binary step ``x >= 0`` whose adjoint is the surrogate derivative."""
    x = as_tensor(x)
    xd = x.data
    out = (xd >= 0).astype(xd.dtype)
    return make_result(out, (x,), lambda g: (g * surrogate.grad(xd),), binary=True)


def lif_step(state: LIFState, X, cfg: LIFConfig, lam: float | None = None):
    """One leak/charge/spike/reset update on plain arrays.

    Returns ``(spikes, new_state)``.
    """
    X = np.asarray(X, dtype=np.float64)
    u = np.asarray(state.u, dtype=np.float64)
    if u.shape != X.shape:
        raise PreconditionError(f"state shape {u.shape} does not match input {X.shape}")
    lam = cfg.lam if lam is None else lam
    h = lam * u + (1.0 - lam) * cfg.u_rest + X
    if not np.all(np.isfinite(h)):
        raise NumericError("membrane potential is not finite")
    s = (h - cfg.v_th >= 0).astype(np.float64)
    if cfg.reset == "soft":
        u_new = h - (cfg.v_th - cfg.u_rest) * s
    else:
        u_new = np.where(s > 0, cfg.u_rest, h)
    return s, LIFState(u_new)


def lif_sequence(x, cfg: LIFConfig, leak=None, relaxed: bool = False) -> Tensor:
    """Run LIF neurons over the leading time axis of ``x`` as one taped op.

    ``leak`` optionally supplies the leak factor as a scalar tensor (the
    parametric neuron); its gradient is accumulated over all steps.  With
    ``relaxed=True`` the spike is replaced by the surrogate's primitive so
    that the analytic adjoint is the exact derivative of the forward map;
    this is only used for finite-difference checks.
    """
    x = as_tensor(x)
    xd = x.data
    dtype = xd.dtype
    if leak is not None:
        leak = as_tensor(leak)
        lam = float(leak.data.reshape(-1)[0])
    else:
        lam = cfg.lam
    steps = xd.shape[0]
    v_th, u_rest = cfg.v_th, cfg.u_rest
    sur = cfg.surrogate
    u = np.full(xd.shape[1:], u_rest, dtype=dtype)
    spikes = np.empty_like(xd)
    pre = np.empty_like(xd)  # h - v_th
    u_prev = np.empty_like(xd)
    for t in range(steps):
        u_prev[t] = u
        h = lam * u + (1.0 - lam) * u_rest + xd[t]
        v = h - v_th
        s = sur.primitive(v) if relaxed else (v >= 0).astype(dtype)
        if cfg.reset == "soft":
            u = h - (v_th - u_rest) * s
        else:
            u = h * (1.0 - s) + u_rest * s
        pre[t] = v
        spikes[t] = s
    if not np.all(np.isfinite(pre)):
        raise NumericError("membrane potential is not finite")

    def adjoint(g):
        gx = np.empty_like(xd)
        du = np.zeros(xd.shape[1:], dtype=dtype)
        glam = 0.0
        for t in range(steps - 1, -1, -1):
            sg = sur.grad(pre[t])
            if cfg.reset == "soft":
                du_dh = 1.0 if cfg.detach_reset else 1.0 - (v_th - u_rest) * sg
            else:
                h = pre[t] + v_th
                du_dh = (1.0 - spikes[t]) + (0.0 if cfg.detach_reset else (u_rest - h) * sg)
            gh = g[t] * sg + du * du_dh
            gx[t] = gh
            if leak is not None:
                glam += float(np.sum(gh * (u_prev[t] - u_rest), dtype=np.float64))
            du = gh * lam
        if leak is None:
            return (gx,)
        return gx, np.full(leak.shape, glam, dtype=leak.dtype)

    parents = (x,) if leak is None else (x, leak)
    return make_result(spikes, parents, adjoint, binary=not relaxed)


def plif_leak(w) -> Tensor:
    """Leak factor of the parametric neuron: ``1 - sigmoid(w)``, always in (0, 1)."""
    return 1.0 - sigmoid(w)


class SpikeMeter:
    """Running count of emitted spikes over neuron-steps."""

    def __init__(self):
        self._lock = threading.Lock()
        self.reset()

    def reset(self) -> None:
        self.ones = 0
        self.total = 0

    def record(self, spikes: np.ndarray) -> None:
        ones = int(np.count_nonzero(spikes))
        with self._lock:
            self.ones += ones
            self.total += int(spikes.size)


def spike_rate(meter: SpikeMeter) -> float:
    if meter.total == 0:
        raise PreconditionError("spike meter has no recorded steps")
    return meter.ones / meter.total


class LIFNode(Module):
    def __init__(self, cfg: LIFConfig = LIFConfig(), dtype=np.float32):
        self.cfg = cfg
        if cfg.learnable_tau:
            # lam = 1 - sigmoid(w); choose w so that lam starts at cfg.lam
            w0 = math.log((1.0 - cfg.lam) / cfg.lam) if 0.0 < cfg.lam < 1.0 else 0.0
            self.w = Parameter(np.array([w0]), dtype=dtype)
        else:
            self.w = None

    @property
    def lam(self) -> float:
        if self.w is None:
            return self.cfg.lam
        return float(plif_leak(Tensor(self.w.data)).data[0])

    def __call__(self, x: Tensor, relaxed: bool = False) -> Tensor:
        leak = plif_leak(self.w) if self.w is not None else None
        return lif_sequence(x, self.cfg, leak=leak, relaxed=relaxed)


def check_spike_like(x: Tensor, what: str = "input") -> None:
    """Spiking layers accept binary spikes or small non-negative spike counts."""
    d = x.data
    if not x.binary and not (np.all(d >= 0) and np.all(d == np.rint(d))):
        raise ContractError(f"{what} must hold non-negative integer spike values")


class SpikingLayer(Module):
    """Affine map (linear or conv) -> batch norm -> LIF over ``T`` steps."""

    def __init__(
        self,
        in_features: int,
        out_features: int,
        kind: str = "linear",
        k: int = 3,
        stride: int = 1,
        bias: bool = False,
        lif: LIFConfig = LIFConfig(),
        rng=None,
        dtype=np.float32,
    ):
        if kind == "linear":
            self.op = Linear(in_features, out_features, bias=bias, rng=rng, dtype=dtype)
        elif kind == "conv":
            self.op = Conv2d(in_features, out_features, k=k, stride=stride, rng=rng, dtype=dtype)
        else:
            raise ValueError(f"unknown spiking layer kind {kind!r}")
        self.kind = kind
        self.bn = BatchNorm(out_features, dtype=dtype)
        self.lif = LIFNode(lif, dtype=dtype)
        self.rate_meter = SpikeMeter()
        self.relaxed = False

    def __call__(self, x, pe: np.ndarray | None = None) -> Tensor:
        x = as_tensor(x)
        check_spike_like(x)
        z = self.op(x)
        if pe is not None:
            z = z + pe.astype(z.dtype)
        z = self.bn(z)
        s = self.lif(z, relaxed=self.relaxed)
        self.rate_meter.record(s.data)
        return s


def spiking_linear(S_in: Tensor, layer: SpikingLayer) -> Tensor:
    return layer(S_in)
