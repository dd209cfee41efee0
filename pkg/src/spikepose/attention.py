"""Spiking spatiotemporal transformer with Hamming-similarity attention.

Queries and keys are binary spike vectors; their similarity is one minus the
fraction of disagreeing bits.  Attention spans every (t, h, w) token of a
sample, so information flows both forwards and backwards in time.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .backbone import SEW_KINDS, sew_combine
from .errors import ConfigurationError
from .neuron import LIFConfig, LIFNode, SpikingLayer, check_spike_like
from .numerics import ContractError, Module, Tensor, matmul, softmax_rows
from .numerics.layers import BatchNorm, Linear
from .numerics.tensor import as_tensor, make_result

SCORE_KINDS = ("hamming", "dot", "euclidean", "manhattan")
PE_MODES = ("temporal", "spatiotemporal")


# ---------------------------------------------------------------------------
# positional encoding


def positional_encoding(pos, channel, T: int, c_k: int):
    """Sinusoidal encoding scaled by ``1/T``; even channels use sin, odd use cos."""
    channel = np.asarray(channel)
    if np.any(channel < 0) or np.any(channel >= c_k):
        raise ValueError(f"channel must lie in [0, {c_k})")
    i2 = channel - channel % 2
    angle = np.asarray(pos, dtype=np.float64) / np.power(10000.0, i2 / c_k)
    return np.where(channel % 2 == 0, np.sin(angle), np.cos(angle)) / T


def pe_table(n_pos: int, c_k: int, T: int) -> np.ndarray:
    """``(n_pos, c_k)`` table of :func:`positional_encoding`."""
    pos = np.arange(n_pos)[:, None]
    return positional_encoding(pos, np.arange(c_k)[None, :], T, c_k)


# ---------------------------------------------------------------------------
# score functions


def _check_binary(x: Tensor, what: str) -> None:
    if not x.binary and not np.all((x.data == 0) | (x.data == 1)):
        raise ContractError(f"{what} must be binary")


def hamming_scores(Sq, Sk) -> Tensor:
    """Normalized Hamming similarity ``(..., N, M)`` of ``Sq (..., N, C)`` and ``Sk (..., M, C)``.

    Evaluated through the relaxed form
    ``1 - (sum q + sum k - 2 q.k) / C``, which equals the bit-mismatch count
    on binary input and gives the gradients ``(2k - 1)/C`` and ``(2q - 1)/C``.
    """
    Sq, Sk = as_tensor(Sq), as_tensor(Sk)
    _check_binary(Sq, "queries")
    _check_binary(Sk, "keys")
    if Sq.shape[-1] != Sk.shape[-1]:
        raise ValueError(f"query and key widths differ: {Sq.shape[-1]} vs {Sk.shape[-1]}")
    q, k = Sq.data, Sk.data
    c = q.shape[-1]
    agree = np.matmul(q, np.swapaxes(k, -1, -2))
    out = 1.0 - (q.sum(-1)[..., :, None] + k.sum(-1)[..., None, :] - 2.0 * agree) / c
    out = out.astype(q.dtype, copy=False)
    return make_result(out, (Sq, Sk), lambda g: hamming_scores_backward(q, k, g))


def hamming_scores_backward(Sq: np.ndarray, Sk: np.ndarray, upstream: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Chain ``upstream (..., N, M)`` through the relaxed Hamming similarity."""
    c = Sq.shape[-1]
    gq = np.matmul(upstream, 2.0 * Sk - 1.0) / c
    gk = np.matmul(np.swapaxes(upstream, -1, -2), 2.0 * Sq - 1.0) / c
    return gq.astype(Sq.dtype, copy=False), gk.astype(Sk.dtype, copy=False)


def hamming_scores_popcount(Sq: np.ndarray, Sk: np.ndarray) -> np.ndarray:
    """Same scores via packed bits, XOR and popcount (``(N, C)`` by ``(M, C)``)."""
    q = np.asarray(Sq)
    k = np.asarray(Sk)
    if not (np.all((q == 0) | (q == 1)) and np.all((k == 0) | (k == 1))):
        raise ContractError("popcount path needs binary input")
    c = q.shape[-1]
    pq = np.packbits(q.astype(np.uint8), axis=-1)
    pk = np.packbits(k.astype(np.uint8), axis=-1)
    mismatches = np.bitwise_count(pq[:, None, :] ^ pk[None, :, :]).sum(axis=-1, dtype=np.int64)
    return 1.0 - mismatches / c


def _manhattan(Sq: Tensor, Sk: Tensor) -> Tensor:
    q, k = Sq.data, Sk.data
    c = q.shape[-1]
    diff = q[..., :, None, :] - k[..., None, :, :]
    out = (1.0 - np.abs(diff).sum(-1) / c).astype(q.dtype, copy=False)

    def adjoint(g):
        sgn = np.sign(diff) * g[..., None]
        return -sgn.sum(-2) / c, sgn.sum(-3) / c

    return make_result(out, (Sq, Sk), adjoint)


def alt_scores(Sq, Sk, kind: str) -> Tensor:
    """Alternative similarities: scaled dot product, normalized Euclidean or Manhattan."""
    Sq, Sk = as_tensor(Sq), as_tensor(Sk)
    c = Sq.shape[-1]
    if kind == "hamming":
        return hamming_scores(Sq, Sk)
    if kind == "dot":
        return matmul(Sq, Sk.swapaxes(-1, -2)) * (1.0 / math.sqrt(c))
    if kind == "euclidean":
        sq = (Sq * Sq).sum(axis=-1, keepdims=True)
        sk = (Sk * Sk).sum(axis=-1, keepdims=True).swapaxes(-1, -2)
        return 1.0 - (sq + sk - matmul(Sq, Sk.swapaxes(-1, -2)) * 2.0) / float(c)
    if kind == "manhattan":
        return _manhattan(Sq, Sk)
    raise ValueError(f"unknown score kind {kind!r}; expected one of {SCORE_KINDS}")


# ---------------------------------------------------------------------------
# layers


@dataclass(frozen=True)
class AttentionConfig:
    channels: int = 128
    c_k: int = 16
    c_v: int = 16
    heads: int = 1
    layers: int = 1
    score_fn: str = "hamming"
    include_pe: bool = True
    pe_mode: str = "temporal"
    ffn_hidden: int | None = None
    sew_kind: str = "ADD"
    temperature: float = 1.0

    def __post_init__(self):
        if self.heads < 1 or self.c_k % self.heads or self.c_v % self.heads:
            raise ConfigurationError(f"c_k={self.c_k} and c_v={self.c_v} must divide into {self.heads} heads")
        if self.layers < 0:
            raise ConfigurationError("layer count must be non-negative")
        if self.score_fn not in SCORE_KINDS:
            raise ConfigurationError(f"unknown score function {self.score_fn!r}")
        if self.pe_mode not in PE_MODES:
            raise ConfigurationError(f"unknown positional encoding mode {self.pe_mode!r}")
        if self.sew_kind.upper() not in SEW_KINDS:
            raise ConfigurationError(f"unknown SEW kind {self.sew_kind!r}")
        if self.temperature <= 0:
            raise ConfigurationError("temperature must be positive")

    @property
    def hidden(self) -> int:
        return self.ffn_hidden or self.channels


def _split_heads(x: Tensor, heads: int) -> Tensor:
    """``(B, N, C)`` -> ``(B, heads, N, C/heads)``."""
    b, n, c = x.shape
    return x.reshape(b, n, heads, c // heads).transpose(0, 2, 1, 3)


class SpikingSelfAttention(Module):
    def __init__(self, cfg: AttentionConfig, first: bool = True, lif: LIFConfig = LIFConfig(), rng=None, dtype=np.float32):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.cfg = cfg
        self.use_pe = cfg.include_pe and first
        self.q = SpikingLayer(cfg.channels, cfg.c_k, "linear", lif=lif, rng=rng, dtype=dtype)
        self.k = SpikingLayer(cfg.channels, cfg.c_k, "linear", lif=lif, rng=rng, dtype=dtype)
        self.v = Linear(cfg.channels, cfg.c_v, bias=True, rng=rng, dtype=dtype)
        self.att_bn = BatchNorm(cfg.c_v, dtype=dtype)
        self.att_lif = LIFNode(lif, dtype=dtype)
        self.proj = SpikingLayer(cfg.c_v, cfg.channels, "linear", lif=lif, rng=rng, dtype=dtype)
        self.keep_attention = False
        self.last_attention = None
        self.last_shape = None

    def _pe(self, shape) -> np.ndarray | None:
        if not self.use_pe:
            return None
        T, _, H, W, _ = shape
        if self.cfg.pe_mode == "temporal":
            return pe_table(T, self.cfg.c_k, T)[:, None, None, None, :]
        return pe_table(T * H * W, self.cfg.c_k, T).reshape(T, 1, H, W, self.cfg.c_k)

    def __call__(self, x) -> Tensor:
        x = as_tensor(x)
        check_spike_like(x)
        T, B, H, W, C = x.shape
        cfg = self.cfg
        pe = self._pe(x.shape)
        sq = self.q(x, pe=pe)
        sk = self.k(x, pe=pe)
        v = self.v(x)
        n = T * H * W

        def tokens(t: Tensor) -> Tensor:
            # (T, B, H, W, c) -> (B, T*H*W, c), token order t-major then row-major space
            return t.transpose(1, 0, 2, 3, 4).reshape(B, n, t.shape[-1])

        q = _split_heads(tokens(sq), cfg.heads)
        k = _split_heads(tokens(sk), cfg.heads)
        vh = _split_heads(tokens(v), cfg.heads)
        scores = alt_scores(q, k, cfg.score_fn)
        if cfg.temperature != 1.0:
            scores = scores * (1.0 / cfg.temperature)
        alpha = softmax_rows(scores)
        self.last_shape = x.shape
        if self.keep_attention:
            self.last_attention = alpha.data.copy()
        out = matmul(alpha, vh)  # (B, heads, N, c_v/heads)
        out = out.transpose(0, 2, 1, 3).reshape(B, T, H, W, cfg.c_v).transpose(1, 0, 2, 3, 4)
        s = self.att_lif(self.att_bn(out))
        return sew_combine(self.proj(s), x, cfg.sew_kind)


def spiking_attention(S_in, layer: SpikingSelfAttention) -> Tensor:
    return layer(S_in)


class FeedForward(Module):
    def __init__(self, channels: int, hidden: int, lif: LIFConfig = LIFConfig(), rng=None, dtype=np.float32):
        self.fc1 = SpikingLayer(channels, hidden, "linear", lif=lif, rng=rng, dtype=dtype)
        self.fc2 = SpikingLayer(hidden, channels, "linear", lif=lif, rng=rng, dtype=dtype)

    def __call__(self, x: Tensor) -> Tensor:
        return self.fc2(self.fc1(x))


class TransformerLayer(Module):
    """Attention, then a two-layer spiking FFN whose output is SEW-combined with the attention output."""

    def __init__(self, cfg: AttentionConfig, first: bool = True, lif: LIFConfig = LIFConfig(), rng=None, dtype=np.float32):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.cfg = cfg
        self.attn = SpikingSelfAttention(cfg, first=first, lif=lif, rng=rng, dtype=dtype)
        self.ffn = FeedForward(cfg.channels, cfg.hidden, lif=lif, rng=rng, dtype=dtype)
        self.last_shape = None

    def __call__(self, x) -> Tensor:
        s_att = self.attn(x)
        self.last_shape = s_att.shape
        return sew_combine(self.ffn(s_att), s_att, self.cfg.sew_kind)


def transformer_layer(S_in, layer: TransformerLayer) -> Tensor:
    return layer(S_in)


class SpikingTransformer(Module):
    """``cfg.layers`` stacked transformer layers; zero layers is the identity."""

    def __init__(self, cfg: AttentionConfig, lif: LIFConfig = LIFConfig(), rng=None, dtype=np.float32):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.cfg = cfg
        self.layers = [TransformerLayer(cfg, first=(i == 0), lif=lif, rng=rng, dtype=dtype) for i in range(cfg.layers)]

    def __call__(self, x):
        for layer in self.layers:
            x = layer(x)
        return x

    def set_keep_attention(self, keep: bool = True) -> None:
        for layer in self.layers:
            layer.attn.keep_attention = keep


def stack_n(S_in, transformer: SpikingTransformer):
    return transformer(S_in)


def temporal_attention_map(alpha: np.ndarray, T: int) -> np.ndarray:
    """Sum ``alpha (B, heads, N, N)`` over spatial positions of query and key, average the rest.

    Returns a ``(T, T)`` map whose rows sum to the number of spatial positions.
    """
    B, heads, n, _ = alpha.shape
    hw = n // T
    a = alpha.reshape(B, heads, T, hw, T, hw).sum(axis=(3, 5))
    return a.mean(axis=(0, 1))


# ---------------------------------------------------------------------------
# binary embedding and the Johnson-Lindenstrauss check


def binary_embed(v: np.ndarray, A: np.ndarray) -> np.ndarray:
    """Bits ``1[(A v)_c >= 0]`` of a nonzero vector (or rows of a matrix)."""
    v = np.asarray(v, dtype=np.float64)
    norms = np.linalg.norm(v, axis=-1)
    if np.any(norms == 0):
        raise ValueError("binary embedding of a zero vector has no direction")
    return (v @ np.asarray(A).T >= 0).astype(np.uint8)


def g_map(x):
    """``cos(pi (1 - x))`` with ``x`` held to ``[0, 1]`` where the map is monotone."""
    return np.cos(np.pi * (1.0 - np.clip(x, 0.0, 1.0)))


@dataclass(frozen=True)
class JLVerifyConfig:
    d_k: int = 64
    c_k: int = 4096
    delta: float = 0.1
    m: int | None = None
    trials: int = 1000

    def __post_init__(self):
        if self.delta <= 0:
            raise ConfigurationError("delta must be positive")
        if self.trials < 1 or self.d_k < 1:
            raise ConfigurationError("trials and d_k must be positive")
        m = self.candidates
        if not self.c_k > math.log(m) / self.delta**2:
            raise ConfigurationError(
                f"c_k={self.c_k} does not exceed log(M)/delta^2 = {math.log(m) / self.delta**2:.1f}; the bound does not apply"
            )

    @property
    def candidates(self) -> int:
        return self.m if self.m is not None else self.trials


@dataclass
class JLReport:
    violation_rate: float
    violations: int
    max_gap: float
    max_deviation: float
    theoretical_bound: float
    negative_cosines: int
    trials: int

    def to_dict(self) -> dict:
        return dict(vars(self))


def verify_jl(cfg: JLVerifyConfig, seed: int = 0) -> JLReport:
    """Sample (q, k) pairs and check ``g(d_H - delta) <= d_C <= g(d_H + delta)``.

    One Gaussian matrix ``A`` is shared by all pairs.  Keys mix the query with
    independent noise so the cosines cover ``[-1, 1]``.
    """
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((cfg.c_k, cfg.d_k))
    q = rng.standard_normal((cfg.trials, cfg.d_k))
    noise = rng.standard_normal((cfg.trials, cfg.d_k))
    a = rng.uniform(-1.0, 1.0, size=(cfg.trials, 1))
    k = a * q + (1.0 - np.abs(a)) * noise
    d_c = (q * k).sum(-1) / (np.linalg.norm(q, axis=-1) * np.linalg.norm(k, axis=-1))
    d_h = 1.0 - np.count_nonzero(binary_embed(q, A) != binary_embed(k, A), axis=-1) / cfg.c_k
    lower = g_map(d_h - cfg.delta)
    upper = g_map(d_h + cfg.delta)
    gap = np.maximum(lower - d_c, d_c - upper)
    bad = gap > 0
    return JLReport(
        violation_rate=float(bad.mean()),
        violations=int(bad.sum()),
        max_gap=float(max(gap.max(), 0.0)),
        max_deviation=float(np.abs(d_c - g_map(d_h)).max()),
        theoretical_bound=float(min(1.0, 2.0 * math.exp(-cfg.delta**2 * cfg.c_k))),
        negative_cosines=int((d_c < 0).sum()),
        trials=cfg.trials,
    )
