"""Per-branch autoregressive motion decoder (one or more post-norm transformer layers).

Input position ``t`` carries the motion of frame ``t-1`` (position 0 carries
the seed frame), so output position ``t`` predicts frame ``t``.
"""

from __future__ import annotations

import numpy as np

from ..autodiff import (
    Tensor,
    concat,
    matmul,
    reshape,
    softmax,
    stack,
    tanh,
    transpose,
)
from ..errors import DimensionError, SequenceError
from ..nn import LayerNorm, Linear, Module, uniform

NEG = -1e30


def positional_encoding(n: int, C: int) -> np.ndarray:
    pos = np.arange(n)[:, None]
    i = np.arange(C)[None, :]
    angle = pos / np.power(10000.0, (2 * (i // 2)) / C)
    return np.where(i % 2 == 0, np.sin(angle), np.cos(angle))


def causal_bias(n: int) -> np.ndarray:
    return np.triu(np.full((n, n), NEG), k=1)


def alignment_bias(n: int, m: int, mode: str = "hard", slope: float = 1.0) -> np.ndarray:
    """Bias for ``n`` motion queries over ``m`` audio frames; favours audio frame ``t`` for query ``t``."""
    if m < n:
        raise SequenceError(f"{n} motion steps but only {m} audio frames")
    t = np.arange(n)[:, None]
    s = np.arange(m)[None, :]
    if mode == "hard":
        return np.where(s == t, 0.0, NEG)
    if mode == "soft":
        return -slope * np.abs(s - t).astype(np.float64)
    raise ValueError(f"unknown alignment mode {mode!r}")


class MultiHeadAttention(Module):
    def __init__(self, C: int, heads: int, rng: np.random.Generator):
        if C % heads:
            raise ValueError(f"width {C} not divisible by {heads} heads")
        self.heads = heads
        self.q = Linear(C, C, rng)
        self.k = Linear(C, C, rng)
        self.v = Linear(C, C, rng)
        self.o = Linear(C, C, rng)

    def _split(self, x: Tensor) -> Tensor:
        n, C = x.shape
        return transpose(reshape(x, (n, self.heads, C // self.heads)), (1, 0, 2))

    def __call__(self, x: Tensor, memory: Tensor, bias: np.ndarray) -> Tensor:
        n, C = x.shape
        q = self._split(self.q(x))
        k = self._split(self.k(memory))
        v = self._split(self.v(memory))
        scores = matmul(q, transpose(k, (0, 2, 1))) * (1.0 / np.sqrt(C // self.heads)) + bias
        ctx = matmul(softmax(scores, axis=-1), v)
        return self.o(reshape(transpose(ctx, (1, 0, 2)), (n, C)))


class DecoderLayer(Module):
    def __init__(self, C: int, heads: int, rng: np.random.Generator, ffn_mult: int = 2):
        self.self_attn = MultiHeadAttention(C, heads, rng)
        self.norm1 = LayerNorm(C)
        self.cross_attn = MultiHeadAttention(C, heads, rng)
        self.norm2 = LayerNorm(C)
        self.ffn_in = Linear(C, ffn_mult * C, rng)
        self.ffn_out = Linear(ffn_mult * C, C, rng)
        self.norm3 = LayerNorm(C)

    def __call__(self, x: Tensor, audio: Tensor, self_bias, cross_bias) -> Tensor:
        x = self.norm1(x + self.self_attn(x, x, self_bias))
        x = self.norm2(x + self.cross_attn(x, audio, cross_bias))
        return self.norm3(x + self.ffn_out(tanh(self.ffn_in(x))))


class BranchDecoder(Module):
    def __init__(self, V: int, C: int, n_styles: int, n_levels: int, rng: np.random.Generator,
                 layers: int = 1, heads: int = 4, alignment: str = "hard", zero_head: bool = True):
        self.V = V
        self.C = C
        self.alignment = alignment
        self.motion_in = Linear(3 * V, C, rng)
        self.style_emb = uniform(rng, (n_styles, C), C)
        self.level_emb = uniform(rng, (n_levels, C), C)
        self.layers = _Stack([DecoderLayer(C, heads, rng) for _ in range(layers)])
        self.head = Linear(C, 3 * V, rng, zero=zero_head)

    def condition(self, style_onehot, level_onehot) -> Tensor:
        s = Tensor(np.asarray(style_onehot, dtype=np.float64)[None, :])
        l = Tensor(np.asarray(level_onehot, dtype=np.float64)[None, :])
        return matmul(s, self.style_emb) + matmul(l, self.level_emb)

    def __call__(self, audio: Tensor, style_onehot, level_onehot, history: Tensor) -> Tensor:
        """Parallel (causally masked) pass: ``history`` is ``n x V x 3``, returns ``n x V x 3``."""
        n = history.shape[0]
        if history.ndim != 3 or history.shape[1:] != (self.V, 3):
            raise DimensionError(f"history must be n x {self.V} x 3, got {history.shape}")
        if audio.ndim != 2 or audio.shape[1] != self.C:
            raise DimensionError(f"audio features must be T x {self.C}, got {audio.shape}")
        if n > audio.shape[0]:
            raise SequenceError(f"{n} motion steps exceed {audio.shape[0]} audio frames")
        x = self.motion_in(reshape(history, (n, 3 * self.V)))
        x = x + self.condition(style_onehot, level_onehot) + positional_encoding(n, self.C)
        sb = causal_bias(n)
        cb = alignment_bias(n, audio.shape[0], self.alignment)
        for layer in self.layers:
            x = layer(x, audio, sb, cb)
        return reshape(self.head(x), (n, self.V, 3))


class _Stack(Module):
    def __init__(self, items):
        self._items = list(items)
        for i, item in enumerate(self._items):
            setattr(self, f"l{i}", item)

    def __iter__(self):
        return iter(self._items)

    def __len__(self):
        return len(self._items)


def decode_branch(decoder: BranchDecoder, features: Tensor, cond, past_offsets) -> Tensor:
    """One autoregressive step.

    ``past_offsets`` holds the history inputs seen so far (seed first, then
    frames ``0..t-1``); the result is the ``V x 3`` offset of frame ``t``.
    """
    past = past_offsets if isinstance(past_offsets, Tensor) else Tensor(past_offsets)
    t = past.shape[0] - 1
    if t < 0:
        raise SequenceError("history must contain at least the seed frame")
    if t >= features.shape[0]:
        raise SequenceError(f"step {t} beyond {features.shape[0]} feature frames")
    out = decoder(features, cond.style_onehot, cond.level_onehot, past)
    return out[t]


def teacher_history(seed: Tensor, frames: Tensor) -> Tensor:
    """History inputs for teacher forcing: seed, then frames ``0..T-2``."""
    T = frames.shape[0]
    seed = reshape(seed, (1,) + tuple(seed.shape))
    if T == 1:
        return seed
    return concat([seed, frames[: T - 1]], axis=0)


def autoregress(decoder: BranchDecoder, features: Tensor, cond, seed: Tensor, T: int,
                reference: Tensor | None = None, mask=None) -> Tensor:
    """Sequential decoding. Where ``mask[t]`` is true the history slot of step ``t``
    takes the reference frame ``t-1``; otherwise the decoder's own output."""
    outputs: list[Tensor] = []
    hist = [seed]
    for t in range(T):
        if t > 0:
            use_ref = reference is not None and mask is not None and bool(mask[t])
            hist.append(reference[t - 1] if use_ref else outputs[t - 1])
        step = decoder(features, cond.style_onehot, cond.level_onehot, stack(hist, axis=0))
        outputs.append(step[t])
    return stack(outputs, axis=0)
