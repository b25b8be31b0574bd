"""Spatiotemporal gate that blends the emotion and content branch offsets.

Stages, for features of width ``C`` and ``B`` batch items:

1. each branch's audio features go through ``Linear(C, C/4) + tanh``;
2. the two are concatenated and reduced by ``Linear(C/2, C/16) + tanh``;
3. a learned per-vertex embedding table (``V x C/16``) is repeated over the batch;
4. audio features are repeated over vertices, embeddings over frames, and summed;
5. a stack of spiral spatiotemporal convolutions (tanh after each);
6. ``Linear(C/16, 1) + sigmoid`` gives the weight ``alpha`` per vertex and frame;
7. the result is ``alpha * d_emotion + (1 - alpha) * d_content``.
"""

from __future__ import annotations

import numpy as np

from ..autodiff import Tensor, concat, expand, sigmoid, tanh, transpose
from ..errors import DimensionError
from ..mesh import SpiralTable
from ..nn import Linear, Module, param
from ..spiral_conv import SpiralConv3D
from .decoder import _Stack


class MeshAttention(Module):
    def __init__(self, V: int, C: int, table: SpiralTable, rng: np.random.Generator,
                 delta: int = 3, n_layers: int = 2, per_axis: bool = False,
                 replicate_pad: bool = False):
        if C % 16:
            raise ValueError(f"feature width {C} must be divisible by 16")
        if table.V != V:
            raise DimensionError(f"spiral table has {table.V} vertices, mesh has {V}")
        c4, c16 = C // 4, C // 16
        self.V = V
        self.C = C
        self.per_axis = per_axis
        self.mlp_emotion = Linear(C, c4, rng)
        self.mlp_content = Linear(C, c4, rng)
        self.mlp_fuse = Linear(2 * c4, c16, rng)
        self.vertex_embedding = param(rng.normal(0.0, 0.1, size=(V, c16)))
        self.convs = _Stack(
            [SpiralConv3D(table, delta, c16, c16, rng, replicate_pad) for _ in range(n_layers)]
        )
        self.gate = Linear(c16, 3 if per_axis else 1, rng)
        self.gate.bias.data[...] = 0.0

    def audio_features(self, f_e: Tensor, f_c: Tensor) -> Tensor:
        a = tanh(self.mlp_emotion(f_e))
        b = tanh(self.mlp_content(f_c))
        return tanh(self.mlp_fuse(concat([a, b], axis=-1)))

    def vertex_features(self, f_audio: Tensor) -> Tensor:
        B, T, _ = f_audio.shape
        per_vertex = expand(f_audio, 1, self.V)                       # B x V x T x C/16
        emb = expand(expand(self.vertex_embedding, 0, B), 2, T)      # B x V x T x C/16
        return per_vertex + emb

    def weights(self, f_e: Tensor, f_c: Tensor) -> Tensor:
        """Blend weight ``alpha`` as ``B x T x V x (1 or 3)``."""
        F = self.vertex_features(self.audio_features(f_e, f_c))
        for conv in self.convs:
            F = tanh(conv(F))
        alpha = sigmoid(self.gate(F))                                # B x V x T x k
        return transpose(alpha, (0, 2, 1, 3))

    def __call__(self, f_e: Tensor, f_c: Tensor, d_e: Tensor, d_c: Tensor) -> Tensor:
        return mesh_attention_fuse(self, f_e, f_c, d_e, d_c)


def mesh_attention_fuse(module: MeshAttention, f_e: Tensor, f_c: Tensor, d_e: Tensor, d_c: Tensor) -> Tensor:
    if f_e.shape != f_c.shape or f_e.ndim != 3:
        raise DimensionError(f"branch features must both be B x T x C, got {f_e.shape} and {f_c.shape}")
    B, T, _ = f_e.shape
    want = (B, T, module.V, 3)
    if d_e.shape != want or d_c.shape != want:
        raise DimensionError(f"offsets must be {want}, got {d_e.shape} and {d_c.shape}")
    alpha = module.weights(f_e, f_c)
    # written as d_c + alpha*(d_e - d_c) so equal branches pass through exactly
    return d_c + alpha * (d_e - d_c)
