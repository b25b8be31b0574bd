"""Spatiotemporal spiral convolution.

For every vertex ``v`` and frame ``t`` the layer gathers the features of
``v``'s spiral at each of the frames ``t-delta+1 .. t`` (oldest first),
flattens them frame-major / spiral-minor into one ``delta*L*C_in`` vector and
applies an affine map. Padding slots, in space or time, contribute zeros.
"""

from __future__ import annotations

import numpy as np

from . import kernels
from .autodiff import Tensor, matmul, reshape
from .autodiff.tensor import _result
from .errors import DimensionError
from .mesh import SpiralTable
from .nn import Module, param, uniform


def spiral_gather(x: Tensor, table: SpiralTable, delta: int, replicate: bool = False) -> Tensor:
    """``B x V x T x C`` -> ``B x V x T x (delta*L*C)`` on the tape."""
    B, V, T, C = x.shape
    idx = table.indices
    out = kernels.spiral_gather(np.ascontiguousarray(x.data), idx, delta, replicate)

    def backward(g):
        return (kernels.spiral_scatter(np.ascontiguousarray(g), idx, delta, C, replicate),)

    return _result(out, (x,), backward)


class SpiralConv3D(Module):
    def __init__(self, table: SpiralTable, delta: int, c_in: int, c_out: int,
                 rng: np.random.Generator, replicate_pad: bool = False):
        if delta < 1 or table.L < 1:
            raise ValueError(f"delta and spiral length must be >= 1, got {delta}, {table.L}")
        self.table = table
        self.delta = delta
        self.c_in = c_in
        self.c_out = c_out
        self.replicate_pad = replicate_pad
        fan_in = delta * table.L * c_in
        self.W = uniform(rng, (fan_in, c_out), fan_in)
        self.b = param(np.zeros(c_out))

    @property
    def L(self) -> int:
        return self.table.L

    def __call__(self, x: Tensor) -> Tensor:
        return spiral_conv3d_forward(x, self)


def spiral_conv3d_forward(x: Tensor, layer: SpiralConv3D) -> Tensor:
    if x.ndim != 4:
        raise DimensionError(f"expected B x V x T x C input, got shape {x.shape}")
    B, V, T, C = x.shape
    if V != layer.table.V:
        raise DimensionError(f"input has {V} vertices, spiral table has {layer.table.V}")
    if C != layer.c_in:
        raise DimensionError(f"input has {C} channels, layer expects {layer.c_in}")
    if layer.W.shape[0] != layer.delta * layer.L * layer.c_in:
        raise DimensionError(f"weight rows {layer.W.shape[0]} != delta*L*C_in")
    g = spiral_gather(x, layer.table, layer.delta, layer.replicate_pad)
    out = matmul(reshape(g, (B * V * T, g.shape[-1])), layer.W) + layer.b
    return reshape(out, (B, V, T, layer.c_out))
