"""Pure-numpy spiral gather / scatter-add, used when the compiled module is absent."""

import numpy as np


def _indices(V, T, spiral, delta, replicate):
    # vertex V and frame T address the zero row/frame appended to the input
    t_idx = np.arange(T)[:, None] - delta + 1 + np.arange(delta)[None, :]
    t_idx = np.where(t_idx < 0, 0 if replicate else T, t_idx)
    vi = spiral[:, None, None, :]           # V x 1 x 1 x L
    ti = t_idx[None, :, :, None]            # 1 x T x delta x 1
    return vi, ti


def spiral_gather(x, spiral, delta, replicate=False):
    B, V, T, C = x.shape
    L = spiral.shape[1]
    xp = np.zeros((B, V + 1, T + 1, C))
    xp[:, :V, :T] = x
    vi, ti = _indices(V, T, spiral, delta, replicate)
    out = xp[:, vi, ti, :]                  # B x V x T x delta x L x C
    return np.ascontiguousarray(out.reshape(B, V, T, delta * L * C))


def spiral_scatter(g, spiral, delta, C, replicate=False):
    B, V, T, _ = g.shape
    L = spiral.shape[1]
    gp = np.zeros((B, V + 1, T + 1, C))
    vi, ti = _indices(V, T, spiral, delta, replicate)
    vi, ti = np.broadcast_arrays(vi, ti)
    np.add.at(gp, (slice(None), vi, ti, slice(None)), g.reshape(B, V, T, delta, L, C))
    return np.ascontiguousarray(gp[:, :V, :T])
