"""Central finite-difference gradient checking."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor, mul, no_grad, tsum


def numerical_grads(f: Callable[..., Tensor], inputs: Sequence[Tensor], weights: np.ndarray, h: float):
    grads = []
    with no_grad():
        for t in inputs:
            g = np.zeros(t.shape)
            flat = t.data.reshape(-1)
            gflat = g.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + h
                up = float((f(*inputs).data * weights).sum())
                flat[i] = orig - h
                down = float((f(*inputs).data * weights).sum())
                flat[i] = orig
                gflat[i] = (up - down) / (2 * h)
            grads.append(g)
    return grads


def max_relative_error(
    f: Callable[..., Tensor],
    inputs: Sequence[Tensor],
    h: float = 1e-5,
    seed: int = 0,
) -> float:
    """Worst norm-wise relative error between tape gradients and finite differences.

    Non-scalar outputs are reduced with a fixed random weighting so every
    output element contributes.
    """
    for t in inputs:
        t.requires_grad = True
        t.grad = None
    out = f(*inputs)
    weights = np.random.default_rng(seed).standard_normal(out.shape)
    tsum(mul(out, Tensor(weights))).backward()
    analytic = [t.grad if t.grad is not None else np.zeros(t.shape) for t in inputs]
    numeric = numerical_grads(f, inputs, weights, h)
    worst = 0.0
    for a, n in zip(analytic, numeric):
        scale = max(np.linalg.norm(a), np.linalg.norm(n))
        if scale < 1e-10:
            continue
        worst = max(worst, float(np.linalg.norm(a - n) / scale))
    return worst
