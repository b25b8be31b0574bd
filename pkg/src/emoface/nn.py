"""Parameter containers on top of the autodiff tensors."""

from __future__ import annotations

from collections import OrderedDict

import numpy as np

from .autodiff import Tensor, layer_norm, matmul


class Module:
    """Owns parameters and child modules in attribute-assignment order."""

    def __setattr__(self, name, value):
        if isinstance(value, (Tensor, Module)) and not name.startswith("_"):
            self.__dict__.setdefault("_children", OrderedDict())[name] = value
        object.__setattr__(self, name, value)

    def named_parameters(self, prefix: str = "") -> "OrderedDict[str, Tensor]":
        out: OrderedDict[str, Tensor] = OrderedDict()
        for name, child in self.__dict__.get("_children", {}).items():
            full = f"{prefix}{name}"
            if isinstance(child, Tensor):
                if child.requires_grad:
                    out[full] = child
            else:
                out.update(child.named_parameters(full + "."))
        return out

    def parameters(self) -> list[Tensor]:
        return list(self.named_parameters().values())

    def state_dict(self) -> "OrderedDict[str, np.ndarray]":
        return OrderedDict((k, v.data.copy()) for k, v in self.named_parameters().items())

    def load_state_dict(self, state) -> None:
        params = self.named_parameters()
        missing = [k for k in params if k not in state]
        if missing:
            raise KeyError(f"missing parameters: {missing[:5]}")
        for k, p in params.items():
            arr = np.asarray(state[k], dtype=np.float64)
            if arr.shape != p.shape:
                raise ValueError(f"parameter {k}: expected {p.shape}, got {arr.shape}")
            p.data[...] = arr


def param(arr) -> Tensor:
    return Tensor(np.array(arr, dtype=np.float64), requires_grad=True)


def uniform(rng: np.random.Generator, shape, fan_in: int) -> Tensor:
    bound = 1.0 / np.sqrt(fan_in)
    return param(rng.uniform(-bound, bound, size=shape))


class Linear(Module):
    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator, zero: bool = False):
        self.weight = param(np.zeros((n_in, n_out))) if zero else uniform(rng, (n_in, n_out), n_in)
        self.bias = param(np.zeros(n_out)) if zero else uniform(rng, (n_out,), n_in)

    def __call__(self, x: Tensor) -> Tensor:
        return matmul(x, self.weight) + self.bias


class LayerNorm(Module):
    def __init__(self, dim: int):
        self.gamma = param(np.ones(dim))
        self.beta = param(np.zeros(dim))

    def __call__(self, x: Tensor) -> Tensor:
        return layer_norm(x, self.gamma, self.beta)
