"""Parameter registry and optimizers (AdamW, SGD) with per-group rates."""

from __future__ import annotations

import numpy as np

from .tensor import Tensor


class Parameters:
    """Named map of trainable tensors with freeze flags per group.

    A parameter's group is the first dotted component of its name
    (``"enc.0.self.wq" -> "enc"``) unless registered explicitly.
    """

    def __init__(self):
        self._params: dict[str, Tensor] = {}
        self._frozen: set[str] = set()
        self._group_lr: dict[str, float] = {}

    def register(self, name: str, tensor: Tensor) -> Tensor:
        if name in self._params:
            raise ValueError(f"duplicate parameter name: {name}")
        tensor.requires_grad = True
        tensor.name = name
        self._params[name] = tensor
        return tensor

    def group_of(self, name: str) -> str:
        return name.split(".", 1)[0]

    def freeze(self, group: str):
        self._frozen.add(group)
        for name, t in self._params.items():
            if self.group_of(name) == group:
                t.requires_grad = False

    def is_frozen(self, name: str) -> bool:
        return self.group_of(name) in self._frozen

    def set_group_lr(self, group: str, lr: float):
        self._group_lr[group] = float(lr)

    def group_lr(self, name: str, default: float) -> float:
        return self._group_lr.get(self.group_of(name), default)

    def items(self):
        return self._params.items()

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name):
        return name in self._params

    def __len__(self):
        return len(self._params)

    def zero_grad(self):
        for t in self._params.values():
            t.grad = None

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in self._params.items()}

    def load_arrays(self, arrays: dict[str, np.ndarray]):
        for name, t in self._params.items():
            if name not in arrays:
                raise KeyError(f"checkpoint missing parameter {name}")
            src = np.asarray(arrays[name], dtype=np.float64)
            if src.shape != t.shape:
                raise ValueError(f"shape mismatch for {name}: {src.shape} vs {t.shape}")
            t.data = src.copy()


class AdamW:
    def __init__(self, params: Parameters, lr=1e-4, betas=(0.9, 0.999),
                 eps=1e-8, weight_decay=1e-4):
        self.params = params
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.wd = weight_decay
        self.t = 0
        self.m = {name: np.zeros_like(p.data) for name, p in params.items()}
        self.v = {name: np.zeros_like(p.data) for name, p in params.items()}

    def step(self):
        self.t += 1
        bc1 = 1.0 - self.b1 ** self.t
        bc2 = 1.0 - self.b2 ** self.t
        for name, p in self.params.items():
            if self.params.is_frozen(name) or p.grad is None:
                continue
            lr = self.params.group_lr(name, self.lr)
            m = self.m[name]
            v = self.v[name]
            m *= self.b1
            m += (1.0 - self.b1) * p.grad
            v *= self.b2
            v += (1.0 - self.b2) * p.grad * p.grad
            p.data -= lr * self.wd * p.data
            p.data -= lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


class SGD:
    def __init__(self, params: Parameters, lr=1e-2):
        self.params = params
        self.lr = lr

    def step(self):
        for name, p in self.params.items():
            if self.params.is_frozen(name) or p.grad is None:
                continue
            p.data -= self.params.group_lr(name, self.lr) * p.grad


def clip_grad_norm(params: Parameters, max_norm: float) -> float:
    """Scale all gradients so their global L2 norm is at most max_norm;
    returns the pre-clip norm."""
    sq = 0.0
    grads = []
    for name, p in params.items():
        if p.grad is not None and not params.is_frozen(name):
            sq += float(np.sum(p.grad * p.grad))
            grads.append(p.grad)
    norm = float(np.sqrt(sq))
    if max_norm > 0 and norm > max_norm:
        factor = max_norm / norm
        for g in grads:
            g *= factor
    return norm
