"""Central finite-difference verification of tape gradients."""

from __future__ import annotations

import numpy as np

from .tensor import Tensor


def grad_check(f, tensors, eps=1e-5):
    """Max relative error between tape gradients and central differences.

    ``f`` maps the given tensors to a scalar Tensor.  Each tensor is
    perturbed coordinate-wise: (f(x+eps) - f(x-eps)) / (2 eps).
    """
    tensors = list(tensors)
    for t in tensors:
        t.requires_grad = True
        t.grad = None
    out = f(*tensors)
    out.backward()
    worst = 0.0
    for t in tensors:
        analytic = np.zeros_like(t.data) if t.grad is None else t.grad
        flat = t.data.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            hi = float(f(*tensors).data)
            flat[i] = orig - eps
            lo = float(f(*tensors).data)
            flat[i] = orig
            numeric = (hi - lo) / (2.0 * eps)
            a = analytic.reshape(-1)[i]
            err = abs(a - numeric) / max(1.0, abs(a), abs(numeric))
            worst = max(worst, err)
    return worst
