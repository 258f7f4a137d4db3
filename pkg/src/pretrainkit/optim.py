"""Adam optimizer with bias correction, optional warmup, and global-norm clipping."""

import math

import numpy as np

from . import kernels
from .errors import ShapeError


class Adam:
    """Standard Adam over a named parameter map.

    State buffers m/v start at zero; the step counter t starts at 0 and
    increments by exactly 1 per step. lr=0 leaves parameters untouched.
    """

    def __init__(self, params, lr=1e-4, beta1=0.9, beta2=0.999, eps=1e-8,
                 warmup_steps=0):
        self.params = dict(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.warmup_steps = warmup_steps
        self.t = 0
        self.m = {n: np.zeros_like(p.data) for n, p in self.params.items()}
        self.v = {n: np.zeros_like(p.data) for n, p in self.params.items()}

    def current_lr(self):
        if self.warmup_steps > 0 and self.t < self.warmup_steps:
            return self.lr * (self.t + 1) / self.warmup_steps
        return self.lr

    def step(self):
        lr = self.current_lr()
        self.t += 1
        for name, p in self.params.items():
            if p.grad is None:
                continue
            if p.grad.shape != p.data.shape:
                raise ShapeError(
                    f"adam: grad shape {p.grad.shape} != param shape "
                    f"{p.data.shape} for {name}"
                )
            kernels.adam_update(
                p.data, p.grad, self.m[name], self.v[name],
                lr, self.beta1, self.beta2, self.eps, self.t,
            )

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def state_arrays(self):
        """Flat name->array view of the optimizer state, for checkpointing."""
        out = {}
        for name in self.params:
            out[f"{name}.m"] = self.m[name]
            out[f"{name}.v"] = self.v[name]
        return out

    def load_state_arrays(self, arrays, t):
        self.t = int(t)
        for name in self.params:
            m = arrays.get(f"{name}.m")
            v = arrays.get(f"{name}.v")
            if m is not None:
                self.m[name][...] = m
            if v is not None:
                self.v[name][...] = v


def global_grad_norm(params):
    total = 0.0
    for p in params:
        if p.grad is not None:
            total += float((p.grad * p.grad).sum())
    return math.sqrt(total)


def clip_global_norm(params, max_norm):
    """Scale all grads so their joint L2 norm is at most max_norm."""
    if max_norm <= 0:
        return 1.0
    norm = global_grad_norm(params)
    if norm > max_norm:
        factor = max_norm / norm
        for p in params:
            if p.grad is not None:
                p.grad *= factor
        return factor
    return 1.0
