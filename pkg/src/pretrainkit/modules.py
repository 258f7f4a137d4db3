"""Parameter-owning building blocks and hierarchical parameter naming."""

import numpy as np

from .tensor import Tensor, add, layer_norm, matmul


class Initializer:
    """Deterministic parameter initialization from a single seeded rng.

    Parameters are drawn in module-construction order, so the same spec and
    seed always produce identical initial values.
    """

    def __init__(self, seed, std=0.02):
        self.rng = np.random.default_rng(seed)
        self.std = std

    def normal(self, *shape):
        return Tensor(self.rng.normal(0.0, self.std, shape),
                      requires_grad=True, is_param=True)

    def zeros(self, *shape):
        return Tensor(np.zeros(shape), requires_grad=True, is_param=True)

    def ones(self, *shape):
        return Tensor(np.ones(shape), requires_grad=True, is_param=True)


class Module:
    """Base for anything that owns parameters.

    Parameters are discovered by walking instance attributes in insertion
    order: Tensors with requires_grad become parameters, sub-Modules and
    lists of sub-Modules recurse. Names join with dots, list entries by
    index (``encoder.0.layer.3.attn.q.w``).
    """

    def named_parameters(self, prefix=""):
        for name, value in vars(self).items():
            if name.startswith("_"):
                continue
            full = f"{prefix}{name}"
            if isinstance(value, Tensor):
                if value.is_param:
                    yield full, value
            elif isinstance(value, Module):
                yield from value.named_parameters(f"{full}.")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{full}.{i}.")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def trainable_parameters(self):
        """Name->Tensor map of parameters that still require gradients."""
        return {n: p for n, p in self.named_parameters() if p.requires_grad}

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def parameter_count(self):
        return sum(p.data.size for p in self.parameters())


class Linear(Module):
    """y = x @ w + b with w (d_in, d_out)."""

    def __init__(self, d_in, d_out, init, bias=True):
        self.w = init.normal(d_in, d_out)
        self.b = init.zeros(d_out) if bias else None

    def __call__(self, x):
        y = matmul(x, self.w)
        if self.b is not None:
            y = add(y, self.b)
        return y


class LayerNorm(Module):
    def __init__(self, width, init, eps=1e-5):
        self.gamma = init.ones(width)
        self.beta = init.zeros(width)
        self._eps = eps

    def __call__(self, x):
        return layer_norm(x, self.gamma, self.beta, self._eps)
