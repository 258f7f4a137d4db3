"""Central finite-difference verification of tape gradients."""

import numpy as np

from .tensor import Tape, Tensor, sum_all


def finite_difference_check(op, inputs, h=1e-5):
    """Max relative error between tape gradients and central differences.

    op takes the given tensors positionally and returns a Tensor; non-scalar
    outputs are reduced to a scalar by summation. For every coordinate of
    every input the error is |analytic - (f(x+h) - f(x-h)) / 2h| divided by
    max(|analytic|, 1e-8); the max over all coordinates is returned.

    op must be deterministic (no dropout) for the two-sided evals to be
    comparable.
    """
    if isinstance(inputs, Tensor):
        inputs = [inputs]

    def run():
        out = op(*inputs)
        if out.data.ndim != 0:
            out = sum_all(out)
        return out

    for t in inputs:
        t.grad = None
    with Tape() as tape:
        loss = run()
        tape.backward(loss)
    analytic = [
        np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in inputs
    ]

    worst = 0.0
    for t, ana in zip(inputs, analytic):
        flat = t.data.reshape(-1)
        ana_flat = ana.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            hi = run().item()
            flat[i] = orig - h
            lo = run().item()
            flat[i] = orig
            fd = (hi - lo) / (2.0 * h)
            err = abs(ana_flat[i] - fd) / max(abs(ana_flat[i]), 1e-8)
            if err > worst:
                worst = err
    return worst
