"""
Central finite-difference gradient checks.
"""

import numpy as np

from .ops import DTYPE


def rel_error(analytic, numeric, floor=1e-5):
    """max |a - n| / max(|a| + |n|, floor)"""
    a = np.asarray(analytic, dtype=DTYPE)
    n = np.asarray(numeric, dtype=DTYPE)
    if a.size == 0:
        return 0.0
    return float(np.max(np.abs(a - n) / np.maximum(np.abs(a) + np.abs(n), floor)))


def numeric_grad(f, x, step=1e-5):
    """df/dx for scalar f() reading the array x in place"""
    grad = np.zeros_like(x, dtype=DTYPE)
    for ix in np.ndindex(x.shape):
        orig = x[ix]
        x[ix] = orig + step
        fp = f()
        x[ix] = orig - step
        fm = f()
        x[ix] = orig
        grad[ix] = (fp - fm) / (2 * step)
    return grad


def check_layer(layer, x, seed=0, step=1e-5):
    """
    Compare a layer's backward pass to finite differences of the scalar
    sum(w * layer.forward(x)) for a fixed random w. Returns
    {"input": err, <param>: err, ...}.
    """
    rng = np.random.default_rng(seed)
    x = np.array(x, dtype=DTYPE)
    y = layer.forward(x)
    w = rng.standard_normal(y.shape)

    def loss():
        return float(np.sum(w * layer.forward(x)))

    layer.forward(x)
    dx = layer.backward(w)
    grads = {k: v.copy() for k, v in layer.grads().items()}

    errors = {"input": rel_error(dx, numeric_grad(loss, x, step))}
    for key, value in layer.params().items():
        errors[key] = rel_error(grads[key], numeric_grad(loss, value, step))
    return errors
