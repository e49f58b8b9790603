from __future__ import annotations

import numpy as np


def numerical_gradients(loss_fn, params, h=1e-5):
    """Central finite differences of ``loss_fn()`` w.r.t. every entry of ``params``.

    ``params`` values are perturbed in place and restored.
    """
    grads = {}
    for key, p in params.items():
        g = np.zeros_like(p)
        flat = p.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = loss_fn()
            flat[i] = orig - h
            down = loss_fn()
            flat[i] = orig
            gflat[i] = (up - down) / (2.0 * h)
        grads[key] = g
    return grads


def max_relative_error(analytic, numeric, floor=1e-6):
    """Largest elementwise ``|a - n| / max(|a| + |n|, floor)`` across all parameters."""
    worst = 0.0
    for key in analytic:
        a = analytic[key]
        n = numeric[key]
        rel = np.abs(a - n) / np.maximum(np.abs(a) + np.abs(n), floor)
        worst = max(worst, float(rel.max(initial=0.0)))
    return worst


def check_model_gradients(model, X, Y, h=1e-5):
    """Compare ``model.loss_and_grads`` against finite differences; returns the max relative error."""
    _, analytic = model.loss_and_grads(X, Y)
    params = model.parameters()
    numeric = numerical_gradients(lambda: model.loss_and_grads(X, Y)[0], params, h=h)
    return max_relative_error(analytic, numeric)
