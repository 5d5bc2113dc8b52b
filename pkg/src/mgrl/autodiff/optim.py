"""Gradient-map optimizers: global-norm clipping, Adam, and plain SGD.

These operate on finished gradients (name -> float64 array), outside any
graph. Updates are out-of-place: parameter dicts get fresh arrays, so graphs
holding the old arrays stay valid.
"""

import math

import numpy as np

from ..errors import NonFiniteError


def global_norm(grads):
    total = 0.0
    for g in grads.values():
        total += float(np.sum(np.square(g)))
    if not math.isfinite(total):
        raise NonFiniteError("non-finite gradient in global norm")
    return math.sqrt(total)


def clip_global_norm(grads, max_norm):
    """Rescale the whole map so its joint L2 norm is at most `max_norm`."""
    norm = global_norm(grads)
    if norm <= max_norm or norm == 0.0:
        return dict(grads), norm
    factor = max_norm / norm
    return {k: g * factor for k, g in grads.items()}, norm


class AdamState:
    """First/second moment accumulators keyed like the parameter dict."""

    def __init__(self, params, beta1=0.9, beta2=0.999, eps=1e-8):
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}


def adam_step(state, params, grads, lr):
    """One Adam update. Missing grad entries count as exact zeros."""
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    out = {}
    for name, p in params.items():
        g = grads.get(name)
        m = state.m[name]
        v = state.v[name]
        if g is None:
            m *= b1
            v *= b2
        else:
            if not np.isfinite(np.sum(g)):
                raise NonFiniteError(f"non-finite gradient for {name!r}")
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * np.square(g)
        out[name] = p - lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return out


def sgd_step(params, grads, lr):
    out = {}
    for name, p in params.items():
        g = grads.get(name)
        out[name] = p if g is None else p - lr * g
    return out
