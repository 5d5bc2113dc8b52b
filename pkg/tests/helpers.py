"""Shared numerical oracles: central finite differences and error metrics."""

import numpy as np


def rel_err(a, b, floor=1e-12):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = max(np.linalg.norm(a.ravel()), np.linalg.norm(b.ravel()), floor)
    return np.linalg.norm((a - b).ravel()) / denom


def fd_grad(f, x, eps=1e-6):
    """Central-difference gradient of scalar f at array x."""
    x = np.asarray(x, dtype=np.float64)
    out = np.zeros_like(x)
    flat = out.ravel()
    for i in range(x.size):
        xp = x.copy()
        xm = x.copy()
        xp.ravel()[i] += eps
        xm.ravel()[i] -= eps
        flat[i] = (f(xp) - f(xm)) / (2.0 * eps)
    return out


def fd_grad_map(f, params, eps=1e-6):
    """Central differences of scalar f over a dict of named arrays."""
    grads = {}
    for name in params:
        def f_name(x, _name=name):
            trial = dict(params)
            trial[_name] = x
            return f(trial)
        grads[name] = fd_grad(f_name, params[name], eps)
    return grads
