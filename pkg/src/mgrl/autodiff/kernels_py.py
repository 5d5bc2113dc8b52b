"""Pure-numpy forward kernels.

Reference implementation of the primitive table; the compiled backend in
_speedups.pyx mirrors these semantics exactly. Every kernel returns a fresh
C-contiguous float64 array and raises NonFiniteError if the result contains
NaN/Inf.
"""

import math

import numpy as np

from ..errors import NonFiniteError
from . import opcodes as oc

NAME = "python"


def _checked(out, op):
    # cheap screen: any NaN/Inf in `out` makes the sum non-finite
    if not math.isfinite(float(out.sum())):
        if not np.isfinite(out).all():
            raise NonFiniteError(f"non-finite result from primitive '{oc.OP_LABELS[op]}'")
    return np.ascontiguousarray(out)


def forward(op, vals, meta):
    # _checked screens every result, so numpy's own fp warnings are redundant
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        return _dispatch(op, vals, meta)


def _dispatch(op, vals, meta):
    if op == oc.ADD:
        out = vals[0] + vals[1]
    elif op == oc.SUB:
        out = vals[0] - vals[1]
    elif op == oc.MUL:
        out = vals[0] * vals[1]
    elif op == oc.DIV:
        out = vals[0] / vals[1]
    elif op == oc.MATMUL:
        a, b = vals
        ta, tb = meta
        out = np.matmul(a.T if ta else a, b.T if tb else b)
    elif op == oc.CONCAT:
        out = np.concatenate(vals, axis=meta)
    elif op == oc.SLICE:
        axis, start, stop = meta
        index = (slice(None),) * axis + (slice(start, stop),)
        out = vals[0][index]
    elif op == oc.RESHAPE:
        out = vals[0].reshape(meta)
    elif op == oc.MEAN:
        axis, keepdims = meta
        out = np.mean(vals[0], axis=axis, keepdims=keepdims)
    elif op == oc.SUM:
        axis, keepdims = meta
        out = np.sum(vals[0], axis=axis, keepdims=keepdims)
    elif op == oc.TANH:
        out = np.tanh(vals[0])
    elif op == oc.SIGMOID:
        out = 1.0 / (1.0 + np.exp(-vals[0]))
    elif op == oc.RELU:
        out = np.maximum(vals[0], 0.0)
    elif op == oc.SQUARE:
        out = np.square(vals[0])
    elif op == oc.EXP:
        out = np.exp(vals[0])
    elif op == oc.LOG:
        out = np.log(vals[0])
    elif op == oc.MIN:
        out = np.minimum(vals[0], vals[1])
    elif op == oc.CLIP:
        out = np.clip(vals[0], meta[0], meta[1])
    elif op == oc.SCALE:
        out = vals[0] * meta
    elif op == oc.LAYER_NORMALIZE:
        x = vals[0]
        mu = np.mean(x, axis=-1, keepdims=True)
        xc = x - mu
        var = np.mean(np.square(xc), axis=-1, keepdims=True)
        out = xc / np.sqrt(var + meta)
    elif op == oc.STOP_GRADIENT:
        return vals[0]
    else:
        raise ValueError(f"unknown primitive opcode {op}")
    out = np.asarray(out, dtype=np.float64)
    return _checked(out, op)
