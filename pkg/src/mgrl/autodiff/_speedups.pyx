# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled forward kernels.

Same contract as kernels_py: fresh C-contiguous float64 output, NonFiniteError
when a result contains NaN/Inf. The elementwise family (including the common
row/column/size-1 broadcasts), sigmoid and layer_normalize run as fused C
loops with the finite screen folded into the same pass.

The C loops pay off where per-call overhead dominates, so elementwise work on
arrays past a few thousand elements runs through numpy's runtime-dispatched
SIMD kernels instead (these portable loops compile against the baseline
instruction set), with only the finite screen done natively. The same split
covers tanh/exp/log at every size, and matmul, reductions, concat, slicing
and reshape wrap the corresponding numpy routine plus a native screen. Column
broadcasts, sigmoid and layer_normalize stay fused at every size — numpy
needs several temporaries for those and loses even on large arrays.

Everything except sigmoid and layer_normalize therefore matches the reference
backend bit for bit: the arithmetic loops are exact IEEE operations and the
rest share numpy's routines. Fused sigmoid uses libm exp and fused
layer_normalize accumulates row moments serially rather than pairwise, so
those two may drift from the reference by a few ULP.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp as c_exp
from libc.math cimport sqrt as c_sqrt

from ..errors import NonFiniteError
from . import kernels_py
from . import opcodes as oc

cnp.import_array()

NAME = "compiled"

# crossover (measured) between these loops and numpy's SIMD elementwise kernels
cdef Py_ssize_t _SMALL = 4096

cdef enum:
    OP_ADD = 0
    OP_SUB = 1
    OP_MUL = 2
    OP_DIV = 3
    OP_MATMUL = 4
    OP_CONCAT = 5
    OP_SLICE = 6
    OP_RESHAPE = 7
    OP_MEAN = 8
    OP_SUM = 9
    OP_TANH = 10
    OP_SIGMOID = 11
    OP_RELU = 12
    OP_SQUARE = 13
    OP_EXP = 14
    OP_LOG = 15
    OP_MIN = 16
    OP_CLIP = 17
    OP_SCALE = 18
    OP_LAYER_NORMALIZE = 19
    OP_STOP_GRADIENT = 20

# the enum mirrors the shared opcode table; fail loudly if they ever diverge
assert OP_ADD == oc.ADD and OP_SUB == oc.SUB and OP_MUL == oc.MUL
assert OP_DIV == oc.DIV and OP_MIN == oc.MIN and OP_TANH == oc.TANH
assert OP_SIGMOID == oc.SIGMOID and OP_RELU == oc.RELU and OP_SQUARE == oc.SQUARE
assert OP_EXP == oc.EXP and OP_LOG == oc.LOG and OP_CLIP == oc.CLIP
assert OP_SCALE == oc.SCALE and OP_LAYER_NORMALIZE == oc.LAYER_NORMALIZE
assert OP_STOP_GRADIENT == oc.STOP_GRADIENT
assert OP_MATMUL == oc.MATMUL and OP_CONCAT == oc.CONCAT and OP_SLICE == oc.SLICE
assert OP_RESHAPE == oc.RESHAPE and OP_MEAN == oc.MEAN and OP_SUM == oc.SUM

_NP_BINOP = {OP_ADD: np.add, OP_SUB: np.subtract, OP_MUL: np.multiply,
             OP_DIV: np.divide, OP_MIN: np.minimum}


cdef inline double _binop(int op, double x, double y) noexcept nogil:
    if op == OP_ADD:
        return x + y
    elif op == OP_SUB:
        return x - y
    elif op == OP_MUL:
        return x * y
    elif op == OP_DIV:
        return x / y
    # OP_MIN: propagate NaN from either side, like np.minimum
    if x != x:
        return x
    if y != y:
        return y
    return x if x < y else y


# Non-finiteness is flagged per element as (v - v) != 0, which is true exactly
# for NaN and ±Inf. Unlike a running-sum screen this is an OR-reduction with
# no serial FP dependency, so the loops still auto-vectorize.


cdef inline bint _nonfin(double v) noexcept nogil:
    return (v - v) != 0.0


cdef bint _ew_same(int op, const double* a, const double* b, double* o,
                   Py_ssize_t n) noexcept nogil:
    cdef Py_ssize_t i
    cdef double v
    cdef bint bad = False
    for i in range(n):
        v = _binop(op, a[i], b[i])
        o[i] = v
        bad = bad | _nonfin(v)
    return bad


cdef bint _ew_scalar(int op, const double* a, double s, double* o,
                     Py_ssize_t n, bint swapped) noexcept nogil:
    cdef Py_ssize_t i
    cdef double v
    cdef bint bad = False
    for i in range(n):
        v = _binop(op, s, a[i]) if swapped else _binop(op, a[i], s)
        o[i] = v
        bad = bad | _nonfin(v)
    return bad


cdef bint _ew_row(int op, const double* a, const double* vec, double* o,
                  Py_ssize_t rows, Py_ssize_t cols, bint swapped) noexcept nogil:
    # vec has `cols` entries and repeats along rows (bias-add pattern)
    cdef Py_ssize_t r, j, k = 0
    cdef double v
    cdef bint bad = False
    for r in range(rows):
        for j in range(cols):
            v = _binop(op, vec[j], a[k]) if swapped else _binop(op, a[k], vec[j])
            o[k] = v
            bad = bad | _nonfin(v)
            k += 1
    return bad


cdef bint _ew_col(int op, const double* a, const double* vec, double* o,
                  Py_ssize_t rows, Py_ssize_t cols, bint swapped) noexcept nogil:
    # vec has `rows` entries, one per row (keepdims reduction pattern)
    cdef Py_ssize_t r, j, k = 0
    cdef double s, v
    cdef bint bad = False
    for r in range(rows):
        s = vec[r]
        for j in range(cols):
            v = _binop(op, s, a[k]) if swapped else _binop(op, a[k], s)
            o[k] = v
            bad = bad | _nonfin(v)
            k += 1
    return bad


cdef bint _ew_unary(int op, const double* x, double* o, Py_ssize_t n,
                    double m0, double m1) noexcept nogil:
    # m0/m1 carry the clip bounds or the scale factor, unused otherwise
    cdef Py_ssize_t i
    cdef double t, v
    cdef bint bad = False
    for i in range(n):
        t = x[i]
        if op == OP_SIGMOID:
            v = 1.0 / (1.0 + c_exp(-t))
        elif op == OP_RELU:
            # t != t keeps NaN in place, matching np.maximum
            v = t if t > 0.0 or t != t else 0.0
        elif op == OP_SQUARE:
            v = t * t
        elif op == OP_CLIP:
            v = m0 if t < m0 else (m1 if t > m1 else t)
        else:  # OP_SCALE
            v = t * m0
        o[i] = v
        bad = bad | _nonfin(v)
    return bad


cdef bint _scan(const double* p, Py_ssize_t n) noexcept nogil:
    cdef Py_ssize_t i
    cdef bint bad = False
    for i in range(n):
        bad = bad | _nonfin(p[i])
    return bad


cdef bint _layernorm(const double* x, double* o, Py_ssize_t rows,
                     Py_ssize_t cols, double eps) noexcept nogil:
    cdef Py_ssize_t r, j, k
    cdef double mu, var, denom, d, v
    cdef bint bad = False
    for r in range(rows):
        k = r * cols
        mu = 0.0
        for j in range(cols):
            mu += x[k + j]
        mu /= cols
        var = 0.0
        for j in range(cols):
            d = x[k + j] - mu
            var += d * d
        var /= cols
        denom = c_sqrt(var + eps)
        for j in range(cols):
            v = (x[k + j] - mu) / denom
            o[k + j] = v
            bad = bad | _nonfin(v)
    return bad


cdef inline bint _canonical(object x):
    # the graph engine only ever hands kernels arrays in this form
    return (
        isinstance(x, np.ndarray)
        and cnp.PyArray_TYPE(<cnp.ndarray> x) == cnp.NPY_FLOAT64
        and cnp.PyArray_IS_C_CONTIGUOUS(<cnp.ndarray> x)
        and (<cnp.ndarray> x).ndim >= 1
    )


cdef inline bint _same_shape(cnp.ndarray a, cnp.ndarray b):
    cdef int i
    if a.ndim != b.ndim:
        return False
    for i in range(a.ndim):
        if a.shape[i] != b.shape[i]:
            return False
    return True


cdef inline const double* _data(cnp.ndarray x):
    return <const double*> cnp.PyArray_DATA(x)


cdef cnp.ndarray _screened(object res, int op):
    # canonicalize exactly like the reference backend, then screen natively
    cdef cnp.ndarray out = <cnp.ndarray> np.ascontiguousarray(res, dtype=np.float64)
    if _scan(_data(out), out.size):
        raise NonFiniteError(f"non-finite result from primitive '{oc.OP_LABELS[op]}'")
    return out


def forward(int op, vals, meta):
    cdef cnp.ndarray a, b, out
    cdef bint bad = False
    cdef double m0 = 0.0, m1 = 0.0
    cdef Py_ssize_t rows, cols

    if op == OP_STOP_GRADIENT:
        return vals[0]

    if (op <= OP_DIV or op == OP_MIN) and _canonical(vals[0]) and _canonical(vals[1]):
        a = <cnp.ndarray> vals[0]
        b = <cnp.ndarray> vals[1]
        if _same_shape(a, b) and a.size <= _SMALL:
            out = np.empty_like(a)
            bad = _ew_same(op, _data(a), _data(b), <double*> cnp.PyArray_DATA(out), a.size)
        elif op != OP_MIN and b.size == 1 and b.ndim <= a.ndim and a.size <= _SMALL:
            out = np.empty_like(a)
            bad = _ew_scalar(op, _data(a), _data(b)[0],
                             <double*> cnp.PyArray_DATA(out), a.size, False)
        elif op != OP_MIN and a.size == 1 and a.ndim <= b.ndim and b.size <= _SMALL:
            out = np.empty_like(b)
            bad = _ew_scalar(op, _data(b), _data(a)[0],
                             <double*> cnp.PyArray_DATA(out), b.size, True)
        elif (op != OP_MIN and a.ndim == 2 and b.ndim == 1
              and b.shape[0] == a.shape[1] and a.size <= _SMALL):
            out = np.empty_like(a)
            bad = _ew_row(op, _data(a), _data(b), <double*> cnp.PyArray_DATA(out),
                          a.shape[0], a.shape[1], False)
        elif (op != OP_MIN and b.ndim == 2 and a.ndim == 1
              and a.shape[0] == b.shape[1] and b.size <= _SMALL):
            out = np.empty_like(b)
            bad = _ew_row(op, _data(b), _data(a), <double*> cnp.PyArray_DATA(out),
                          b.shape[0], b.shape[1], True)
        elif (op != OP_MIN and a.ndim == 2 and b.ndim == 2
              and b.shape[0] == a.shape[0] and b.shape[1] == 1):
            out = np.empty_like(a)
            bad = _ew_col(op, _data(a), _data(b), <double*> cnp.PyArray_DATA(out),
                          a.shape[0], a.shape[1], False)
        elif (op != OP_MIN and b.ndim == 2 and a.ndim == 2
              and a.shape[0] == b.shape[0] and a.shape[1] == 1):
            out = np.empty_like(b)
            bad = _ew_col(op, _data(b), _data(a), <double*> cnp.PyArray_DATA(out),
                          b.shape[0], b.shape[1], True)
        else:
            # large or unusually broadcast operands: numpy's SIMD kernels
            with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
                res = _NP_BINOP[op](a, b)
            return _screened(res, op)
        if bad:
            raise NonFiniteError(
                f"non-finite result from primitive '{oc.OP_LABELS[op]}'"
            )
        return out

    if (op == OP_SIGMOID or op == OP_RELU or op == OP_SQUARE or op == OP_CLIP
            or op == OP_SCALE) and _canonical(vals[0]):
        a = <cnp.ndarray> vals[0]
        if op != OP_SIGMOID and a.size > _SMALL:
            if op == OP_RELU:
                res = np.maximum(a, 0.0)
            elif op == OP_CLIP:
                res = np.clip(a, meta[0], meta[1])
            else:
                with np.errstate(over="ignore", invalid="ignore"):
                    res = np.square(a) if op == OP_SQUARE else np.multiply(a, <double> meta)
            return _screened(res, op)
        if op == OP_CLIP:
            m0 = meta[0]
            m1 = meta[1]
        elif op == OP_SCALE:
            m0 = meta
        out = np.empty_like(a)
        bad = _ew_unary(op, _data(a), <double*> cnp.PyArray_DATA(out), a.size, m0, m1)
        if bad:
            raise NonFiniteError(
                f"non-finite result from primitive '{oc.OP_LABELS[op]}'"
            )
        return out

    if (op == OP_TANH or op == OP_EXP or op == OP_LOG) and _canonical(vals[0]):
        # numpy's vectorized math wins over a scalar libm loop at every size;
        # only the finite screen runs natively
        a = <cnp.ndarray> vals[0]
        if op == OP_TANH:
            out = np.tanh(a)
        elif op == OP_EXP:
            with np.errstate(over="ignore"):
                out = np.exp(a)
        else:
            with np.errstate(divide="ignore", invalid="ignore"):
                out = np.log(a)
        if _scan(_data(out), out.size):
            raise NonFiniteError(
                f"non-finite result from primitive '{oc.OP_LABELS[op]}'"
            )
        return out

    if op == OP_MATMUL:
        ta, tb = meta
        res = np.matmul(vals[0].T if ta else vals[0], vals[1].T if tb else vals[1])
        return _screened(res, op)

    if op == OP_CONCAT:
        return _screened(np.concatenate(vals, axis=meta), op)

    if op == OP_SLICE:
        index = (slice(None),) * meta[0] + (slice(meta[1], meta[2]),)
        return _screened(vals[0][index], op)

    if op == OP_RESHAPE:
        return _screened(vals[0].reshape(meta), op)

    if op == OP_MEAN or op == OP_SUM:
        if op == OP_MEAN:
            res = np.mean(vals[0], axis=meta[0], keepdims=meta[1])
        else:
            res = np.sum(vals[0], axis=meta[0], keepdims=meta[1])
        return _screened(res, op)

    if op == OP_LAYER_NORMALIZE and _canonical(vals[0]):
        a = <cnp.ndarray> vals[0]
        cols = a.shape[a.ndim - 1]
        if cols > 0:
            rows = a.size // cols
            out = np.empty_like(a)
            bad = _layernorm(_data(a), <double*> cnp.PyArray_DATA(out), rows, cols, meta)
            if bad:
                raise NonFiniteError(
                    f"non-finite result from primitive '{oc.OP_LABELS[op]}'"
                )
            return out

    return kernels_py.forward(op, vals, meta)
