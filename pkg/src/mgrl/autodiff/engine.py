"""Taped reverse-mode autodiff over float64 numpy arrays.

Evaluation is eager: applying a primitive computes its value immediately and
appends a node to an append-only graph. `backward` walks the tape and builds
each adjoint out of the same primitive set, recording those applications on
the same graph — so a recorded backward pass is itself differentiable, which
is all that is needed for gradients of gradients (`second_order_grad`).

A "tensor" throughout is a C-contiguous float64 ndarray; `Node` couples one
with its provenance. Parameters are named leaf nodes; gradients come back as
a mapping from parameter name to node (missing name == zero gradient).
"""

import heapq

import numpy as np

from ..errors import NonFiniteError, ShapeError
from . import backend
from . import opcodes as oc


def as_tensor(value):
    """Coerce to the canonical array form (float64, C-contiguous)."""
    return np.ascontiguousarray(value, dtype=np.float64)


class Node:
    __slots__ = ("id", "op", "inputs", "value", "meta", "name", "requires")

    def __init__(self, nid, op, inputs, value, meta, name, requires):
        self.id = nid
        self.op = op
        self.inputs = inputs
        self.value = value
        self.meta = meta
        self.name = name
        self.requires = requires

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"<Node {self.id} {oc.OP_LABELS[self.op]} {self.value.shape}>"


class Graph:
    """Append-only computation tape.

    Parameter nodes are cached by name: binding the same name twice returns
    the original node, so adjoint accumulation never splits across duplicates.
    """

    def __init__(self, backend_name=None):
        self.nodes = []
        self._params = {}
        self._fwd = backend.forward_fn(backend_name)
        self._ones = {}

    def __len__(self):
        return len(self.nodes)

    # -- leaves ------------------------------------------------------------

    def constant(self, value):
        node = Node(len(self.nodes), oc.CONSTANT, (), as_tensor(value), None, None, False)
        self.nodes.append(node)
        return node

    def parameter(self, name, value):
        cached = self._params.get(name)
        if cached is not None:
            if cached.value is not value and not np.array_equal(cached.value, value):
                raise ValueError(f"parameter {name!r} already bound with a different value")
            return cached
        node = Node(len(self.nodes), oc.PARAMETER, (), as_tensor(value), None, name, True)
        self.nodes.append(node)
        self._params[name] = node
        return node

    def ones(self, shape):
        # shared broadcast helpers for derivative rules
        node = self._ones.get(shape)
        if node is None:
            node = self.constant(np.ones(shape))
            self._ones[shape] = node
        return node

    # -- recording ---------------------------------------------------------

    def _record(self, op, inputs, meta):
        vals = [n.value for n in inputs]
        try:
            out = self._fwd(op, vals, meta)
        except NonFiniteError:
            raise
        except (ValueError, TypeError) as exc:
            raise ShapeError(f"{oc.OP_LABELS[op]}: {exc}") from exc
        requires = False
        if op != oc.STOP_GRADIENT:
            for n in inputs:
                if n.requires:
                    requires = True
                    break
        node = Node(len(self.nodes), op, inputs, out, meta, None, requires)
        self.nodes.append(node)
        return node

    def add(self, a, b):
        return self._record(oc.ADD, (a, b), None)

    def sub(self, a, b):
        return self._record(oc.SUB, (a, b), None)

    def mul(self, a, b):
        return self._record(oc.MUL, (a, b), None)

    def div(self, a, b):
        return self._record(oc.DIV, (a, b), None)

    def matmul(self, a, b, transpose_a=False, transpose_b=False):
        if a.value.ndim != 2 or b.value.ndim != 2:
            raise ShapeError(
                f"matmul expects rank-2 operands, got {a.value.shape} and {b.value.shape}"
            )
        ka = a.value.shape[0] if transpose_a else a.value.shape[1]
        kb = b.value.shape[1] if transpose_b else b.value.shape[0]
        if ka != kb:
            raise ShapeError(f"matmul inner dims {ka} != {kb}")
        return self._record(oc.MATMUL, (a, b), (transpose_a, transpose_b))

    def concat(self, parts, axis):
        return self._record(oc.CONCAT, tuple(parts), axis)

    def slice(self, a, axis, start, stop):
        shape = a.value.shape
        if not 0 <= axis < len(shape):
            raise ShapeError(f"slice axis {axis} out of range for {shape}")
        if not 0 <= start < stop <= shape[axis]:
            raise ShapeError(f"slice [{start}:{stop}] out of range for {shape} axis {axis}")
        return self._record(oc.SLICE, (a,), (axis, start, stop))

    def reshape(self, a, shape):
        shape = tuple(int(d) for d in shape)
        return self._record(oc.RESHAPE, (a,), shape)

    def mean(self, a, axis=None, keepdims=False):
        return self._record(oc.MEAN, (a,), (axis, keepdims))

    def sum(self, a, axis=None, keepdims=False):
        return self._record(oc.SUM, (a,), (axis, keepdims))

    def tanh(self, a):
        return self._record(oc.TANH, (a,), None)

    def sigmoid(self, a):
        return self._record(oc.SIGMOID, (a,), None)

    def relu(self, a):
        return self._record(oc.RELU, (a,), None)

    def square(self, a):
        return self._record(oc.SQUARE, (a,), None)

    def exp(self, a):
        return self._record(oc.EXP, (a,), None)

    def log(self, a):
        return self._record(oc.LOG, (a,), None)

    def minimum(self, a, b):
        if a.value.shape != b.value.shape:
            raise ShapeError(f"min expects equal shapes, got {a.value.shape}, {b.value.shape}")
        return self._record(oc.MIN, (a, b), None)

    def clip(self, a, lo, hi):
        if not lo <= hi:
            raise ShapeError(f"clip bounds inverted: [{lo}, {hi}]")
        return self._record(oc.CLIP, (a,), (float(lo), float(hi)))

    def scale(self, a, factor):
        return self._record(oc.SCALE, (a,), float(factor))

    def layer_normalize(self, a, eps=1e-5):
        if a.value.ndim < 1 or a.value.shape[-1] < 1:
            raise ShapeError(f"layer_normalize needs a non-empty last axis, got {a.value.shape}")
        return self._record(oc.LAYER_NORMALIZE, (a,), float(eps))

    def stop_gradient(self, a):
        return self._record(oc.STOP_GRADIENT, (a,), None)


def apply_primitive(graph, kind, inputs, **meta):
    """Generic entry point: apply primitive `kind` (by name) to input nodes."""
    if kind not in oc.PRIMITIVE_NAMES:
        raise ValueError(f"unknown primitive kind {kind!r}")
    if kind == "concat":
        return graph.concat(inputs, **meta)
    if kind == "min":
        return graph.minimum(*inputs, **meta)
    method = getattr(graph, kind)
    return method(*inputs, **meta)


# -- derivative rules -------------------------------------------------------
#
# Each rule receives the upstream adjoint `g` (same shape as the node) and
# returns one contribution per input, built via graph primitives so that the
# backward pass is itself recorded and differentiable. `wants[i]` is False
# when input i is known not to reach any requested parameter; rules may skip
# that work.


def _reduce_to(gph, g, shape):
    # inverse of numpy broadcasting: fold g back down to `shape`
    gshape = g.value.shape
    if gshape == shape:
        return g
    extra = len(gshape) - len(shape)
    for _ in range(extra):
        g = gph.sum(g, axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and g.value.shape[axis] != 1:
            g = gph.sum(g, axis=axis, keepdims=True)
    if g.value.shape != shape:
        g = gph.reshape(g, shape)
    return g


def _vjp_add(gph, node, g, wants):
    a, b = node.inputs
    return (
        _reduce_to(gph, g, a.value.shape) if wants[0] else None,
        _reduce_to(gph, g, b.value.shape) if wants[1] else None,
    )


def _vjp_sub(gph, node, g, wants):
    a, b = node.inputs
    da = _reduce_to(gph, g, a.value.shape) if wants[0] else None
    db = _reduce_to(gph, gph.scale(g, -1.0), b.value.shape) if wants[1] else None
    return da, db


def _vjp_mul(gph, node, g, wants):
    a, b = node.inputs
    da = _reduce_to(gph, gph.mul(g, b), a.value.shape) if wants[0] else None
    db = _reduce_to(gph, gph.mul(g, a), b.value.shape) if wants[1] else None
    return da, db


def _vjp_div(gph, node, g, wants):
    a, b = node.inputs
    da = _reduce_to(gph, gph.div(g, b), a.value.shape) if wants[0] else None
    db = None
    if wants[1]:
        db = _reduce_to(gph, gph.scale(gph.mul(g, gph.div(node, b)), -1.0), b.value.shape)
    return da, db


def _vjp_matmul(gph, node, g, wants):
    a, b = node.inputs
    ta, tb = node.meta
    da = db = None
    if not ta and not tb:
        if wants[0]:
            da = gph.matmul(g, b, transpose_b=True)
        if wants[1]:
            db = gph.matmul(a, g, transpose_a=True)
    elif ta and not tb:
        if wants[0]:
            da = gph.matmul(b, g, transpose_b=True)
        if wants[1]:
            db = gph.matmul(a, g)
    elif not ta and tb:
        if wants[0]:
            da = gph.matmul(g, b)
        if wants[1]:
            db = gph.matmul(g, a, transpose_a=True)
    else:
        if wants[0]:
            da = gph.matmul(b, g, transpose_a=True, transpose_b=True)
        if wants[1]:
            db = gph.matmul(g, a, transpose_a=True, transpose_b=True)
    return da, db


def _vjp_concat(gph, node, g, wants):
    axis = node.meta
    out = []
    offset = 0
    for want, inp in zip(wants, node.inputs):
        dim = inp.value.shape[axis]
        out.append(gph.slice(g, axis, offset, offset + dim) if want else None)
        offset += dim
    return tuple(out)


def _vjp_slice(gph, node, g, wants):
    (a,) = node.inputs
    axis, start, stop = node.meta
    shape = list(a.value.shape)
    parts = []
    if start > 0:
        before = shape.copy()
        before[axis] = start
        parts.append(gph.constant(np.zeros(before)))
    parts.append(g)
    if stop < a.value.shape[axis]:
        after = shape.copy()
        after[axis] = a.value.shape[axis] - stop
        parts.append(gph.constant(np.zeros(after)))
    if len(parts) == 1:
        return (g,)
    return (gph.concat(parts, axis),)


def _vjp_reshape(gph, node, g, wants):
    return (gph.reshape(g, node.inputs[0].value.shape),)


def _unreduce(gph, node, g, inverse_count):
    (a,) = node.inputs
    axis, keepdims = node.meta
    if axis is not None and not keepdims:
        shp = list(a.value.shape)
        shp[axis] = 1
        g = gph.reshape(g, tuple(shp))
    if inverse_count != 1:
        g = gph.scale(g, 1.0 / inverse_count)
    return gph.mul(gph.ones(a.value.shape), g)


def _vjp_mean(gph, node, g, wants):
    (a,) = node.inputs
    axis, _ = node.meta
    count = a.value.size if axis is None else a.value.shape[axis]
    return (_unreduce(gph, node, g, count),)


def _vjp_sum(gph, node, g, wants):
    return (_unreduce(gph, node, g, 1),)


def _vjp_tanh(gph, node, g, wants):
    one = gph.ones(())
    return (gph.mul(g, gph.sub(one, gph.square(node))),)


def _vjp_sigmoid(gph, node, g, wants):
    one = gph.ones(())
    return (gph.mul(g, gph.mul(node, gph.sub(one, node))),)


def _vjp_relu(gph, node, g, wants):
    mask = gph.constant(np.greater(node.inputs[0].value, 0.0).astype(np.float64))
    return (gph.mul(g, mask),)


def _vjp_square(gph, node, g, wants):
    return (gph.mul(g, gph.scale(node.inputs[0], 2.0)),)


def _vjp_exp(gph, node, g, wants):
    return (gph.mul(g, node),)


def _vjp_log(gph, node, g, wants):
    return (gph.div(g, node.inputs[0]),)


def _vjp_min(gph, node, g, wants):
    a, b = node.inputs
    # subgradient flows to the attaining argument; ties go to the first
    take_a = np.less_equal(a.value, b.value).astype(np.float64)
    da = gph.mul(g, gph.constant(take_a)) if wants[0] else None
    db = gph.mul(g, gph.constant(1.0 - take_a)) if wants[1] else None
    return da, db


def _vjp_clip(gph, node, g, wants):
    lo, hi = node.meta
    x = node.inputs[0].value
    mask = ((x >= lo) & (x <= hi)).astype(np.float64)
    return (gph.mul(g, gph.constant(mask)),)


def _vjp_scale(gph, node, g, wants):
    return (gph.scale(g, node.meta),)


def _vjp_layer_normalize(gph, node, g, wants):
    (x,) = node.inputs
    eps = gph.constant(node.meta)
    mu = gph.mean(x, axis=-1, keepdims=True)
    var = gph.mean(gph.square(gph.sub(x, mu)), axis=-1, keepdims=True)
    inv = gph.exp(gph.scale(gph.log(gph.add(var, eps)), -0.5))
    g_mean = gph.mean(g, axis=-1, keepdims=True)
    gy_mean = gph.mean(gph.mul(g, node), axis=-1, keepdims=True)
    dx = gph.mul(inv, gph.sub(gph.sub(g, g_mean), gph.mul(node, gy_mean)))
    return (dx,)


_VJP = {
    oc.ADD: _vjp_add,
    oc.SUB: _vjp_sub,
    oc.MUL: _vjp_mul,
    oc.DIV: _vjp_div,
    oc.MATMUL: _vjp_matmul,
    oc.CONCAT: _vjp_concat,
    oc.SLICE: _vjp_slice,
    oc.RESHAPE: _vjp_reshape,
    oc.MEAN: _vjp_mean,
    oc.SUM: _vjp_sum,
    oc.TANH: _vjp_tanh,
    oc.SIGMOID: _vjp_sigmoid,
    oc.RELU: _vjp_relu,
    oc.SQUARE: _vjp_square,
    oc.EXP: _vjp_exp,
    oc.LOG: _vjp_log,
    oc.MIN: _vjp_min,
    oc.CLIP: _vjp_clip,
    oc.SCALE: _vjp_scale,
    oc.LAYER_NORMALIZE: _vjp_layer_normalize,
}


# -- unrecorded derivative rules ----------------------------------------------
#
# Plain-numpy mirrors of the rules above, used only by backward(record=False).
# Each one replays its composed counterpart's kernel sequence verbatim (same
# operations, same order), so the resulting adjoints are bit-identical to the
# recorded ones; they exist purely to skip per-node bookkeeping on the hot
# first-order training path. A rule here must change in lockstep with its
# recorded twin — the recorded-vs-unrecorded equality test pins that.


def _fast_reduce_to(g, shape):
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    for _ in range(extra):
        g = np.sum(g, axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and g.shape[axis] != 1:
            g = np.sum(g, axis=axis, keepdims=True)
    if g.shape != shape:
        g = g.reshape(shape)
    return g


def _fvjp_add(node, g, wants):
    a, b = node.inputs
    return (
        _fast_reduce_to(g, a.value.shape) if wants[0] else None,
        _fast_reduce_to(g, b.value.shape) if wants[1] else None,
    )


def _fvjp_sub(node, g, wants):
    a, b = node.inputs
    da = _fast_reduce_to(g, a.value.shape) if wants[0] else None
    db = _fast_reduce_to(g * -1.0, b.value.shape) if wants[1] else None
    return da, db


def _fvjp_mul(node, g, wants):
    a, b = node.inputs
    da = _fast_reduce_to(g * b.value, a.value.shape) if wants[0] else None
    db = _fast_reduce_to(g * a.value, b.value.shape) if wants[1] else None
    return da, db


def _fvjp_div(node, g, wants):
    a, b = node.inputs
    da = _fast_reduce_to(g / b.value, a.value.shape) if wants[0] else None
    db = None
    if wants[1]:
        db = _fast_reduce_to((g * (node.value / b.value)) * -1.0, b.value.shape)
    return da, db


def _fvjp_matmul(node, g, wants):
    a, b = node.inputs
    ta, tb = node.meta
    da = db = None
    if not ta and not tb:
        da = np.matmul(g, b.value.T) if wants[0] else None
        db = np.matmul(a.value.T, g) if wants[1] else None
    elif ta and not tb:
        da = np.matmul(b.value, g.T) if wants[0] else None
        db = np.matmul(a.value, g) if wants[1] else None
    elif not ta and tb:
        da = np.matmul(g, b.value) if wants[0] else None
        db = np.matmul(g.T, a.value) if wants[1] else None
    else:
        da = np.matmul(b.value.T, g.T) if wants[0] else None
        db = np.matmul(g.T, a.value.T) if wants[1] else None
    return da, db


def _fvjp_concat(node, g, wants):
    axis = node.meta
    head = (slice(None),) * axis
    out = []
    offset = 0
    for want, inp in zip(wants, node.inputs):
        dim = inp.value.shape[axis]
        out.append(g[head + (slice(offset, offset + dim),)] if want else None)
        offset += dim
    return tuple(out)


def _fvjp_slice(node, g, wants):
    (a,) = node.inputs
    axis, start, stop = node.meta
    if (start, stop) == (0, a.value.shape[axis]):
        return (g,)
    out = np.zeros(a.value.shape)
    out[(slice(None),) * axis + (slice(start, stop),)] = g
    return (out,)


def _fvjp_reshape(node, g, wants):
    return (g.reshape(node.inputs[0].value.shape),)


def _fast_unreduce(node, g, inverse_count):
    (a,) = node.inputs
    axis, keepdims = node.meta
    if axis is not None and not keepdims:
        shp = list(a.value.shape)
        shp[axis] = 1
        g = g.reshape(tuple(shp))
    if inverse_count != 1:
        g = g * (1.0 / inverse_count)
    return np.broadcast_to(g, a.value.shape)


def _fvjp_mean(node, g, wants):
    (a,) = node.inputs
    axis, _ = node.meta
    count = a.value.size if axis is None else a.value.shape[axis]
    return (_fast_unreduce(node, g, count),)


def _fvjp_sum(node, g, wants):
    return (_fast_unreduce(node, g, 1),)


def _fvjp_tanh(node, g, wants):
    return (g * (1.0 - np.square(node.value)),)


def _fvjp_sigmoid(node, g, wants):
    return (g * (node.value * (1.0 - node.value)),)


def _fvjp_relu(node, g, wants):
    return (g * np.greater(node.inputs[0].value, 0.0).astype(np.float64),)


def _fvjp_square(node, g, wants):
    return (g * (node.inputs[0].value * 2.0),)


def _fvjp_exp(node, g, wants):
    return (g * node.value,)


def _fvjp_log(node, g, wants):
    return (g / node.inputs[0].value,)


def _fvjp_min(node, g, wants):
    a, b = node.inputs
    take_a = np.less_equal(a.value, b.value).astype(np.float64)
    da = g * take_a if wants[0] else None
    db = g * (1.0 - take_a) if wants[1] else None
    return da, db


def _fvjp_clip(node, g, wants):
    lo, hi = node.meta
    x = node.inputs[0].value
    return (g * ((x >= lo) & (x <= hi)).astype(np.float64),)


def _fvjp_scale(node, g, wants):
    return (g * node.meta,)


def _fvjp_layer_normalize(node, g, wants):
    (x,) = node.inputs
    mu = np.mean(x.value, axis=-1, keepdims=True)
    var = np.mean(np.square(x.value - mu), axis=-1, keepdims=True)
    inv = np.exp(np.log(var + node.meta) * -0.5)
    g_mean = np.mean(g, axis=-1, keepdims=True)
    gy_mean = np.mean(g * node.value, axis=-1, keepdims=True)
    return (inv * ((g - g_mean) - node.value * gy_mean),)


_VJP_FAST = {
    oc.ADD: _fvjp_add,
    oc.SUB: _fvjp_sub,
    oc.MUL: _fvjp_mul,
    oc.DIV: _fvjp_div,
    oc.MATMUL: _fvjp_matmul,
    oc.CONCAT: _fvjp_concat,
    oc.SLICE: _fvjp_slice,
    oc.RESHAPE: _fvjp_reshape,
    oc.MEAN: _fvjp_mean,
    oc.SUM: _fvjp_sum,
    oc.TANH: _fvjp_tanh,
    oc.SIGMOID: _fvjp_sigmoid,
    oc.RELU: _fvjp_relu,
    oc.SQUARE: _fvjp_square,
    oc.EXP: _fvjp_exp,
    oc.LOG: _fvjp_log,
    oc.MIN: _fvjp_min,
    oc.CLIP: _fvjp_clip,
    oc.SCALE: _fvjp_scale,
    oc.LAYER_NORMALIZE: _fvjp_layer_normalize,
}


class _EvalNode:
    """Value carrier for unrecorded adjoints; never lives on a tape."""

    __slots__ = ("value",)
    id = -1

    def __init__(self, value):
        self.value = value


class _EvalOps:
    """Graph-shaped evaluator that computes without recording.

    Exposes exactly the method surface the derivative rules use and feeds the
    same kernel backend, so values built through it are bit-identical to
    recorded ones — they just cannot be differentiated again. Used as the
    unrecorded-backward fallback for any primitive missing from _VJP_FAST.
    Shape validation is skipped: every adjoint shape was already proven by
    the recorded forward pass.
    """

    def __init__(self, fwd):
        self._fwd = fwd
        self._ones = {}

    def constant(self, value):
        return _EvalNode(as_tensor(value))

    def ones(self, shape):
        node = self._ones.get(shape)
        if node is None:
            node = self.constant(np.ones(shape))
            self._ones[shape] = node
        return node

    def _apply(self, op, inputs, meta):
        return _EvalNode(self._fwd(op, [n.value for n in inputs], meta))

    def add(self, a, b):
        return self._apply(oc.ADD, (a, b), None)

    def sub(self, a, b):
        return self._apply(oc.SUB, (a, b), None)

    def mul(self, a, b):
        return self._apply(oc.MUL, (a, b), None)

    def div(self, a, b):
        return self._apply(oc.DIV, (a, b), None)

    def matmul(self, a, b, transpose_a=False, transpose_b=False):
        return self._apply(oc.MATMUL, (a, b), (transpose_a, transpose_b))

    def concat(self, parts, axis):
        return self._apply(oc.CONCAT, tuple(parts), axis)

    def slice(self, a, axis, start, stop):
        return self._apply(oc.SLICE, (a,), (axis, start, stop))

    def reshape(self, a, shape):
        return self._apply(oc.RESHAPE, (a,), tuple(int(d) for d in shape))

    def mean(self, a, axis=None, keepdims=False):
        return self._apply(oc.MEAN, (a,), (axis, keepdims))

    def sum(self, a, axis=None, keepdims=False):
        return self._apply(oc.SUM, (a,), (axis, keepdims))

    def tanh(self, a):
        return self._apply(oc.TANH, (a,), None)

    def sigmoid(self, a):
        return self._apply(oc.SIGMOID, (a,), None)

    def relu(self, a):
        return self._apply(oc.RELU, (a,), None)

    def square(self, a):
        return self._apply(oc.SQUARE, (a,), None)

    def exp(self, a):
        return self._apply(oc.EXP, (a,), None)

    def log(self, a):
        return self._apply(oc.LOG, (a,), None)

    def minimum(self, a, b):
        return self._apply(oc.MIN, (a, b), None)

    def clip(self, a, lo, hi):
        return self._apply(oc.CLIP, (a,), (float(lo), float(hi)))

    def scale(self, a, factor):
        return self._apply(oc.SCALE, (a,), float(factor))

    def layer_normalize(self, a, eps=1e-5):
        return self._apply(oc.LAYER_NORMALIZE, (a,), float(eps))


def backward(graph, output, wrt, record=True):
    """Reverse-mode gradients of scalar `output` w.r.t. named parameters.

    Returns {name: Node}; a name that is absent has exact zero gradient. By
    default the adjoint computation is appended to `graph`, so any returned
    node can be fed onward and differentiated again. With record=False the
    adjoints are evaluated through unrecorded mirrors of the same rules —
    bit-identical values at a fraction of the bookkeeping, for the common
    case of a plain first-order training step; non-finite detection then
    happens per returned gradient instead of per intermediate.
    """
    wrt = tuple(wrt)
    unknown = [n for n in wrt if n not in graph._params]
    if unknown:
        raise ValueError(f"unknown parameter name(s) {unknown!r}")
    if output.value.size != 1:
        raise ValueError(f"backward needs a scalar output, got shape {output.value.shape}")

    nodes = graph.nodes
    wrtset = frozenset(wrt)
    # need[i]: node i is reachable from a requested parameter (so its adjoint
    # is worth building); stop_gradient and constant subgraphs drop out here
    need = [False] * (output.id + 1)
    for nid in range(output.id + 1):
        n = nodes[nid]
        if n.op == oc.PARAMETER:
            need[nid] = n.name in wrtset
        elif n.requires and n.op != oc.STOP_GRADIENT:
            for i in n.inputs:
                if need[i.id]:
                    need[nid] = True
                    break
    if not need[output.id]:
        return {}

    if not record:
        return _backward_unrecorded(graph, output, need)

    adjoint = {output.id: graph.constant(np.ones_like(output.value))}
    pending = [-output.id]
    grads = {}
    while pending:
        nid = -heapq.heappop(pending)
        g = adjoint.pop(nid)
        n = nodes[nid]
        if n.op == oc.PARAMETER:
            grads[n.name] = g
            continue
        wants = tuple(need[i.id] for i in n.inputs)
        contribs = _VJP[n.op](graph, n, g, wants)
        for inp, contrib in zip(n.inputs, contribs):
            if contrib is None or not need[inp.id]:
                continue
            assert contrib.value.shape == inp.value.shape, (
                f"adjoint shape {contrib.value.shape} != {inp.value.shape} "
                f"for {oc.OP_LABELS[n.op]}"
            )
            prev = adjoint.get(inp.id)
            if prev is None:
                adjoint[inp.id] = contrib
                heapq.heappush(pending, -inp.id)
            else:
                adjoint[inp.id] = graph.add(prev, contrib)
    return grads


def _backward_unrecorded(graph, output, need):
    # same traversal and accumulation order as the recorded pass, but adjoints
    # are plain arrays and the rules come from _VJP_FAST; ops without a fast
    # rule fall back to their recorded twin evaluated through _EvalOps. The
    # per-primitive finite screen is deferred to the returned gradients.
    nodes = graph.nodes
    fallback = _EvalOps(graph._fwd)
    adjoint = {output.id: np.ones_like(output.value)}
    pending = [-output.id]
    grads = {}
    while pending:
        nid = -heapq.heappop(pending)
        g = adjoint.pop(nid)
        n = nodes[nid]
        if n.op == oc.PARAMETER:
            g = np.ascontiguousarray(g)
            if not np.isfinite(g.sum()) and not np.isfinite(g).all():
                raise NonFiniteError(f"non-finite gradient for parameter {n.name!r}")
            grads[n.name] = _EvalNode(g)
            continue
        wants = tuple(need[i.id] for i in n.inputs)
        rule = _VJP_FAST.get(n.op)
        if rule is not None:
            contribs = rule(n, g, wants)
        else:
            contribs = tuple(
                None if c is None else c.value
                for c in _VJP[n.op](fallback, n, _EvalNode(g), wants)
            )
        for inp, contrib in zip(n.inputs, contribs):
            if contrib is None or not need[inp.id]:
                continue
            assert contrib.shape == inp.value.shape, (
                f"adjoint shape {contrib.shape} != {inp.value.shape} "
                f"for {oc.OP_LABELS[n.op]}"
            )
            prev = adjoint.get(inp.id)
            if prev is None:
                adjoint[inp.id] = contrib
                heapq.heappush(pending, -inp.id)
            else:
                adjoint[inp.id] = prev + contrib
    return grads


def second_order_grad(graph, outer_scalar, inner_grads, wrt):
    """Differentiate a scalar built on top of recorded gradient nodes.

    `inner_grads` is the gradient map a prior `backward` call returned; it is
    only used to sanity-check that the inner pass really lives on this graph.
    A disconnected outer scalar yields an empty (all-zero) map rather than an
    error — callers treat that as a diagnostic.
    """
    for name, node in inner_grads.items():
        if node.id >= len(graph.nodes) or graph.nodes[node.id] is not node:
            raise ValueError(f"inner gradient {name!r} does not belong to this graph")
    return backward(graph, outer_scalar, wrt)


def grad_values(grads):
    """Materialize a gradient node map into plain arrays."""
    return {name: node.value for name, node in grads.items()}
