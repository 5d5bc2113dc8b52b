"""Two interchangeable op handles so network code is written exactly once.

`GraphOps` records onto a tape (differentiable); `ArrayOps` runs the same
formulas on bare numpy arrays for gradient-free paths (acting, TD targets).
Handles are whatever the backend uses: Nodes for GraphOps, ndarrays for
ArrayOps.
"""

import numpy as np


class GraphOps:
    taped = True

    def __init__(self, graph):
        self.graph = graph

    def constant(self, value):
        return self.graph.constant(value)

    def param(self, name, value):
        return self.graph.parameter(name, value)

    def value(self, handle):
        return handle.value

    def add(self, a, b):
        return self.graph.add(a, b)

    def sub(self, a, b):
        return self.graph.sub(a, b)

    def mul(self, a, b):
        return self.graph.mul(a, b)

    def div(self, a, b):
        return self.graph.div(a, b)

    def matmul(self, a, b, transpose_a=False, transpose_b=False):
        return self.graph.matmul(a, b, transpose_a, transpose_b)

    def concat(self, parts, axis):
        return self.graph.concat(parts, axis)

    def slice(self, a, axis, start, stop):
        return self.graph.slice(a, axis, start, stop)

    def reshape(self, a, shape):
        return self.graph.reshape(a, shape)

    def mean(self, a, axis=None, keepdims=False):
        return self.graph.mean(a, axis, keepdims)

    def sum(self, a, axis=None, keepdims=False):
        return self.graph.sum(a, axis, keepdims)

    def tanh(self, a):
        return self.graph.tanh(a)

    def sigmoid(self, a):
        return self.graph.sigmoid(a)

    def relu(self, a):
        return self.graph.relu(a)

    def square(self, a):
        return self.graph.square(a)

    def exp(self, a):
        return self.graph.exp(a)

    def log(self, a):
        return self.graph.log(a)

    def minimum(self, a, b):
        return self.graph.minimum(a, b)

    def clip(self, a, lo, hi):
        return self.graph.clip(a, lo, hi)

    def scale(self, a, factor):
        return self.graph.scale(a, factor)

    def layer_normalize(self, a, eps=1e-5):
        return self.graph.layer_normalize(a, eps)

    def stop_gradient(self, a):
        return self.graph.stop_gradient(a)


class ArrayOps:
    taped = False

    def constant(self, value):
        return np.asarray(value, dtype=np.float64)

    def param(self, name, value):
        return value

    def value(self, handle):
        return handle

    @staticmethod
    def add(a, b):
        return a + b

    @staticmethod
    def sub(a, b):
        return a - b

    @staticmethod
    def mul(a, b):
        return a * b

    @staticmethod
    def div(a, b):
        return a / b

    @staticmethod
    def matmul(a, b, transpose_a=False, transpose_b=False):
        return np.matmul(a.T if transpose_a else a, b.T if transpose_b else b)

    @staticmethod
    def concat(parts, axis):
        return np.concatenate(parts, axis=axis)

    @staticmethod
    def slice(a, axis, start, stop):
        index = (slice(None),) * axis + (slice(start, stop),)
        return a[index]

    @staticmethod
    def reshape(a, shape):
        return a.reshape(shape)

    @staticmethod
    def mean(a, axis=None, keepdims=False):
        return np.mean(a, axis=axis, keepdims=keepdims)

    @staticmethod
    def sum(a, axis=None, keepdims=False):
        return np.sum(a, axis=axis, keepdims=keepdims)

    @staticmethod
    def tanh(a):
        return np.tanh(a)

    @staticmethod
    def sigmoid(a):
        return 1.0 / (1.0 + np.exp(-a))

    @staticmethod
    def relu(a):
        return np.maximum(a, 0.0)

    @staticmethod
    def square(a):
        return np.square(a)

    @staticmethod
    def exp(a):
        return np.exp(a)

    @staticmethod
    def log(a):
        return np.log(a)

    @staticmethod
    def minimum(a, b):
        return np.minimum(a, b)

    @staticmethod
    def clip(a, lo, hi):
        return np.clip(a, lo, hi)

    @staticmethod
    def scale(a, factor):
        return a * factor

    @staticmethod
    def layer_normalize(a, eps=1e-5):
        mu = np.mean(a, axis=-1, keepdims=True)
        xc = a - mu
        var = np.mean(np.square(xc), axis=-1, keepdims=True)
        return xc / np.sqrt(var + eps)

    @staticmethod
    def stop_gradient(a):
        return a


ARRAY_OPS = ArrayOps()
