#!/usr/bin/env python3
"""Compare the numpy reference kernels against the compiled extension.

Times the primitive patterns that dominate tape evaluation (same-shape
elementwise, bias/row and keepdims/column broadcasts, transcendentals, layer
norm) and a full forward+backward pass on an MLP tape, once per available
backend.

    python3 bench/bench_backends.py [--repeats N] [--batch B] [--width W]
"""

import argparse
import time

import numpy as np

from mgrl.autodiff import backend
from mgrl.autodiff import opcodes as oc
from mgrl.autodiff.engine import Graph, backward


def _time(fn, repeats):
    # pick an iteration count that makes one sample ~10ms, report the best
    fn()
    iters = 1
    while True:
        t0 = time.perf_counter()
        for _ in range(iters):
            fn()
        dt = time.perf_counter() - t0
        if dt > 0.01:
            break
        iters *= 4
    best = dt / iters
    for _ in range(repeats - 1):
        t0 = time.perf_counter()
        for _ in range(iters):
            fn()
        best = min(best, (time.perf_counter() - t0) / iters)
    return best


def kernel_cases(batch, width):
    rng = np.random.default_rng(0)

    def arr(*shape):
        return np.ascontiguousarray(rng.normal(size=shape))

    m = arr(batch, width)
    m2 = arr(batch, width)
    row = arr(width)
    col = arr(batch, 1)
    one = np.ones(1)
    pos = np.abs(m) + 0.1
    return [
        ("add, same shape", oc.ADD, [m, m2], None),
        ("add, bias row", oc.ADD, [m, row], None),
        ("mul, column", oc.MUL, [m, col], None),
        ("sub, scalar", oc.SUB, [one, m], None),
        ("div, same shape", oc.DIV, [m, pos], None),
        ("tanh", oc.TANH, [m], None),
        ("sigmoid", oc.SIGMOID, [m], None),
        ("square", oc.SQUARE, [m], None),
        ("clip", oc.CLIP, [m], (-1.0, 1.0)),
        ("scale", oc.SCALE, [m], 0.5),
        ("layer_normalize", oc.LAYER_NORMALIZE, [m], 1e-5),
        ("matmul (delegated)", oc.MATMUL, [m, m2], (False, True)),
    ]


def tape_pass(backend_name, batch, width, layers=3):
    rng = np.random.default_rng(1)
    weights = []
    fan_in = width
    for i in range(layers):
        weights.append((f"w{i}", rng.normal(size=(fan_in, width)) * 0.1,
                        f"b{i}", np.zeros(width)))
    head_w = rng.normal(size=(width, 1)) * 0.1
    x = rng.normal(size=(batch, width))

    def run():
        g = Graph(backend_name)
        h = g.constant(x)
        names = []
        for wn, w, bn, b in weights:
            h = g.tanh(g.add(g.matmul(h, g.parameter(wn, w)), g.parameter(bn, b)))
            names += [wn, bn]
        y = g.matmul(h, g.parameter("head", head_w))
        names.append("head")
        backward(g, g.mean(g.square(y)), names)

    return run


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeats", type=int, default=5)
    ap.add_argument("--batch", type=int, default=100)
    ap.add_argument("--width", type=int, default=350)
    args = ap.parse_args(argv)

    names = [n for n in ("python", "compiled") if n in backend.available()]
    if "compiled" not in names:
        print("compiled backend not built; timing the reference backend only")

    header = f"{'kernel':<24} {'shape':<12}" + "".join(f" {n:>12}" for n in names)
    if len(names) == 2:
        header += f" {'speedup':>9}"
    print(header)
    print("-" * len(header))
    for label, op, vals, meta in kernel_cases(args.batch, args.width):
        shape = "x".join(str(d) for d in max((v.shape for v in vals), key=np.prod))
        times = []
        for n in names:
            fwd = backend.forward_fn(n)
            times.append(_time(lambda: fwd(op, vals, meta), args.repeats))
        line = f"{label:<24} {shape:<12}" + "".join(f" {t * 1e6:>10.2f}us" for t in times)
        if len(times) == 2:
            line += f" {times[0] / times[1]:>8.2f}x"
        print(line)

    print()
    label = f"mlp tape fwd+bwd {args.batch}x{args.width}x3"
    times = [_time(tape_pass(n, args.batch, args.width), args.repeats) for n in names]
    line = f"{label:<37}" + "".join(f" {t * 1e3:>10.3f}ms" for t in times)
    if len(times) == 2:
        line += f" {times[0] / times[1]:>8.2f}x"
    print(line)


if __name__ == "__main__":
    main()
