"""Compare the compiled and numpy im2col/col2im kernels, plus one full training step.

Usage: python benchmarks/bench_kernels.py [--repeat N]
"""
import argparse
import timeit

import numpy as np

from ddt import _kernels_py, kernels
from ddt.encoder import Arch, Batch, ddt_loss_and_grad, init_encoder
from ddt.prototype import build_prototype

SHAPES = [  # (N, H, W, C) at each conv of the default encoder, batch 32
    (32, 32, 32, 3),
    (32, 16, 16, 16),
    (32, 8, 8, 32),
]


def backends():
    out = {"python": _kernels_py}
    try:
        from ddt import _kernels_c
        out["cython"] = _kernels_c
    except ImportError:
        pass
    return out


def best_of(fn, repeat):
    return min(timeit.repeat(fn, number=1, repeat=repeat)) * 1e3


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args()
    rng = np.random.default_rng(0)
    impls = backends()
    print(f"active backend: {kernels.BACKEND}")
    print(f"{'kernel':8} {'shape':18} " + " ".join(f"{name:>10}" for name in impls) + "   (ms, best of repeats)")
    for shape in SHAPES:
        x = rng.random(shape)
        cols = _kernels_py.im2col(x, 3, 2, 1)
        for kernel, call in (("im2col", lambda m: m.im2col(x, 3, 2, 1)),
                             ("col2im", lambda m: m.col2im(cols, shape, 3, 2, 1))):
            times = [best_of(lambda: call(m), args.repeat) for m in impls.values()]
            print(f"{kernel:8} {str(shape):18} " + " ".join(f"{t:10.3f}" for t in times))

    params = init_encoder(Arch(), 16, 2, seed=0)
    proto = build_prototype(2, 16)
    batch = Batch(rng.random((32, 32, 32, 3)), np.arange(32) % 2)
    step_ms = best_of(lambda: ddt_loss_and_grad(params, batch, proto), max(3, args.repeat // 4))
    print(f"forward+backward, batch 32, default arch ({kernels.BACKEND}): {step_ms:.2f} ms")


if __name__ == "__main__":
    main()
