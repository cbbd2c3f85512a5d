"""Time the compiled conv/pool kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--repeat N]
"""

import argparse
import timeit

import numpy as np

from lyapnet import _kernels_py as py

try:
    from lyapnet import _ckernels as cy
except ImportError:
    cy = None

def run(repeat):
    rng = np.random.default_rng(0)
    x = rng.standard_normal((32, 8, 28, 28)).astype(np.float32)
    cols = py.im2col(x, 3, 3, 1, 1)
    pooled, idx = py.maxpool_forward(x, 2)
    dout = rng.standard_normal(pooled.shape).astype(np.float32)
    jobs = {
        "im2col k3 p1": lambda m: m.im2col(x, 3, 3, 1, 1),
        "col2im k3 p1": lambda m: m.col2im(cols, x.shape, 3, 3, 1, 1),
        "maxpool forward w2": lambda m: m.maxpool_forward(x, 2),
        "maxpool backward w2": lambda m: m.maxpool_backward(dout, idx, x.shape, 2),
    }
    print(f"input {x.shape} float32, best of {repeat}")
    print(f"{'kernel':<22}{'python ms':>12}{'cython ms':>12}{'speedup':>10}")
    for name, fn in jobs.items():
        t_py = min(timeit.repeat(lambda: fn(py), number=1, repeat=repeat)) * 1e3
        if cy is None:
            print(f"{name:<22}{t_py:>12.2f}{'n/a':>12}{'':>10}")
            continue
        t_cy = min(timeit.repeat(lambda: fn(cy), number=1, repeat=repeat)) * 1e3
        print(f"{name:<22}{t_py:>12.2f}{t_cy:>12.2f}{t_py / t_cy:>9.1f}x")


if __name__ == "__main__":
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    run(ap.parse_args().repeat)
