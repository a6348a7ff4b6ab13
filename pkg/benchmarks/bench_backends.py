"""Compare the numba and numpy kernel backends.

    python benchmarks/bench_backends.py [--batch 64] [--dims 784,256,10] [--repeat 20]

Times each kernel and a full training step under both backends.  The
``zero_frac`` column zeroes that share of the layer input, which is what
closed gates do; the loop kernels skip those operands, BLAS does not.
First calls are excluded so JIT compilation does not count.
"""
import argparse
import timeit

import numpy as np

from gatednet import kernels
from gatednet.config import from_dict
from gatednet.train import Trainer


def kernel_cases(rng, batch, n_in, n_out, zero_frac):
    h = rng.normal(size=(batch, n_in))
    h[:, : int(zero_frac * n_in)] = 0.0
    W = rng.normal(size=(n_out, n_in))
    b = rng.normal(size=n_out)
    da = rng.normal(size=(batch, n_out))
    m, v = np.zeros_like(W), np.zeros_like(W)
    mask = (rng.uniform(size=W.shape) > 0.5).astype(np.float64)
    return {
        "affine": lambda: kernels.affine(h, W, b),
        "grad_weight": lambda: kernels.grad_weight(da, h),
        "grad_input": lambda: kernels.grad_input(da, W),
        "adamw_masked": lambda: kernels.adamw_update(
            W.copy(), da.T @ h, m.copy(), v.copy(), lr=1e-3, beta1=0.9, beta2=0.999,
            eps=1e-8, wd=1e-4, step=1, mask=mask),
    }


def step_case(dims, batch, variant, rng):
    cfg = from_dict({"variant": variant, "model": {"dims": dims},
                     "rigl": {"sparsity": 0.5, "update_period": 10 ** 9}})
    t = Trainer(cfg, dims[0], dims[-1])
    t.begin_epoch(5)
    xb = rng.normal(size=(batch, dims[0]))
    yb = rng.integers(0, dims[-1], batch)
    return lambda: t.step(xb, yb)


def best_ms(fn, repeat):
    fn()  # warm-up / compile
    return 1e3 * min(timeit.repeat(fn, number=1, repeat=repeat))


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--batch", type=int, default=64)
    ap.add_argument("--dims", default="784,256,10")
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args(argv)
    dims = [int(d) for d in args.dims.split(",")]
    available = [b for b in kernels.BACKENDS if b != "numba" or kernels.HAS_NUMBA]
    if len(available) < 2:
        print("numba not importable; only the numpy backend can be timed")

    rows = []
    for zero_frac in (0.0, 0.5):
        for name in kernel_cases(np.random.default_rng(0), 1, 1, 1, 0.0):
            row = [name, f"{zero_frac:.1f}"]
            for backend in available:
                kernels.set_backend(backend)
                case = kernel_cases(np.random.default_rng(0), args.batch, dims[0], dims[1], zero_frac)
                row.append(best_ms(case[name], args.repeat))
            rows.append(row)
    for variant in ("baseline", "dynamic", "fused"):
        row = [f"step[{variant}]", "-"]
        for backend in available:
            kernels.set_backend(backend)
            row.append(best_ms(step_case(dims, args.batch, variant, np.random.default_rng(1)),
                               args.repeat))
        rows.append(row)

    header = ["case", "zero_frac"] + [f"{b}_ms" for b in available]
    if len(available) == 2:
        header.append("numpy/numba")
    print(f"batch={args.batch} dims={dims} best of {args.repeat}")
    print("  ".join(f"{h:>14}" for h in header))
    for row in rows:
        cells = [f"{row[0]:>14}", f"{row[1]:>14}"] + [f"{t:14.3f}" for t in row[2:]]
        if len(available) == 2:
            cells.append(f"{row[3] / row[2]:14.2f}")
        print("  ".join(cells))


if __name__ == "__main__":
    main()
