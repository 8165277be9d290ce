#!/usr/bin/env python3
"""Benchmark the compiled kernel core against the numpy fallback.

Times the three convolution kernels at model-relevant shapes, plus one
end-to-end trained-solver step, on each available backend.

    python3 benchmarks/bench_kernels.py [--repeats N]
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from varnet4d import backend


def _time(fn, *args, repeats: int) -> float:
    fn(*args)  # warm-up
    t0 = time.perf_counter()
    for _ in range(repeats):
        fn(*args)
    return (time.perf_counter() - t0) / repeats * 1e3


def bench_kernels(repeats: int) -> None:
    shapes = [
        ("lstm gates (fused)", 53, 128, 64),
        ("prior hidden", 21, 32, 64),
        ("prior mix", 48, 21, 64),
        ("output conv", 21, 21, 64),
        ("coarse scale", 21, 32, 32),
    ]
    rng = np.random.default_rng(0)
    header = f"{'kernel':22s} {'shape':>16s} " + "".join(
        f"{name + ' (ms)':>16s}" for name in backend.available_backends()
    )
    print(header)
    print("-" * len(header))
    for label, ci, co, hw in shapes:
        x = rng.standard_normal((1, ci, hw, hw))
        w = rng.standard_normal((co, ci, 3, 3))
        g = rng.standard_normal((1, co, hw, hw))
        rows = {
            "fwd": lambda: backend.conv2d_fwd(x, w, 1, True),
            "igrad": lambda: backend.conv2d_igrad(g, w, hw, hw, 1, True),
            "wgrad": lambda: backend.conv2d_wgrad(x, g, 3, 1, True),
        }
        for kname, fn in rows.items():
            cols = []
            for bname in backend.available_backends():
                backend.set_backend(bname)
                cols.append(_time(fn, repeats=repeats))
            shape = f"{ci}->{co}@{hw}"
            print(
                f"{label + ' ' + kname:22s} {shape:>16s} "
                + "".join(f"{c:16.2f}" for c in cols)
            )


def bench_end_to_end(repeats: int) -> None:
    import varnet4d.autodiff as ad
    from varnet4d.prior import PriorParams
    from varnet4d.solver import SolverParams, solve
    from varnet4d.training import TrainConfig, training_loss

    cfg = TrainConfig(window=7, patch_rows=64, patch_cols=64)
    pp = PriorParams.init(cfg.prior_config(), 0)
    sp = SolverParams.init(cfg.solver_config(), 1)
    rng = np.random.default_rng(0)
    C = 3 * cfg.window
    y = ad.tensor(0.1 * rng.standard_normal((1, C, 64, 64)))
    m = rng.random((1, C, 64, 64)) < 0.1
    xt = ad.tensor(0.1 * rng.standard_normal((1, C, 64, 64)))

    def one_training_step():
        x0 = ad.tensor(0.1 * rng.standard_normal((1, C, 64, 64)), requires_grad=True)
        x_hat, _ = solve(x0, y, m, pp, sp, n_iter=cfg.n_iter_grad, training=True)
        ad.backward(training_loss(xt, x_hat, pp, cfg))

    print()
    print(f"{'end-to-end':22s} {'(train step)':>16s}", end="")
    for bname in backend.available_backends():
        backend.set_backend(bname)
        print(f"{_time(one_training_step, repeats=max(1, repeats // 10)):16.1f}", end="")
    print()


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--repeats", type=int, default=20)
    args = ap.parse_args()
    print(f"available backends: {backend.available_backends()}")
    bench_kernels(args.repeats)
    bench_end_to_end(args.repeats)


if __name__ == "__main__":
    main()
