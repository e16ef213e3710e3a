"""Time the compiled stencil kernel against the numpy fallback on the desk AR model.

    python benchmarks/bench_kernels.py [--replicates 20000] [--repeat 3]
"""

import argparse
import time

import numpy as np

from ncfield import kernels
from ncfield.innovations import InnovationSource, TruncatedGaussian
from ncfield.model import PicardConfig, ar_model, run_pyramid


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--replicates", type=int, default=20_000)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()

    model = ar_model(0.2, 0.2, 0.3)
    cfg = PicardConfig.for_model(model)
    K = cfg.iterations
    src = InnovationSource(seeds=np.arange(args.replicates, dtype=np.uint64), distribution=TruncatedGaussian())
    eps = src.epsilon_box((-K - 2,), (2 * K + 5,))
    print(f"box {eps.shape[1]} cells x {args.replicates} replicates, {K} sweeps")

    results = {}
    for name in sorted(kernels.BACKENDS):
        t, (out, _) = best_of(lambda: run_pyramid(model, eps, cfg, backend=name), args.repeat)
        results[name] = out
        cells = args.replicates * sum(eps.shape[1] - 2 * k for k in range(1, K + 1))
        print(f"{name:>8}: {t * 1e3:8.1f} ms  {cells / t / 1e6:8.1f} Mcell-updates/s")
    t, (out, _) = best_of(lambda: run_pyramid(model, eps, cfg, backend="generic"), args.repeat)
    print(f"{'generic':>8}: {t * 1e3:8.1f} ms")
    ref = results.get("python", out)
    for name, arr in results.items():
        print(f"max |{name} - python| = {float(np.max(np.abs(arr - ref))):.3g}")


if __name__ == "__main__":
    main()
