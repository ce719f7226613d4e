"""Compare the compiled sampling kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--trials N] [--repeat R]

Times ``shift_distances`` on a fixed batch of trims for each sampler and the
full ``monte_carlo_shift`` driver under both backends. Outputs are checked to
be identical before any timing is reported.
"""

import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from egopnr import _kernels_py, kernels
from egopnr.sampling import draw_trims

KINDS = {"even": kernels.EVEN, "stratified": kernels.STRATIFIED, "random": kernels.RANDOM}


def _inputs(trials, n=16, seed=0):
    rng = np.random.default_rng(seed)
    starts, S = draw_trims(240, 30.0, trials, rng)
    pnr = starts + np.minimum((rng.random(trials) * S).astype(np.int64), S - 1)
    return starts, S, pnr, rng.random((trials, n))


def bench_kernels(trials, repeat):
    try:
        from egopnr import _kernels as compiled
    except ImportError:
        print("compiled extension not built; only the fallback is timed")
        compiled = None
    starts, S, pnr, u = _inputs(trials)
    print(f"shift_distances, {trials} trials, best of {repeat}")
    print(f"{'sampler':<11} {'python ms':>10} {'cython ms':>10} {'speedup':>8}")
    for name, code in KINDS.items():
        def py():
            return _kernels_py.shift_distances(code, 16, starts, S, pnr, u)

        t_py = min(timeit.repeat(py, number=1, repeat=repeat))
        if compiled is None:
            print(f"{name:<11} {t_py * 1e3:>10.1f}")
            continue

        def cy():
            return compiled.shift_distances(code, 16, starts, S, pnr, u)

        if not np.array_equal(py(), cy()):
            sys.exit(f"backends disagree for {name}")
        t_cy = min(timeit.repeat(cy, number=1, repeat=repeat))
        print(f"{name:<11} {t_py * 1e3:>10.1f} {t_cy * 1e3:>10.1f} {t_py / t_cy:>7.1f}x")


def bench_driver(trials):
    # backend is picked at import, so each run gets its own interpreter
    code = (
        "import time; from egopnr import sampling, kernels;"
        f"t = time.perf_counter(); s = sampling.monte_carlo_shift('random', trials={trials});"
        "print(kernels.BACKEND, f'{time.perf_counter() - t:.3f}', repr(s.mean_s))"
    )
    print(f"\nmonte_carlo_shift('random'), {trials} trials")
    results = []
    for pure in ("0", "1"):
        env = dict(os.environ, EGO_PURE=pure)
        out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True,
                             text=True, check=True).stdout.split()
        results.append(out)
        print(f"  {out[0]:<7} {out[1]} s  mean {out[2]} s")
    if results[0][2] != results[1][2]:
        sys.exit("backends disagree on the Monte-Carlo mean")


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--trials", type=int, default=200_000)
    p.add_argument("--repeat", type=int, default=5)
    args = p.parse_args()
    bench_kernels(args.trials, args.repeat)
    bench_driver(5 * args.trials)


if __name__ == "__main__":
    main()
