"""Timing comparison of the numba kernels against their numpy fallbacks.

Run from the repository root:

    python3 benchmarks/bench_kernels.py

The script imports fortress.kernels twice, once normally and once in a
subprocess with FORTRESS_NO_NUMBA=1, so both code paths are exercised the
same way a user would hit them. Pass --json for machine-readable output.
"""

import argparse
import json
import os
import subprocess
import sys
import time

import numpy as np

CASES = {
    "im2col": dict(n=8, c=32, size=64, k=3, stride=1, repeats=20),
    "col2im": dict(n=8, c=32, size=64, k=3, stride=1, repeats=20),
    "bspline_design": dict(points=1_000_000, grid_size=5, order=3, repeats=5),
}


def _time(fn, repeats):
    fn()  # warm up (and trigger JIT compilation on the numba path)
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return float(np.median(times))


def run_benchmarks():
    from fortress import kernels as K

    rng = np.random.default_rng(0)
    results = {"numba": K.USE_NUMBA}

    p = CASES["im2col"]
    pad = p["k"] // 2
    hp = p["size"] + 2 * pad
    ho = (hp - p["k"]) // p["stride"] + 1
    xp = rng.standard_normal((p["n"], p["c"], hp, hp)).astype(np.float32)
    results["im2col"] = _time(
        lambda: K.im2col(xp, p["k"], p["stride"], ho, ho), p["repeats"]
    )

    p = CASES["col2im"]
    cols = rng.standard_normal(
        (p["n"], p["c"] * p["k"] * p["k"], ho * ho)
    ).astype(np.float32)
    results["col2im"] = _time(
        lambda: K.col2im(cols, p["k"], p["stride"], hp, hp, ho, ho), p["repeats"]
    )

    p = CASES["bspline_design"]
    x = rng.uniform(0.0, 1.0, p["points"])
    results["bspline_design"] = _time(
        lambda: K.bspline_design(x, p["grid_size"], p["order"]), p["repeats"]
    )
    return results


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--json", action="store_true")
    parser.add_argument("--worker", action="store_true", help=argparse.SUPPRESS)
    args = parser.parse_args(argv)

    if args.worker:
        print(json.dumps(run_benchmarks()))
        return 0

    here = run_benchmarks()
    env = dict(os.environ, FORTRESS_NO_NUMBA="1")
    out = subprocess.run(
        [sys.executable, os.path.abspath(__file__), "--worker"],
        env=env, capture_output=True, text=True, check=True,
    )
    fallback = json.loads(out.stdout.strip().splitlines()[-1])

    if args.json:
        print(json.dumps({"numba": here, "numpy": fallback}, indent=1))
        return 0

    label_a = "numba" if here["numba"] else "numpy"
    print(f"{'kernel':<16}{label_a + ' (s)':>14}{'numpy (s)':>14}{'speedup':>10}")
    for name in ("im2col", "col2im", "bspline_design"):
        a, b = here[name], fallback[name]
        print(f"{name:<16}{a:>14.5f}{b:>14.5f}{b / a:>10.2f}x")
    return 0


if __name__ == "__main__":
    sys.exit(main())
