"""Time each kernel's compiled loop against its vectorized numpy twin.

    python3 benchmarks/bench_kernels.py [--repeat N] [--json out.json]

With NQCS_DISABLE_NUMBA=1 the loop column runs interpreted, which shows
what the numpy path saves over plain Python.
"""
import argparse
import json
import timeit

import numpy as np

from nqcs import backend_name, kernels


def cases(rng):
    S = 20_000
    L = rng.uniform(0, 40, 64)
    g = rng.uniform(0.1, 30, 64)
    r = rng.uniform(0, 3, 64)
    y0 = rng.uniform(0.1, 5, 64)
    step = np.full(64, 1e-6)
    z3 = rng.standard_normal((S, 3))
    mu = 10.0 ** rng.uniform(-3, 1, S)
    c2 = rng.standard_normal((S, 2))
    z2 = c2 + rng.uniform(-1, 1, (S, 2)) * mu[:, None]
    norms = np.abs(rng.standard_normal((S, 6)))
    counters = rng.integers(0, 100, S)
    y7 = np.array([0.5, 0.0, -1.57, 0.0, 0.0, 0.0, 0.0])
    return {
        "riccati_rk4": (L, g, r, y0, step, 2000),
        "zoom_quantize": (z3, mu, 0.3, 4.0, 0.01),
        "box_quantize": (z2, c2, mu, 5),
        "tod_grant": (norms,),
        "rr_deadbeat": (norms ** 2, counters),
        "manipulator_segment": (y7, 0.0, 0.0256, 1e-4, 4.905, 2.0, 2.0, 5.0, True),
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--json", help="also write results here")
    args = ap.parse_args(argv)

    rng = np.random.default_rng(0)
    rows = []
    print(f"backend: {backend_name()}")
    print(f"{'kernel':<22}{'loop [ms]':>12}{'numpy [ms]':>12}{'numpy/loop':>12}")
    for name, call_args in cases(rng).items():
        loop, vec = kernels.KERNELS[name]
        loop(*call_args)  # compile outside the timing
        vec(*call_args)
        t_loop = min(timeit.repeat(lambda: loop(*call_args), number=1, repeat=args.repeat))
        t_vec = min(timeit.repeat(lambda: vec(*call_args), number=1, repeat=args.repeat))
        rows.append({"kernel": name, "loop_s": t_loop, "numpy_s": t_vec})
        print(f"{name:<22}{t_loop * 1e3:>12.3f}{t_vec * 1e3:>12.3f}{t_vec / t_loop:>12.2f}")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump({"backend": backend_name(), "rows": rows}, fh, indent=2)


if __name__ == "__main__":
    main()
