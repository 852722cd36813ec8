"""Time the Schur-complement kernel and full solves under both backends.

    python3 benchmarks/bench_kernels.py [--repeat 5]

The first numba call compiles (or loads from cache); it is excluded from
the timings. Both backends must agree to rounding, which is checked.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from perturbsos.poly import instance_from_strings
from perturbsos.relax import build_relaxation
from perturbsos.sdp import set_backend, solve, to_standard_form
from perturbsos.sdp.kernels import HAS_NUMBA, schur_moment

CASES = [
    ("motzkin r=4", instance_from_strings(
        "x1^4*x2^2 + x1^2*x2^4 - 3*x1^2*x2^2 + 1", ["x1", "x2"]), 4),
    ("motzkin r=6", instance_from_strings(
        "x1^4*x2^2 + x1^2*x2^4 - 3*x1^2*x2^2 + 1", ["x1", "x2"]), 6),
    ("quartic n=3 r=3", instance_from_strings(
        "x^4 + y^4 + z^4 - x*y*z + x^2", ["x", "y", "z"]), 3),
]


def best_of(fn, repeat: int) -> float:
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return min(times)


def main() -> None:
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    backends = ["numpy"] + (["numba"] if HAS_NUMBA else [])
    rng = np.random.default_rng(0)
    print(f"{'case':<18}{'s':>5}{'N':>6}  " + "".join(f"{b + ' kernel':>15}{b + ' solve':>14}"
                                                      for b in backends))
    for name, inst, r in CASES:
        prob = to_standard_form(build_relaxation(inst, 0.01, r))
        s, N = prob.block_size, prob.nfree
        A = rng.standard_normal((s, s))
        X = A @ A.T + s * np.eye(s)
        Zinv = np.linalg.inv(X + np.eye(s))
        row, ref = [], None
        for b in backends:
            args_k = (X, Zinv, prob.ptr, prob.rows, prob.cols, prob.entry_index, N)
            M = schur_moment(*args_k, backend=b)
            if ref is None:
                ref = M
            elif not np.allclose(M, ref, rtol=1e-10, atol=1e-10 * np.abs(ref).max()):
                raise SystemExit(f"{name}: backends disagree")
            tk = best_of(lambda: schur_moment(*args_k, backend=b), args.repeat)
            set_backend(b)
            solve(prob)
            ts = best_of(lambda: solve(prob), max(1, args.repeat // 2))
            row.append(f"{tk * 1e3:>12.2f} ms{ts * 1e3:>11.1f} ms")
        print(f"{name:<18}{s:>5}{N:>6}  " + "".join(row))


if __name__ == "__main__":
    main()
