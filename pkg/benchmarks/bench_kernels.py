"""Compare the compiled and numpy share kernels on server-sized sessions.

    python benchmarks/bench_kernels.py [--n 200 500 1000] [--m 3] [--repeat 5]
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from secureabm.kernels import available_backends
from secureabm.mpc import MERSENNE_61
from secureabm.transport import session_keys


def best_of(fn, repeat: int) -> float:
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main() -> None:
    ap = argparse.ArgumentParser()
    ap.add_argument("--n", type=int, nargs="+", default=[200, 500, 1000])
    ap.add_argument("--m", type=int, default=3)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()

    backends = available_backends()
    rng = np.random.default_rng(0)
    print(f"{'n':>6} {'backend':>8} {'partials ms':>12} {'ns/share':>9} {'shares ms':>10}")
    for n in args.n:
        values = rng.integers(0, MERSENNE_61, size=(n, args.m), dtype=np.uint64)
        offsets = np.array([0, n])
        keys = session_keys(1234, 1)
        reference = None
        for name, mod in sorted(backends.items()):
            t_part = best_of(lambda: mod.session_partials(keys, offsets, values, MERSENNE_61), args.repeat)
            t_shares = best_of(lambda: mod.session_shares(keys, offsets, values, MERSENNE_61),
                               max(1, args.repeat // 2))
            out = mod.session_partials(keys, offsets, values, MERSENNE_61)
            if reference is None:
                reference = out
            elif not np.array_equal(reference, out):
                raise SystemExit(f"backend {name} disagrees with the others at n={n}")
            per_share = t_part / (n * n * args.m) * 1e9
            print(f"{n:>6} {name:>8} {t_part * 1e3:>12.2f} {per_share:>9.2f} {t_shares * 1e3:>10.2f}")


if __name__ == "__main__":
    main()
