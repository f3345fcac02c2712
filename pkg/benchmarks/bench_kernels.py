"""Compare the compiled kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--repeat N]

Prints one line per kernel with the best-of-N time for each backend and
checks that both return identical results on the benchmark inputs.
"""

from __future__ import annotations

import argparse
import timeit

import numpy as np

from qsmn import _kernels_py

try:
    from qsmn import _kernels as _compiled
except ImportError:  # extension not built
    _compiled = None


def _inputs(seed: int = 0):
    rng = np.random.default_rng(seed)
    n_pulses = 10_000
    bits = lambda: rng.integers(0, 2, n_pulses, dtype=np.uint8)  # noqa: E731
    channel = (bits(), bits(), (rng.random(n_pulses) < 0.5).astype(np.uint8), bits(), bits(),
               (rng.random(n_pulses) < 0.03).astype(np.uint8), bits(), bits())
    alice = bits()[:5000]
    bob = alice ^ (rng.random(5000) < 0.03).astype(np.uint8)
    order = rng.permutation(5000).astype(np.int64)
    poly = (rng.integers(0, 3329, 256), rng.integers(0, 3329, 256), 3329)
    return {
        "negacyclic_mul n=256": (lambda k: k.negacyclic_mul(*poly)),
        "bb84_channel 10k pulses": (lambda k: k.bb84_channel(*channel)),
        "parity_bisect_pass 5k bits": (lambda k: k.parity_bisect_pass(alice, bob.copy(), order, 16)),
    }


def _same(x, y) -> bool:
    if isinstance(x, tuple):
        return x == y
    return np.array_equal(np.asarray(x), np.asarray(y))


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--number", type=int, default=50)
    args = ap.parse_args(argv)
    if _compiled is None:
        print("compiled extension not built; only the numpy fallback is available")
    print(f"{'kernel':<28} {'numpy us':>10} {'cython us':>10} {'speedup':>8}  identical")
    for name, call in _inputs().items():
        t_py = min(timeit.repeat(lambda: call(_kernels_py), number=args.number,
                                 repeat=args.repeat)) / args.number * 1e6
        if _compiled is None:
            print(f"{name:<28} {t_py:>10.1f} {'-':>10} {'-':>8}  -")
            continue
        t_c = min(timeit.repeat(lambda: call(_compiled), number=args.number,
                                repeat=args.repeat)) / args.number * 1e6
        same = _same(call(_kernels_py), call(_compiled))
        print(f"{name:<28} {t_py:>10.1f} {t_c:>10.1f} {t_py / t_c:>7.1f}x  {same}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
