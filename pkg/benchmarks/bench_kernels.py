"""Time the numba and pure-numpy flavours of every hot kernel.

    python3 benchmarks/bench_kernels.py [--repeat N]

Each kernel runs on the same inputs in both flavours; outputs are compared
before timing so a speed number is never reported for a wrong answer.
"""

import argparse
import timeit

import numpy as np

from redoffload import _kernels


def _inputs(rng):
    t, n, f, l = 12_000, 3, 28, 3
    trans = np.array([[0.99, 0.01], [0.04, 0.96]])
    regimes = _kernels.pure("markov_regimes")(trans, np.array([0, 1]), np.zeros(n, dtype=np.int64),
                                              rng.random((t, n)), rng.uniform(-1, 1, (t, n)), 1.0)
    sel = rng.integers(1, 8, size=t)
    tasks = np.arange(t - l, t, dtype=np.int64)
    last = _kernels.pure("last_observed")(sel, tasks, n)
    size = 200 * 100
    return {
        "markov_regimes": (trans, np.array([0, 1]), np.zeros(n, dtype=np.int64), rng.random((t, n)),
                           rng.uniform(-1, 1, (t, n)), 1.0),
        "ar_truncated": (regimes, np.array([0.128, 0.4]), np.array([0.018, 0.2]), 0.6, 0.01,
                         rng.standard_normal((t, n, 16))),
        "waypoint_path": (t, 1 / 15, 30.0, 5.0, 15.0, 1.0, 4.0, 3.0, 1.0, rng.random((t // 4 + 16, 4))),
        "gather_window": (rng.standard_normal((t, n, f)), np.arange(f) < 9, last, tasks),
        "last_observed": (sel, tasks, n),
        "window_counts": (rng.uniform(0.1, 0.3, t), 0.175, 10),
        "min_cardinality": (rng.random(4), 0.1),
        "adam_update": None,  # in place, built per call below
    }, size


def _adam_args(rng, size):
    return (rng.standard_normal(size), rng.standard_normal(size), np.zeros(size), np.zeros(size),
            1e-3, 0.9, 0.999, 1e-8, 0.1, 0.001)


def _same(a, b):
    if isinstance(a, tuple):
        return all(_same(x, y) for x, y in zip(a, b))
    return np.array_equal(np.asarray(a), np.asarray(b))


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args()
    rng = np.random.default_rng(0)
    inputs, adam_size = _inputs(rng)
    print(f"{'kernel':18s} {'numba ms':>10s} {'numpy ms':>10s} {'speedup':>8s}")
    for name, call_args in inputs.items():
        fast, slow = _kernels.jitted(name), _kernels.pure(name)
        if name == "adam_update":
            a1, a2 = _adam_args(np.random.default_rng(1), adam_size), _adam_args(np.random.default_rng(1), adam_size)
            fast(*a1)
            slow(*a2)
            if not all(np.allclose(x, y, rtol=1e-12, atol=0) for x, y in zip(a1[:4], a2[:4])):
                raise SystemExit(f"{name}: flavours disagree")
            def run_fast():
                fast(*a1)

            def run_slow():
                slow(*a2)
        else:
            out_fast = fast(*call_args)
            if not _same(out_fast, slow(*call_args)):
                raise SystemExit(f"{name}: flavours disagree")
            def run_fast():
                fast(*call_args)

            def run_slow():
                slow(*call_args)
        tf = min(timeit.repeat(run_fast, number=1, repeat=args.repeat)) * 1e3
        ts = min(timeit.repeat(run_slow, number=1, repeat=max(3, args.repeat // 4))) * 1e3
        print(f"{name:18s} {tf:10.3f} {ts:10.3f} {ts / tf:8.1f}x")


if __name__ == "__main__":
    main()
