"""Time the compiled and numpy LSTM recurrences against each other.

    python3 benchmarks/bench_kernels.py [--repeat 50]

Prints one row per (shape, pass) with the median time of each backend, the
speedup, and the largest absolute difference between their outputs.
"""

from __future__ import annotations

import argparse
import statistics
import time

import numpy as np

from resset import kernels

SHAPES = [  # (T, B, input, hidden)
    (10, 16, 32, 32),     # visit-level batch
    (100, 16, 32, 32),    # token-level batch
    (10, 64, 32, 32),     # evaluation batch
    (60, 16, 64, 64),
]


def _median_ms(fn, repeat: int) -> float:
    fn()
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return 1e3 * statistics.median(times)


def run(repeat: int) -> list[dict]:
    if "cython" not in kernels.IMPLEMENTATIONS:
        raise SystemExit("compiled extension not built; run `pip install -e . --no-build-isolation`")
    py, cy = kernels.IMPLEMENTATIONS["python"], kernels.IMPLEMENTATIONS["cython"]
    rng = np.random.default_rng(0)
    rows = []
    for T, B, I, H in SHAPES:
        X = rng.standard_normal((T, B, I))
        W = rng.uniform(-0.08, 0.08, (4 * H, I + H))
        b = np.zeros(4 * H)
        dH = rng.standard_normal((T, B, H))
        fwd = {name: kernels.lstm_forward(X, W, b, impl=m) for name, m in (("py", py), ("cy", cy))}
        bwd = {name: kernels.lstm_backward(X, W, *fwd[name], dH, impl=m) for name, m in (("py", py), ("cy", cy))}
        for label, diff, f_py, f_cy in (
            ("forward", max(float(np.max(np.abs(a - c))) for a, c in zip(fwd["py"], fwd["cy"])),
             lambda: kernels.lstm_forward(X, W, b, impl=py),
             lambda: kernels.lstm_forward(X, W, b, impl=cy)),
            ("backward", max(float(np.max(np.abs(a - c))) for a, c in zip(bwd["py"], bwd["cy"])),
             lambda: kernels.lstm_backward(X, W, *fwd["py"], dH, impl=py),
             lambda: kernels.lstm_backward(X, W, *fwd["cy"], dH, impl=cy)),
        ):
            t_py, t_cy = _median_ms(f_py, repeat), _median_ms(f_cy, repeat)
            rows.append({"shape": (T, B, I, H), "pass": label, "python_ms": t_py, "cython_ms": t_cy,
                         "speedup": t_py / t_cy, "max_abs_diff": diff})
    return rows


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=50)
    args = ap.parse_args()
    print(f"{'T,B,I,H':>16} {'pass':>8} {'python ms':>10} {'cython ms':>10} {'speedup':>8} {'max |diff|':>11}")
    for r in run(args.repeat):
        shape = ",".join(map(str, r["shape"]))
        print(f"{shape:>16} {r['pass']:>8} {r['python_ms']:10.3f} {r['cython_ms']:10.3f} "
              f"{r['speedup']:8.2f} {r['max_abs_diff']:11.2e}")


if __name__ == "__main__":
    main()
