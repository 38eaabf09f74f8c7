"""Compare the compiled and pure-numpy paths of the hot kernels.

The TSDA_NUMBA environment variable selects the path at import time, so the
benchmark re-imports the kernels module in a subprocess for each setting.

Usage: python3 benchmarks/bench_kernels.py
"""

import json
import os
import subprocess
import sys

WORKER = r"""
import json
import time

import numpy as np

from tsda import kernels

rng = np.random.default_rng(0)
T, d_in, d = 40, 8, 32
x = rng.normal(size=(T, d_in))
W = {name: rng.normal(size=(d, d_in)) * 0.1 for name in ("wz", "wr", "wh")}
U = {name: rng.normal(size=(d, d)) * 0.1 for name in ("uz", "ur", "uh")}
b = {name: np.zeros(d) for name in ("bz", "br", "bh")}
z8 = rng.normal(size=(64, d))

def bench(fn, *args, repeat=200):
    fn(*args)  # includes any jit compile outside the timed region
    start = time.perf_counter()
    for _ in range(repeat):
        fn(*args)
    return (time.perf_counter() - start) / repeat

results = {
    "numba_enabled": kernels.NUMBA_ENABLED,
    "gru_forward_ms": 1e3 * bench(
        kernels.gru_forward, x,
        W["wz"], U["uz"], b["bz"], W["wr"], U["ur"], b["br"], W["wh"], U["uh"], b["bh"],
    ),
    "gaussian_gram_ms": 1e3 * bench(kernels.gaussian_gram_forward, z8, 1.0),
}
print(json.dumps(results))
"""


def run(numba_flag: str) -> dict:
    env = dict(os.environ, TSDA_NUMBA=numba_flag)
    out = subprocess.run(
        [sys.executable, "-c", WORKER], env=env, capture_output=True, text=True, check=True
    )
    return json.loads(out.stdout.strip().splitlines()[-1])


def main() -> None:
    fast = run("1")
    slow = run("0")
    print(f"{'kernel':<20} {'numba (ms)':>12} {'numpy (ms)':>12} {'speedup':>9}")
    for key in ("gru_forward_ms", "gaussian_gram_ms"):
        name = key.removesuffix("_ms")
        ratio = slow[key] / fast[key] if fast[key] else float("inf")
        print(f"{name:<20} {fast[key]:>12.4f} {slow[key]:>12.4f} {ratio:>8.1f}x")


if __name__ == "__main__":
    main()
