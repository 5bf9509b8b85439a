"""Compare the numba kernels with the numpy fallbacks.

Each backend runs in its own interpreter because the backend is fixed at
import time by ``ORBITFB_DISABLE_NUMBA``.

    python3 benchmarks/bench_kernels.py [--repeat 5]
"""

from __future__ import annotations

import argparse
import json
import os
import subprocess
import sys

WORKER = r"""
import json, sys, timeit
import numpy as np
import orbitfb
from orbitfb import kernels, linalg
from orbitfb.env import generate_orm
from orbitfb.neural import POLICY_DIMS, AdamState, adam_step, mlp_init

repeat = int(sys.argv[1])
out = {"backend": orbitfb.backend()}

r = generate_orm(180, 100.0, 0)
linalg.svd(r)  # warm-up (JIT compile or cache load)
out["svd_180"] = min(timeit.repeat(lambda: linalg.svd(r), number=1, repeat=repeat))

m = np.random.default_rng(0).standard_normal((60, 60))
out["svd_60"] = min(timeit.repeat(lambda: linalg.svd(m), number=1, repeat=repeat))

p = mlp_init(POLICY_DIMS, 0)
g = [np.full_like(w, 1e-3) for w in p.weights]
st = AdamState.for_params(p)
adam_step(p, g, st)
out["adam_708k"] = min(timeit.repeat(lambda: adam_step(p, g, st), number=10, repeat=repeat)) / 10
print(json.dumps(out))
"""

LABELS = {
    "svd_180": "Jacobi SVD, 180x180 ORM",
    "svd_60": "Jacobi SVD, 60x60 Gaussian",
    "adam_708k": "Adam step, 708,608 weights",
}


def run_backend(disable: bool, repeat: int) -> dict:
    env = dict(os.environ, ORBITFB_DISABLE_NUMBA="1" if disable else "0")
    res = subprocess.run([sys.executable, "-c", WORKER, str(repeat)], env=env, capture_output=True, text=True, check=True)
    return json.loads(res.stdout.strip().splitlines()[-1])


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args(argv)
    fast = run_backend(False, args.repeat)
    slow = run_backend(True, args.repeat)
    if fast["backend"] != "numba":
        print("numba is unavailable; both runs used the numpy path")
    print(f"{'kernel':<30} {'numba [ms]':>11} {'numpy [ms]':>11} {'speed-up':>9}")
    for key, label in LABELS.items():
        a, b = fast[key] * 1e3, slow[key] * 1e3
        print(f"{label:<30} {a:>11.2f} {b:>11.2f} {b / a:>8.2f}x")
    return 0


if __name__ == "__main__":
    sys.exit(main())
