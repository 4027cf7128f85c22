"""Time the hot kernels under both backends.

Each backend runs in its own interpreter because HERD_PRICER_BACKEND is read
at import.  Numba timings exclude the first (compiling) call.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--runs 200]
"""
import argparse
import json
import os
import subprocess
import sys
import time

WORKER = r"""
import json, sys, time
import numpy as np
from herd_pricer import signals as sig
from herd_pricer._backend import BACKEND
from herd_pricer.stage_game import price_grids, payoff_matrices, sale_matrices
from herd_pricer.nash import fictitious_play
from herd_pricer.dynamics import DynamicsConfig, make_table, simulate_batch

repeat, runs = int(sys.argv[1]), int(sys.argv[2])
s = sig.make_family("Tent", lo=0.3)
mu = 0.6
g0, g1 = price_grids(mu, s, 201)
a, b, _, _ = payoff_matrices(mu, g0, g1, s)
cfg = DynamicsConfig(T_max=2000)
table = make_table(s, cfg)

def best(fn):
    fn()  # warm-up: compiles under numba, fills caches under numpy
    out = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        out.append(time.perf_counter() - t0)
    return min(out)

res = {
    "backend": BACKEND,
    "sale_matrices_201x201": best(lambda: sale_matrices(mu, g0, g1, s)),
    "fictitious_play_5000": best(lambda: fictitious_play(a, b, 5000)),
    f"trajectories_{runs}x2000": best(lambda: simulate_batch(s, cfg, runs, seed=1, table=table, detail_runs=0)),
}
print(json.dumps(res))
"""


def run(backend, repeat, runs):
    env = dict(os.environ, HERD_PRICER_BACKEND=backend)
    out = subprocess.run([sys.executable, "-c", WORKER, str(repeat), str(runs)], env=env,
                         capture_output=True, text=True, check=True)
    return json.loads(out.stdout.strip().splitlines()[-1])


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--runs", type=int, default=200)
    args = ap.parse_args(argv)

    start = time.perf_counter()
    rows = {b: run(b, args.repeat, args.runs) for b in ("numba", "numpy")}
    keys = [k for k in rows["numba"] if k != "backend"]
    print(f"{'kernel':28s} {'numba [ms]':>12s} {'numpy [ms]':>12s} {'speed-up':>9s}")
    for k in keys:
        nb, npy = rows["numba"][k], rows["numpy"][k]
        print(f"{k:28s} {1e3 * nb:12.2f} {1e3 * npy:12.2f} {npy / nb:8.1f}x")
    print(f"total wall time {time.perf_counter() - start:.1f}s")


if __name__ == "__main__":
    main()
