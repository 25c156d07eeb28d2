"""Benchmark the hot kernels on both backends.

Runs the thinning simulator and the Euler-Maruyama ensemble under the
compiled (numba) backend and the pure-Python/numpy fallback
(``QLIMITS_NUMBA=0``), and prints a comparison table.  The fallback is
exercised in a subprocess because the backend is chosen at import time.

Usage: python benchmarks/bench_kernels.py [--quick]
"""

from __future__ import annotations

import argparse
import json
import os
import subprocess
import sys
import time

WORKLOAD = r"""
import json, sys, time
import numpy as np
from qlimits._backend import backend_name
from qlimits.rates import ScalingScheme
from qlimits.fluid import solve_fluid
from qlimits import mcsim, diffusion

quick = json.loads(sys.argv[1])
sim_n = 400 if quick else 4000
sim_T = 5.0 if quick else 10.0
em_paths = 200 if quick else 2000
em_T = 2.0 if quick else 10.0

out = {"backend": backend_name()}

sch = ScalingScheme.constant(q0=1.0, x0=0.0, lam=1.2, alpha=0.0, k=1.0,
                             gamma=0.0, mu=1.0, theta=0.8)

# warm-up triggers JIT compilation so timings measure steady state
mcsim.simulate(mcsim.SimConfig(scheme=sch, n=2, horizon=1.0, seed=1))
t0 = time.perf_counter()
sp = mcsim.simulate(mcsim.SimConfig(scheme=sch, n=sim_n, horizon=sim_T, seed=7))
dt = time.perf_counter() - t0
out["thinning_events"] = len(sp.times)
out["thinning_seconds"] = dt

fp = solve_fluid(1.0, sch.lam, sch.mu, sch.theta, sch.k, em_T)
diffusion.sde_terminals(0.0, sch, fp, 1e-3, seed=1, n_paths=4)
t0 = time.perf_counter()
diffusion.sde_terminals(0.0, sch, fp, 1e-3, seed=2, n_paths=em_paths)
out["em_steps"] = em_paths * int(em_T / 1e-3)
out["em_seconds"] = time.perf_counter() - t0

print(json.dumps(out))
"""


def run_backend(numba_flag: str, quick: bool) -> dict:
    env = dict(os.environ, QLIMITS_NUMBA=numba_flag)
    proc = subprocess.run(
        [sys.executable, "-c", WORKLOAD, json.dumps(quick)],
        env=env, capture_output=True, text=True, check=True)
    return json.loads(proc.stdout.strip().splitlines()[-1])


def main() -> None:
    ap = argparse.ArgumentParser()
    ap.add_argument("--quick", action="store_true",
                    help="small workload (fallback-friendly)")
    args = ap.parse_args()

    rows = []
    for flag in ("1", "0"):
        t0 = time.perf_counter()
        rows.append((run_backend(flag, args.quick), time.perf_counter() - t0))

    print(f"{'backend':<10}{'thinning':>14}{'ev/s':>12}{'em':>12}{'step/s':>12}")
    for info, _ in rows:
        ev_rate = info["thinning_events"] / info["thinning_seconds"]
        em_rate = info["em_steps"] / info["em_seconds"]
        print(f"{info['backend']:<10}{info['thinning_seconds']:>12.3f}s"
              f"{ev_rate:>12.3g}{info['em_seconds']:>10.3f}s{em_rate:>12.3g}")
    a, b = rows[0][0], rows[1][0]
    if a["backend"] != b["backend"]:
        print(f"speedup: thinning x{b['thinning_seconds'] / a['thinning_seconds']:.1f}, "
              f"em x{b['em_seconds'] / a['em_seconds']:.1f}")


if __name__ == "__main__":
    main()
