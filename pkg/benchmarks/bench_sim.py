"""Benchmark the RK4 simulation kernel: numba JIT vs pure-numpy fallback.

Runs the pinned 4-DG load-change scenario under both backends and reports
wall times and the speedup.  Usage: python3 benchmarks/bench_sim.py
"""

import os
import time

import numpy as np

from mgcodesign.codesign import DesignParams, design_global, design_local
from mgcodesign.equilibrium import optimize_reference
from mgcodesign.grid import benchmark_microgrid
from mgcodesign.sim import load_change_scenario, simulate
from mgcodesign.sim.kernels import HAS_NUMBA


def run_with(backend, mg, sp, local, K, scenario):
    os.environ["MGCODESIGN_BACKEND"] = backend
    try:
        t0 = time.perf_counter()
        traj = simulate(mg, sp, local, K, scenario)
        return time.perf_counter() - t0, traj
    finally:
        os.environ.pop("MGCODESIGN_BACKEND", None)


def main():
    mg = benchmark_microgrid(4, topology_seed=1)
    sp = optimize_reference(mg)
    params = DesignParams(graph_mode="hard")
    local = design_local(mg, params)
    result = design_global(mg, local, params)
    scenario = load_change_scenario(t_end=10.0)
    n_steps = scenario.n_steps
    print(f"scenario: {mg.n_dgs} DGs, {mg.n_lines} lines, "
          f"{n_steps} RK4 steps at h = {scenario.h:g} s")

    t_np, traj_np = run_with("numpy", mg, sp, local, result.K, scenario)
    print(f"numpy fallback : {t_np:8.3f} s "
          f"({n_steps / t_np / 1e3:.0f}k steps/s)")

    if not HAS_NUMBA:
        print("numba unavailable; fallback only")
        return

    # warm the JIT cache before timing
    run_with("numba", mg, sp, local, result.K,
             load_change_scenario(t_end=0.01))
    t_nb, traj_nb = run_with("numba", mg, sp, local, result.K, scenario)
    print(f"numba @njit    : {t_nb:8.3f} s "
          f"({n_steps / t_nb / 1e3:.0f}k steps/s)")
    print(f"speedup        : {t_np / t_nb:8.1f}x")
    dev = float(np.abs(traj_np.V - traj_nb.V).max())
    print(f"max |dV| between backends: {dev:.3e}")


if __name__ == "__main__":
    main()
