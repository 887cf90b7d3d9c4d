"""Compare the compiled and pure-NumPy shallow-water steppers.

Both backends advance the same double-jet state on the 100x60 desk grid;
the script reports wall time per model step for each and the ratio, and
checks that the trajectories agree to floating-point roundoff (the loop
orders differ, so agreement is relative, not bitwise).

Run from the repository root:

    python3 benchmarks/bench_swe_step.py [--steps N] [--repeats K]
"""

import argparse
import time

import numpy as np

from ensda.gridfield import Grid2D
from ensda.models.swe import SweConfig, available_backends, double_jet_state, step_swe


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--steps", type=int, default=200, help="model steps per timed repeat")
    ap.add_argument("--repeats", type=int, default=5, help="timed repeats (best is reported)")
    args = ap.parse_args()

    grid = Grid2D(100, 60, 2200.0, 2200.0)
    cfg = SweConfig(H_depth=230.0, g=9.81, f=1.2e-4, dx=2200.0, dy=2200.0, dt_num=10.0)
    state = double_jet_state(grid, cfg)
    # move off the analytic steady state so no branch gets trivial zeros
    rng = np.random.default_rng(7)
    vals = state.values.copy()
    vals[: grid.n_cells] += 0.05 * rng.standard_normal(grid.n_cells)
    state = type(state)(grid, 3, vals)

    backends = available_backends()
    print(f"backends available: {', '.join(backends)}")
    print(f"grid 100x60, {args.steps} steps x {args.repeats} repeats, best repeat shown\n")

    results = {}
    outputs = {}
    for backend in backends:
        step_swe(cfg, state, 5, backend=backend)  # warm up
        best = float("inf")
        for _ in range(args.repeats):
            t0 = time.perf_counter()
            out = step_swe(cfg, state, args.steps, backend=backend)
            best = min(best, time.perf_counter() - t0)
        results[backend] = best
        outputs[backend] = out.values
        print(f"{backend:>8}: {best:.3f} s total, {1e3 * best / args.steps:.3f} ms/step")

    if len(backends) == 2:
        scale = np.abs(outputs["numpy"]).max()
        diff = np.abs(outputs["cython"] - outputs["numpy"]).max() / scale
        print(f"\nspeedup (numpy / cython): {results['numpy'] / results['cython']:.2f}x")
        print(f"max relative trajectory difference: {diff:.2e}")
        if diff > 1e-12:
            raise SystemExit("backend outputs diverged beyond roundoff")


if __name__ == "__main__":
    main()
