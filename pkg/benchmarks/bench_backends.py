#!/usr/bin/env python3
"""Side-by-side benchmark of the numba kernels and the pure-numpy fallback.

Each backend runs in its own interpreter (the backend is fixed at import
time by CAVSME_DISABLE_NUMBA).  Both integrate the same trajectories from
the same seeds, so besides the timings the final states are compared.

    python benchmarks/bench_backends.py [--steps N]
"""

import argparse
import json
import os
import subprocess
import sys
import time

import numpy as np

CASES = {
    # name: (preset, overrides)
    "zeno nonlinear milstein": ("fig3_zeno", {}),
    "rabi nonlinear euler": ("fig3_rabi", {"scheme": "euler"}),
    "dicke linear blocks": ("dicke_fig2", {}),
    "superposition sse": ("superposition", {}),
    "photon counting": ("counting", {}),
    "discrete oracle": ("continuum_limit", {}),
}


def worker(steps: int) -> None:
    from cavsme import BACKEND
    from cavsme.config import from_preset
    from cavsme.experiments import _table, run_trajectory

    out = {"backend": BACKEND, "cases": {}}
    for name, (preset, extra) in CASES.items():
        cfg = from_preset(preset, {**extra, "trajectories": "1"})
        n = min(steps, cfg.n_steps())
        t_end = repr(n * cfg.params.dt)
        cfg = from_preset(preset, {**extra, "trajectories": "1", "t_end": t_end,
                                   "record_stride": str(n)})
        warm = from_preset(preset, {**extra, "trajectories": "1",
                                    "t_end": repr(cfg.params.dt), "record_stride": "1"})
        table = _table(cfg) if cfg.equation == "discrete" else None
        run_trajectory(warm, 0, table)  # compilation or cache load is not timed
        t0 = time.perf_counter()
        rec = run_trajectory(cfg, 0, table)
        el = time.perf_counter() - t0
        out["cases"][name] = {"steps": n, "seconds": el,
                              "final": np.asarray(rec.populations[-1]).tolist()}
    print(json.dumps(out))


def run_backend(disable: bool, steps: int) -> dict:
    env = dict(os.environ)
    env["CAVSME_DISABLE_NUMBA"] = "1" if disable else "0"
    res = subprocess.run([sys.executable, __file__, "--worker", "--steps", str(steps)],
                         env=env, capture_output=True, text=True, check=True)
    return json.loads(res.stdout.strip().splitlines()[-1])


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    ap.add_argument("--steps", type=int, default=2000, help="steps per case (default 2000)")
    ap.add_argument("--worker", action="store_true", help=argparse.SUPPRESS)
    args = ap.parse_args()
    if args.worker:
        worker(args.steps)
        return

    fast = run_backend(False, args.steps)
    slow = run_backend(True, args.steps)
    print(f"backends: {fast['backend']} vs {slow['backend']}, {args.steps} steps per case\n")
    print(f"{'case':<26} {'numba us/step':>14} {'numpy us/step':>14} {'speedup':>8} "
          f"{'max |dp|':>10}")
    print("-" * 76)
    for name in CASES:
        a, b = fast["cases"][name], slow["cases"][name]
        ua = 1e6 * a["seconds"] / a["steps"]
        ub = 1e6 * b["seconds"] / b["steps"]
        dp = float(np.max(np.abs(np.subtract(a["final"], b["final"]))))
        print(f"{name:<26} {ua:>14.2f} {ub:>14.1f} {ub / ua:>7.0f}x {dp:>10.1e}")


if __name__ == "__main__":
    main()
