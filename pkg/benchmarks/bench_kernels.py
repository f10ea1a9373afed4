"""Compare the compiled and pure-numpy MCMC kernels on one lattice.

    python benchmarks/bench_kernels.py --side 32 --sweeps 200

Each backend runs in its own process, since the backend is fixed at import time by
``RANDGRAD_NUMBA``.
"""

import argparse
import json
import os
import subprocess
import sys

WORKER = """
import json, sys, time
import numpy as np
from randgrad import _accel
from randgrad.lattice import BoxRegion
from randgrad.sampler import Chain, PotentialSpec

side, d, sweeps = int(sys.argv[1]), int(sys.argv[2]), int(sys.argv[3])
box = BoxRegion([0] * d, [side - 1] * d)
out = {"backend": _accel.backend(), "sites": box.n}
for name, pot, step in [
    ("heat_bath", PotentialSpec(), "heat_bath_sweep"),
    ("metropolis", PotentialSpec("quadratic_cosine", 0.5, 0.2), "metropolis_sweep"),
]:
    ch = Chain(box, pot, [0.3] + [0.0] * (d - 1), seed=1)
    getattr(ch, step)()  # compile / warm up
    t0 = time.perf_counter()
    for _ in range(sweeps):
        getattr(ch, step)()
    out[name] = (time.perf_counter() - t0) / sweeps
t0 = time.perf_counter()
for _ in range(sweeps):
    ch.site_forces()
out["site_forces"] = (time.perf_counter() - t0) / sweeps
print(json.dumps(out))
"""


def measure(flag: str, side: int, d: int, sweeps: int) -> dict:
    env = dict(os.environ, RANDGRAD_NUMBA=flag)
    res = subprocess.run(
        [sys.executable, "-c", WORKER, str(side), str(d), str(sweeps)], env=env, capture_output=True, text=True, check=True
    )
    return json.loads(res.stdout)


def main(argv=None) -> None:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--side", type=int, default=32)
    p.add_argument("--d", type=int, default=2)
    p.add_argument("--sweeps", type=int, default=200)
    args = p.parse_args(argv)

    fast = measure("1", args.side, args.d, args.sweeps)
    slow = measure("0", args.side, args.d, args.sweeps)
    print(f"lattice {args.side}^{args.d} ({fast['sites']} sites), {args.sweeps} sweeps, ms per sweep")
    print(f"{'kernel':<12} {fast['backend']:>10} {slow['backend']:>10} {'speedup':>8}")
    for k in ("heat_bath", "metropolis", "site_forces"):
        print(f"{k:<12} {1e3 * fast[k]:>10.3f} {1e3 * slow[k]:>10.3f} {slow[k] / fast[k]:>7.1f}x")


if __name__ == "__main__":
    main()
