"""Time a dengue-scale BASE fit (3 chains x 20000 iterations) and check seed reproducibility.

    python scripts/benchmark.py
"""

import argparse
import math
import time

import numpy as np

from runoff.inference import SamplerConfig, run_mcmc
from runoff.model import ModelSpec
from runoff.simulator import SimulationScenario, simulate
from runoff.triangle import censor


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=1)
    args = p.parse_args()
    spec = ModelSpec("BASE", 68, 10)
    full, _ = simulate(SimulationScenario(spec, hyper={"mu": math.log(20.0)}, seed=args.seed))
    tri = censor(full, 68)
    cfg = SamplerConfig(seed=args.seed, threads=args.threads)
    t0 = time.perf_counter()
    a = run_mcmc(tri, spec, cfg=cfg)
    print(f"fit: {time.perf_counter() - t0:.1f} s, {len(a)} draws")
    b = run_mcmc(tri, spec, cfg=cfg)
    print("bit-identical rerun:", np.array_equal(a.theta, b.theta) and np.array_equal(a.phi, b.phi))
    print({k: round(v, 3) for k, v in a.acceptance.items()})


if __name__ == "__main__":
    main()
