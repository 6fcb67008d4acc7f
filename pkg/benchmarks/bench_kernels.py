"""Compare the compiled simulator kernels with the numpy fallback.

    python benchmarks/bench_kernels.py --episodes 3 --vehicles 60

Both backends run the same seeded episodes; the script checks that the
trajectories agree bit for bit and reports wall time per agent step.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from deepsetq.sim import HighwaySim, ScenarioConfig, kernels


def run(backend: str, episodes: int, vehicles: int, lanes: int, length: int):
    states = []
    start = time.perf_counter()
    for seed in range(episodes):
        sim = HighwaySim(ScenarioConfig(vehicles, lanes, seed, length), backend=backend)
        rng = np.random.default_rng(seed)
        while not sim.done:
            sim.step(int(rng.integers(3)))
        states.append(sim.pos.tobytes() + sim.speed.tobytes() + sim.lane.tobytes())
    return time.perf_counter() - start, states


def main(argv=None) -> int:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--episodes", type=int, default=3)
    p.add_argument("--vehicles", type=int, default=60)
    p.add_argument("--lanes", type=int, default=3, choices=(3, 5))
    p.add_argument("--length", type=int, default=100, help="agent steps per episode")
    args = p.parse_args(argv)
    if kernels.compiled is None:
        print("compiled kernels are not built; run `pip install -e . --no-build-isolation` first")
        return 1
    steps = args.episodes * args.length
    results = {}
    for backend in ("compiled", "python"):
        wall, states = run(backend, args.episodes, args.vehicles, args.lanes, args.length)
        results[backend] = states
        print(f"{backend:8s} {wall:8.3f} s  {1e3 * wall / steps:7.3f} ms/agent step")
    same = results["compiled"] == results["python"]
    print("trajectories identical:", same)
    return 0 if same else 3


if __name__ == "__main__":
    raise SystemExit(main())
