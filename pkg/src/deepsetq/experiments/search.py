"""Random search over discrete architecture spaces."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from ..encoders import default_arch
from ..qlearning import QEnsemble, ReplayBuffer, TrainConfig, Trainer
from ..sim import ScenarioConfig
from .evaluation import GreedyAgent, run_episode

# Grids larger than this are sampled with replacement instead of enumerated.
ENUMERATION_LIMIT = 10_000
PROBE_SEED_BASE = 20_000
PROBE_NS = (30, 45, 60)


@dataclass(frozen=True)
class SearchSpace:
    kind: str
    dims: tuple[tuple[str, tuple], ...]

    @property
    def names(self) -> list[str]:
        return [name for name, _ in self.dims]

    @property
    def size(self) -> int:
        return math.prod(len(values) for _, values in self.dims)

    def point(self, index: int) -> dict:
        """The ``index``-th grid point in row-major order over ``dims``."""
        if not 0 <= index < self.size:
            raise IndexError(index)
        out = {}
        for name, values in reversed(self.dims):
            index, k = divmod(index, len(values))
            out[name] = values[k]
        return {name: out[name] for name in self.names}

    def points(self):
        for combo in itertools.product(*(values for _, values in self.dims)):
            yield dict(zip(self.names, combo))

    def contains(self, point: dict) -> bool:
        return set(point) == set(self.names) and all(point[n] in v for n, v in self.dims)

    def sample(self, budget: int, rng: np.random.Generator) -> list[dict]:
        """Uniform draws: without replacement (capped at the grid size) for small grids."""
        if budget < 0:
            raise ValueError("budget must be non-negative")
        if self.size <= ENUMERATION_LIMIT:
            idx = rng.choice(self.size, size=min(budget, self.size), replace=False)
        else:
            idx = rng.integers(0, self.size, size=budget)
        return [self.point(int(i)) for i in idx]

    def arch(self, point: dict) -> dict:
        """Network architecture for a grid point."""
        arch = default_arch(self.kind)
        if self.kind == "fixed":
            arch["head"] = [point["width"]] * point["layers"]
        elif self.kind == "deepset":
            arch["phi"] = [point["phi_dim"]] * point["phi_layers"]
            arch["rho"] = [point["rho_dim"]] * point["rho_layers"]
        elif self.kind == "set2set":
            arch["lstm_layers"] = point["lstm_layers"]
            arch["dense"] = point["dense"]
            arch["iterations"] = point["iterations"]
        elif self.kind == "grid":
            k = point["conv_layers"]
            arch["filters"] = [point["filters"]] * k
            arch["kernels"] = [[point["kernel_h"], point["kernel_w"]]] * k
            arch["strides"] = [[point["stride_h"], point["stride_w"]]] * k
        return arch


SEARCH_SPACES = {
    "fixed": SearchSpace("fixed", (("width", (50, 100, 200)), ("layers", (2, 3)))),
    "deepset": SearchSpace("deepset", (("phi_layers", (1, 2, 3)), ("phi_dim", (5, 20, 100)),
                                       ("rho_layers", (1, 2, 3)), ("rho_dim", (5, 20, 100)))),
    "set2set": SearchSpace("set2set", (("lstm_layers", (1, 2)), ("dense", (32, 64, 100)),
                                       ("iterations", (5, 20, 40)))),
    "grid": SearchSpace("grid", (("conv_layers", (2, 3)), ("kernel_h", (7, 3, 2)), ("kernel_w", (2, 1)),
                                 ("stride_h", (2, 1)), ("stride_w", (2, 1)), ("filters", (8, 16, 32)))),
}


def probe_scenarios(lanes: int = 3, episode_length: int = 250) -> list[ScenarioConfig]:
    return [ScenarioConfig(n, lanes, PROBE_SEED_BASE + i, episode_length) for i, n in enumerate(PROBE_NS)]


def random_search(kind: str, buffer: ReplayBuffer, budget: int = 20, train_steps: int = 2_000,
                  seed: int = 0, space: SearchSpace | None = None, probes=None) -> list[dict]:
    """Train each sampled configuration briefly and rank by mean probe return (best first)."""
    space = space if space is not None else SEARCH_SPACES[kind]
    if space.size == 0:
        raise ValueError("search space is empty")
    rng = np.random.default_rng(seed)
    probes = probes if probes is not None else probe_scenarios()
    results = []
    for i, point in enumerate(space.sample(budget, rng)):
        arch = space.arch(point)
        ens = QEnsemble(arch, TrainConfig(seed=seed + i, steps=train_steps, log_every=max(train_steps, 1)))
        Trainer(ens, buffer).run()
        agent = GreedyAgent(ens.q_values)
        score = float(np.mean([run_episode(agent, cfg, noise_seed=cfg.seed) for cfg in probes]))
        results.append({"rank": 0, "sample": i, "config": point, "score": score})
    results.sort(key=lambda r: (-r["score"], r["sample"]))
    for rank, r in enumerate(results, 1):
        r["rank"] = rank
    return results
