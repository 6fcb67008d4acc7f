"""Scenario-sweep evaluation, baselines and sensor-noise injection."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..encoders import Observation, StateBatch
from ..nn import load_checkpoint
from ..sim import KEEP, HighwaySim, ScenarioConfig

EVAL_NS = tuple(range(30, 91, 5))
SEEDS_PER_N = 20
EVAL_SEED_BASE = 10_000
EPISODE_LENGTH = 250
REPORT_COLUMNS = ("row_type", "n", "lanes", "seed", "episode_return", "mean", "std", "count")


def eval_seed(n: int, i: int) -> int:
    """Scenario seed of the ``i``-th evaluation episode with ``n`` vehicles."""
    return EVAL_SEED_BASE + 100 * n + i


@dataclass(frozen=True)
class NoiseSpec:
    """Additive Gaussian noise on ``dr`` and ``dv``; ``dl`` stays exact."""

    sigma_dr: float = 0.0
    sigma_dv: float = 0.0

    def __post_init__(self):
        if self.sigma_dr < 0 or self.sigma_dv < 0:
            raise ValueError("noise standard deviations must be non-negative")

    def apply(self, obs: Observation, rng: np.random.Generator) -> Observation:
        """Perturb a copy of ``obs``; noise is always drawn so sigma 0 is a bit-exact no-op."""
        dyn = obs.dynamic.copy()
        k = len(dyn)
        dyn[:, 0] += (rng.standard_normal(k) * self.sigma_dr).astype(np.float32)
        dyn[:, 1] += (rng.standard_normal(k) * self.sigma_dv).astype(np.float32)
        return Observation(dyn, obs.static)


NO_NOISE = NoiseSpec()
NOISE_LEVELS = (NoiseSpec(0.025, 0.025), NoiseSpec(0.05, 0.05))


class KeepAgent:
    name = "no-lane-change"

    def act(self, sim: HighwaySim, obs: Observation) -> int:
        return KEEP


class RuleBasedAgent:
    name = "rule-based"

    def act(self, sim: HighwaySim, obs: Observation) -> int:
        return sim.rule_based_action()


class GreedyAgent:
    """Acts greedily on a scoring function of the observation (Q-values or logits)."""

    def __init__(self, scorer, name: str = "learned"):
        self.scorer = scorer
        self.name = name

    def act(self, sim: HighwaySim, obs: Observation) -> int:
        return int(np.argmax(self.scorer(StateBatch.from_observations([obs]))[0]))


BASELINES = {"no-lane-change": KeepAgent, "rule-based": RuleBasedAgent}


def load_agent(checkpoint: str | Path) -> GreedyAgent:
    """Greedy agent from a DQN or PPO checkpoint."""
    desc, _ = load_checkpoint(checkpoint)
    algo = desc.get("algo")
    if algo == "dqn":
        from ..qlearning import QEnsemble
        ens = QEnsemble.load(checkpoint)
        return GreedyAgent(ens.q_values, f"dqn-{ens.kind}")
    if algo == "ppo":
        from ..ppo import PpoAgent
        agent = PpoAgent.load(checkpoint)
        return GreedyAgent(agent.policy.logits, "ppo-deepset")
    raise ValueError(f"unknown checkpoint algorithm {algo!r}")


@dataclass
class EvalReport:
    """Per-scenario returns plus per-n aggregates."""

    rows: list[tuple[int, int, int, float]] = field(default_factory=list)  # (n, lanes, seed, return)

    def sorted(self) -> EvalReport:
        return EvalReport(sorted(self.rows, key=lambda r: (r[1], r[0], r[2])))

    def returns(self, n: int | None = None) -> np.ndarray:
        return np.array([r[3] for r in self.rows if n is None or r[0] == n], dtype=np.float64)

    def mean(self, n: int | None = None) -> float:
        return float(self.returns(n).mean())

    def aggregates(self) -> list[tuple[int, int, float, float, int]]:
        """``(n, lanes, mean, std, count)`` per bucket; std is the population deviation."""
        out = []
        for n, lanes in sorted({(r[0], r[1]) for r in self.rows}, key=lambda k: (k[1], k[0])):
            vals = np.array([r[3] for r in self.rows if r[0] == n and r[1] == lanes])
            out.append((n, lanes, float(vals.mean()), float(vals.std()), len(vals)))
        return out

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(REPORT_COLUMNS)
            for n, lanes, seed, ret in self.sorted().rows:
                writer.writerow(("scenario", n, lanes, seed, repr(ret), "", "", ""))
            for n, lanes, mean, std, count in self.aggregates():
                writer.writerow(("aggregate", n, lanes, "", "", repr(mean), repr(std), count))

    @classmethod
    def from_csv(cls, path: str | Path) -> EvalReport:
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            if tuple(reader.fieldnames or ()) != REPORT_COLUMNS:
                raise ValueError(f"{path} is not an evaluation report")
            rows = [(int(r["n"]), int(r["lanes"]), int(r["seed"]), float(r["episode_return"]))
                    for r in reader if r["row_type"] == "scenario"]
        return cls(rows)


def run_episode(agent, config: ScenarioConfig, noise: NoiseSpec = NO_NOISE,
                noise_seed: int = 0) -> float:
    """Undiscounted return of one episode with the safety module active."""
    sim = HighwaySim(config)
    rng = np.random.default_rng(noise_seed)
    obs = sim.observe()
    total = 0.0
    while not sim.done:
        action = agent.act(sim, noise.apply(obs, rng))
        obs, r, _ = sim.step(action)
        total += r
    return total


def evaluate_policy(agent, lanes: int = 3, ns=EVAL_NS, seeds_per_n: int = SEEDS_PER_N,
                    noise: NoiseSpec = NO_NOISE, episode_length: int = EPISODE_LENGTH,
                    driver_pool_seed: int = 0) -> EvalReport:
    rows = []
    for n in ns:
        for i in range(seeds_per_n):
            seed = eval_seed(n, i)
            config = ScenarioConfig(n, lanes, seed, episode_length, driver_pool_seed)
            rows.append((n, lanes, seed, run_episode(agent, config, noise, noise_seed=seed)))
    return EvalReport(rows)


def evaluate_agent(checkpoint: str | Path, lanes: int = 3, noise: NoiseSpec = NO_NOISE, **kwargs) -> EvalReport:
    return evaluate_policy(load_agent(checkpoint), lanes, noise=noise, **kwargs)


def run_baseline(kind: str, lanes: int = 3, **kwargs) -> EvalReport:
    if kind not in BASELINES:
        raise ValueError(f"unknown baseline {kind!r}; expected one of {sorted(BASELINES)}")
    return evaluate_policy(BASELINES[kind](), lanes, **kwargs)
