"""On-policy PPO with Deep Set policy and value networks."""

from __future__ import annotations

import csv
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .encoders import N_ACTIONS, Network, Observation, StateBatch, default_arch
from .nn import Adam, load_checkpoint, save_checkpoint
from .qlearning import BANDIT_BEST, BANDIT_STATES, bandit_reward
from .sim import HighwaySim, ScenarioConfig

PPO_METRIC_COLUMNS = ("iteration", "env_steps", "mean_episode_return", "policy_loss", "value_loss")


@dataclass
class PpoConfig:
    gamma: float = 0.9
    clip: float = 0.2
    lr: float = 5e-4
    batch_size: int = 64
    epochs: int = 4
    episodes: int = 8
    horizon: int = 20
    normalize_advantages: bool = True
    seed: int = 0
    env_steps: int = 200_000

    def __post_init__(self):
        if not 0.0 < self.clip < 1.0:
            raise ValueError(f"clip must lie in (0, 1), got {self.clip}")
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError(f"gamma must lie in [0, 1), got {self.gamma}")
        if self.horizon < 1 or self.epochs < 1 or self.batch_size < 1 or self.episodes < 0:
            raise ValueError("horizon, epochs and batch_size must be positive, episodes non-negative")

    def to_dict(self) -> dict:
        return asdict(self)


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits.astype(np.float64) - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


class PolicyNet:
    """Deep Set encoder with a dense head ending in a 3-way softmax."""

    def __init__(self, arch: dict | None = None, rng: np.random.Generator | None = None,
                 network: Network | None = None):
        self.net = network if network is not None else Network(arch or default_arch("deepset"), N_ACTIONS, rng=rng)

    def logits(self, states: StateBatch, train: bool = False) -> np.ndarray:
        return self.net.forward(states, train)

    def probs(self, states: StateBatch) -> np.ndarray:
        return softmax(self.logits(states))

    def distribution(self, obs: Observation) -> np.ndarray:
        return self.probs(StateBatch.from_observations([obs]))[0]


def sample_action(probs: np.ndarray, u: float) -> int:
    """Inverse-CDF draw of an action for a uniform ``u`` in [0, 1)."""
    return min(int(np.searchsorted(np.cumsum(probs), u, side="right")), len(probs) - 1)


@dataclass
class RolloutBuffer:
    """Collected steps; log-probabilities are those of the collecting policy."""

    states: list[Observation] = field(default_factory=list)
    actions: list[int] = field(default_factory=list)
    log_probs: list[float] = field(default_factory=list)
    rewards: list[float] = field(default_factory=list)
    episode_ids: list[int] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.actions)

    def add(self, state: Observation, action: int, log_prob: float, reward: float, episode: int) -> None:
        self.states.append(state)
        self.actions.append(int(action))
        self.log_probs.append(float(log_prob))
        self.rewards.append(float(reward))
        self.episode_ids.append(int(episode))

    def episode_returns(self) -> np.ndarray:
        ids = np.asarray(self.episode_ids)
        rewards = np.asarray(self.rewards)
        return np.array([rewards[ids == e].sum() for e in np.unique(ids)])


class HighwayEnv:
    """Episodic wrapper sampling a fresh scenario on every reset."""

    def __init__(self, lanes: int = 3, n_range: tuple[int, int] = (30, 60), episode_length: int = 250,
                 seed: int = 0, driver_pool_seed: int = 0):
        self.lanes = lanes
        self.n_range = n_range
        self.episode_length = episode_length
        self.driver_pool_seed = driver_pool_seed
        self.rng = np.random.default_rng(seed)
        self.sim: HighwaySim | None = None

    def reset(self) -> Observation:
        n = int(self.rng.integers(self.n_range[0], self.n_range[1] + 1))
        seed = int(self.rng.integers(2**31))
        self.sim = HighwaySim(ScenarioConfig(n, self.lanes, seed, self.episode_length, self.driver_pool_seed))
        return self.sim.observe()

    def step(self, action: int) -> tuple[Observation, float, bool]:
        obs, r, _ = self.sim.step(action)
        return obs, r, self.sim.done


class BanditEnv:
    """Two alternating states; keep pays 1 in the first, left pays 1 in the second."""

    def __init__(self, episode_length: int = 25):
        self.episode_length = episode_length
        self.t = 0

    def reset(self) -> Observation:
        self.t = 0
        return BANDIT_STATES[0]

    def step(self, action: int) -> tuple[Observation, float, bool]:
        r = bandit_reward(self.t % 2, action)
        self.t += 1
        return BANDIT_STATES[self.t % 2], r, self.t >= self.episode_length


def bandit_optimal_frequency(policy: PolicyNet) -> float:
    """Mean probability of the rewarded action over the two bandit states."""
    p = policy.probs(StateBatch.from_observations(BANDIT_STATES))
    return float(np.mean([p[s, a] for s, a in enumerate(BANDIT_BEST)]))


class PhaseEnv:
    """Constant reward 1; the static features expose the step index within the horizon."""

    def __init__(self, episode_length: int = 40, horizon: int = 20):
        self.episode_length = episode_length
        self.horizon = horizon
        self.t = 0

    def _obs(self) -> Observation:
        phase = (self.t % self.horizon) / self.horizon
        return Observation(np.zeros((0, 3), np.float32), np.array([phase, 0.0, 0.0], np.float32))

    def reset(self) -> Observation:
        self.t = 0
        return self._obs()

    def step(self, action: int) -> tuple[Observation, float, bool]:
        self.t += 1
        return self._obs(), 1.0, self.t >= self.episode_length


def collect_rollout(policy: PolicyNet, env, episodes: int, rng: np.random.Generator,
                    buffer: RolloutBuffer | None = None) -> RolloutBuffer:
    """Run the stochastic policy for ``episodes`` episodes."""
    buffer = buffer if buffer is not None else RolloutBuffer()
    for e in range(episodes):
        obs = env.reset()
        done = False
        while not done:
            p = policy.distribution(obs)
            action = sample_action(p, rng.random())
            nxt, r, done = env.step(action)
            buffer.add(obs, action, np.log(p[action]), r, e)
            obs = nxt
    return buffer


def segment_returns(rewards, episode_ids, gamma: float, horizon: int) -> np.ndarray:
    """Discounted Monte Carlo return to the end of each ``horizon``-step segment of an episode."""
    rewards = np.asarray(rewards, dtype=np.float64)
    episode_ids = np.asarray(episode_ids)
    out = np.zeros_like(rewards)
    start = 0
    while start < len(rewards):
        end = start
        while end < len(rewards) and episode_ids[end] == episode_ids[start]:
            end += 1
        for seg in range(start, end, horizon):
            stop = min(seg + horizon, end)
            acc = 0.0
            for t in range(stop - 1, seg - 1, -1):
                acc = rewards[t] + gamma * acc
                out[t] = acc
        start = end
    return out


def compute_advantages(buffer: RolloutBuffer, value_net: Network | None, gamma: float = 0.9,
                       horizon: int = 20, normalize: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """``(advantages, returns)`` with ``A_t = G_t - V(s_t)``, optionally standardized."""
    returns = segment_returns(buffer.rewards, buffer.episode_ids, gamma, horizon)
    if value_net is None:
        values = np.zeros_like(returns)
    else:
        values = value_net.forward(StateBatch.from_observations(buffer.states))[:, 0].astype(np.float64)
    adv = returns - values
    if normalize and len(adv) > 1:
        adv = (adv - adv.mean()) / (adv.std() + 1e-8)
    return adv, returns


def clipped_surrogate(ratio, advantage, clip: float = 0.2) -> np.ndarray:
    """Per-sample ``min(R * A, clip(R, 1 - eps, 1 + eps) * A)``."""
    ratio = np.asarray(ratio, dtype=np.float64)
    advantage = np.asarray(advantage, dtype=np.float64)
    return np.minimum(ratio * advantage, np.clip(ratio, 1.0 - clip, 1.0 + clip) * advantage)


def clipped_surrogate_grad(ratio, advantage, clip: float = 0.2) -> np.ndarray:
    """Derivative of :func:`clipped_surrogate` in the ratio: ``A`` where unclipped, else 0."""
    ratio = np.asarray(ratio, dtype=np.float64)
    advantage = np.asarray(advantage, dtype=np.float64)
    unclipped = ratio * advantage <= np.clip(ratio, 1.0 - clip, 1.0 + clip) * advantage
    return np.where(unclipped, advantage, 0.0)


class PpoAgent:
    """Policy and value networks with their optimizers."""

    def __init__(self, config: PpoConfig | None = None, arch: dict | None = None,
                 policy: PolicyNet | None = None, value: Network | None = None):
        self.config = config if config is not None else PpoConfig()
        self.arch = dict(arch or default_arch("deepset"))
        if self.arch["kind"] != "deepset":
            raise ValueError("PPO uses the Deep Set encoder")
        rng = np.random.default_rng(self.config.seed)
        self.policy = policy if policy is not None else PolicyNet(self.arch, rng)
        self.value = value if value is not None else Network(self.arch, 1, rng=rng)
        self.policy_opt = Adam(self.policy.net.params, lr=self.config.lr)
        self.value_opt = Adam(self.value.params, lr=self.config.lr)
        self.iterations = 0
        self.env_steps = 0

    def save(self, path: str | Path) -> None:
        desc = {"algo": "ppo", "arch": self.arch, "config": self.config.to_dict(),
                "iterations": self.iterations, "env_steps": self.env_steps}
        save_checkpoint(path, {"policy": self.policy.net.params, "value": self.value.params}, desc)

    @classmethod
    def load(cls, path: str | Path) -> PpoAgent:
        desc, groups = load_checkpoint(path)
        if desc.get("algo") != "ppo":
            raise ValueError(f"{path} is not a PPO checkpoint")
        arch = desc["arch"]
        agent = cls(PpoConfig(**desc["config"]), arch,
                    PolicyNet(network=Network(arch, N_ACTIONS, params=groups["policy"])),
                    Network(arch, 1, params=groups["value"]))
        agent.iterations = int(desc.get("iterations", 0))
        agent.env_steps = int(desc.get("env_steps", 0))
        return agent


def value_step(agent: PpoAgent, batch: StateBatch, returns: np.ndarray) -> float:
    """One Adam step of squared-error regression of the value net onto ``returns``."""
    vnet = agent.value
    vnet.zero_grad()
    diff = vnet.forward(batch, train=True)[:, 0].astype(np.float64) - returns
    vnet.backward((2.0 * diff / len(diff))[:, None])
    agent.value_opt.step(vnet.grads)
    return float(np.mean(diff * diff))


def ppo_update(agent: PpoAgent, buffer: RolloutBuffer, rng: np.random.Generator) -> dict:
    """K epochs of clipped-surrogate ascent plus value regression to the MC returns."""
    cfg = agent.config
    n = len(buffer)
    if n == 0:
        return {"policy_loss": 0.0, "value_loss": 0.0}
    adv, returns = compute_advantages(buffer, agent.value, cfg.gamma, cfg.horizon, cfg.normalize_advantages)
    states = StateBatch.from_observations(buffer.states)
    actions = np.asarray(buffer.actions)
    old_logp = np.asarray(buffer.log_probs)
    pnet = agent.policy.net
    policy_losses, value_losses = [], []
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        for lo in range(0, n, cfg.batch_size):
            idx = order[lo:lo + cfg.batch_size]
            batch = states.take(idx)
            b = len(idx)
            rows = np.arange(b)
            pnet.zero_grad()
            logits = pnet.forward(batch, train=True)
            p = softmax(logits)
            ratio = np.exp(np.log(p[rows, actions[idx]]) - old_logp[idx])
            policy_losses.append(-float(clipped_surrogate(ratio, adv[idx], cfg.clip).mean()))
            # d(-mean surrogate)/d logits through ratio = exp(logp_new - logp_old).
            g_ratio = -clipped_surrogate_grad(ratio, adv[idx], cfg.clip) / b
            onehot = np.zeros_like(p)
            onehot[rows, actions[idx]] = 1.0
            pnet.backward((g_ratio * ratio)[:, None] * (onehot - p))
            agent.policy_opt.step(pnet.grads)

            value_losses.append(value_step(agent, batch, returns[idx]))
    agent.iterations += 1
    return {"policy_loss": float(np.mean(policy_losses)), "value_loss": float(np.mean(value_losses))}


def train_ppo(agent: PpoAgent, env, env_steps: int | None = None, metrics_path: str | Path | None = None,
              callback=None) -> list[dict]:
    """Alternate rollouts of ``episodes`` episodes with updates until ``env_steps`` are used."""
    cfg = agent.config
    budget = cfg.env_steps if env_steps is None else env_steps
    rng = np.random.default_rng(cfg.seed + 1)
    history = []
    writer = timing = None
    if metrics_path is not None:
        path = Path(metrics_path)
        fh = open(path, "w", newline="")
        tfh = open(path.with_suffix(".timing.csv"), "w", newline="")
        writer, timing = csv.writer(fh), csv.writer(tfh)
        writer.writerow(PPO_METRIC_COLUMNS)
        timing.writerow(("iteration", "wall_time"))
    start = time.perf_counter()
    try:
        while agent.env_steps < budget:
            buffer = collect_rollout(agent.policy, env, cfg.episodes, rng)
            if len(buffer) == 0:
                break
            agent.env_steps += len(buffer)
            metrics = ppo_update(agent, buffer, rng)
            row = {"iteration": agent.iterations, "env_steps": agent.env_steps,
                   "mean_episode_return": float(buffer.episode_returns().mean()), **metrics}
            history.append(row)
            if writer is not None:
                writer.writerow([row[c] if isinstance(row[c], int) else repr(row[c]) for c in PPO_METRIC_COLUMNS])
                timing.writerow((agent.iterations, f"{time.perf_counter() - start:.3f}"))
            if callback is not None and callback(agent, row):
                break
    finally:
        if writer is not None:
            fh.close()
            tfh.close()
    return history
