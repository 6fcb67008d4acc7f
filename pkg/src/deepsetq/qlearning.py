"""Offline clipped double Q-learning over set-structured states."""

from __future__ import annotations

import csv
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .encoders import N_ACTIONS, Network, Observation, SetBatch, StateBatch, default_arch
from .nn import Adam, load_checkpoint, save_checkpoint, soft_update

METRIC_COLUMNS = ("step", "loss", "mean_target")


@dataclass
class TrainConfig:
    gamma: float = 0.99
    lr: float = 1e-4
    tau: float = 1e-4
    batch_size: int = 64
    steps: int = 200_000
    seed: int = 0
    log_every: int = 100
    checkpoint_every: int = 0

    def __post_init__(self):
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError(f"gamma must lie in [0, 1), got {self.gamma}")
        if not 0.0 <= self.tau <= 1.0:
            raise ValueError(f"tau must lie in [0, 1], got {self.tau}")
        if self.batch_size < 1 or self.steps < 0 or self.lr <= 0:
            raise ValueError("batch_size must be >= 1, steps >= 0 and lr > 0")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class Transition:
    state: Observation
    action: int
    reward: float
    next_state: Observation


@dataclass
class Minibatch:
    states: StateBatch
    actions: np.ndarray
    rewards: np.ndarray
    next_states: StateBatch

    @property
    def size(self) -> int:
        return len(self.actions)


class ReplayBuffer:
    """Columnar transition store with uniform sampling (with replacement).

    Transitions are appended FIFO up to ``capacity``; sampling works on a
    compacted columnar view that is rebuilt only after new additions.
    """

    def __init__(self, capacity: int = 1_000_000):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self._pending: list[Transition] = []
        self._columns: Minibatch | None = None

    @classmethod
    def from_arrays(cls, states: StateBatch, actions, rewards, next_states: StateBatch,
                    capacity: int | None = None) -> ReplayBuffer:
        actions = np.asarray(actions, dtype=np.int64)
        rewards = np.asarray(rewards, dtype=np.float64)
        if not (states.size == next_states.size == len(actions) == len(rewards)):
            raise ValueError("transition columns have different lengths")
        buf = cls(capacity or max(len(actions), 1))
        if len(actions) > buf.capacity:
            keep = np.arange(len(actions) - buf.capacity, len(actions))
            states, next_states = states.take(keep), next_states.take(keep)
            actions, rewards = actions[keep], rewards[keep]
        buf._columns = Minibatch(states, actions, rewards, next_states)
        return buf

    @classmethod
    def from_transitions(cls, transitions, capacity: int | None = None) -> ReplayBuffer:
        transitions = list(transitions)
        buf = cls(capacity or max(len(transitions), 1))
        for t in transitions:
            buf.add(t)
        return buf

    def add(self, transition: Transition) -> None:
        if transition.action not in range(N_ACTIONS):
            raise ValueError(f"invalid action {transition.action!r}")
        self._pending.append(transition)
        if len(self._pending) > 4 * self.capacity:
            self._compact()

    def _compact(self) -> Minibatch:
        if self._pending:
            new = Minibatch(StateBatch.from_observations(t.state for t in self._pending),
                            np.array([t.action for t in self._pending], dtype=np.int64),
                            np.array([t.reward for t in self._pending], dtype=np.float64),
                            StateBatch.from_observations(t.next_state for t in self._pending))
            self._pending = []
            old = self._columns
            if old is not None:
                new = Minibatch(_concat_states(old.states, new.states),
                                np.concatenate([old.actions, new.actions]),
                                np.concatenate([old.rewards, new.rewards]),
                                _concat_states(old.next_states, new.next_states))
            if new.size > self.capacity:
                keep = np.arange(new.size - self.capacity, new.size)
                new = Minibatch(new.states.take(keep), new.actions[keep], new.rewards[keep],
                                new.next_states.take(keep))
            self._columns = new
        if self._columns is None:
            empty = StateBatch(SetBatch.from_sets([]), np.zeros((0, 3), np.float32))
            self._columns = Minibatch(empty, np.zeros(0, np.int64), np.zeros(0), empty)
        return self._columns

    @property
    def columns(self) -> Minibatch:
        return self._compact()

    def __len__(self) -> int:
        return self.columns.size

    def precompute_views(self, kind: str) -> None:
        """Cache the relational-grid view of every state for the fixed-input encoder."""
        if kind == "fixed":
            cols = self.columns
            cols.states.relational
            cols.next_states.relational

    def sample(self, batch_size: int, rng: np.random.Generator) -> Minibatch:
        cols = self.columns
        if cols.size == 0:
            raise ValueError("cannot sample from an empty replay buffer")
        idx = rng.integers(0, cols.size, size=batch_size)
        return Minibatch(cols.states.take(idx), cols.actions[idx], cols.rewards[idx],
                         cols.next_states.take(idx))


def _concat_states(a: StateBatch, b: StateBatch) -> StateBatch:
    offsets = np.concatenate([a.sets.offsets, b.sets.offsets[1:] + a.sets.offsets[-1]])
    sets = SetBatch(np.concatenate([a.sets.features, b.sets.features]), offsets)
    return StateBatch(sets, np.concatenate([a.static, b.static]))


class QEnsemble:
    """Two online Q-networks and their target copies."""

    def __init__(self, arch: dict | str, config: TrainConfig | None = None,
                 online: list[Network] | None = None, targets: list[Network] | None = None):
        if isinstance(arch, str):
            arch = default_arch(arch)
        self.config = config if config is not None else TrainConfig()
        self.arch = dict(arch)
        if online is None:
            rng = np.random.default_rng(self.config.seed)
            online = [Network(arch, rng=rng), Network(arch, rng=rng)]
        self.online = online
        self.targets = targets if targets is not None else [net.copy() for net in online]
        self.optimizers = [Adam(net.params, lr=self.config.lr) for net in self.online]
        self.steps = 0

    @property
    def kind(self) -> str:
        return self.arch["kind"]

    def q_values(self, states: StateBatch) -> np.ndarray:
        """Mean of the two online networks, shape ``[B, 3]``."""
        q = self.online[0].forward(states).astype(np.float64)
        q += self.online[1].forward(states)
        return q / 2.0

    def greedy_actions(self, states: StateBatch) -> np.ndarray:
        return np.argmax(self.q_values(states), axis=1)

    def descriptor(self) -> dict:
        return {"algo": "dqn", "arch": self.arch, "config": self.config.to_dict(), "step": self.steps}

    def save(self, path: str | Path) -> None:
        groups = {f"online{i}": net.params for i, net in enumerate(self.online)}
        groups.update({f"target{i}": net.params for i, net in enumerate(self.targets)})
        save_checkpoint(path, groups, self.descriptor())

    @classmethod
    def load(cls, path: str | Path) -> QEnsemble:
        desc, groups = load_checkpoint(path)
        if desc.get("algo") != "dqn":
            raise ValueError(f"{path} is not a DQN checkpoint")
        arch = desc["arch"]
        config = TrainConfig(**desc["config"])
        online = [Network(arch, params=groups[f"online{i}"]) for i in range(2)]
        targets = [Network(arch, params=groups[f"target{i}"]) for i in range(2)]
        ens = cls(arch, config, online, targets)
        ens.steps = int(desc.get("step", 0))
        return ens


def greedy_action(ensemble: QEnsemble, state: Observation | StateBatch) -> int:
    """Argmax of the mean Q-values; ties go to the lowest index (keep < left < right)."""
    if isinstance(state, Observation):
        state = StateBatch.from_observations([state])
    return int(ensemble.greedy_actions(state)[0])


def compute_targets(ensemble: QEnsemble, batch: Minibatch, gamma: float | None = None) -> np.ndarray:
    """``y = r + gamma * max_a min(Q'1(s', a), Q'2(s', a))``; no terminal masking."""
    gamma = ensemble.config.gamma if gamma is None else gamma
    q1 = ensemble.targets[0].forward(batch.next_states).astype(np.float64)
    q2 = ensemble.targets[1].forward(batch.next_states).astype(np.float64)
    return batch.rewards + gamma * np.minimum(q1, q2).max(axis=1)


def td_loss(ensemble: QEnsemble, batch: Minibatch, targets: np.ndarray) -> tuple[float, list]:
    """Mean squared TD error of each online net, summed; gradients land in ``net.grads``."""
    rows = np.arange(batch.size)
    total = 0.0
    grads = []
    for net in ensemble.online:
        net.zero_grad()
        q = net.forward(batch.states, train=True)
        diff = q[rows, batch.actions].astype(np.float64) - targets
        total += float(np.mean(diff * diff))
        grad_out = np.zeros(q.shape, dtype=np.float64)
        grad_out[rows, batch.actions] = 2.0 * diff / batch.size
        net.backward(grad_out)
        grads.append(net.grads)
    return total, grads


def train_step(ensemble: QEnsemble, buffer: ReplayBuffer, rng: np.random.Generator) -> dict:
    cfg = ensemble.config
    batch = buffer.sample(cfg.batch_size, rng)
    targets = compute_targets(ensemble, batch)
    loss, grads = td_loss(ensemble, batch, targets)
    for opt, g in zip(ensemble.optimizers, grads):
        opt.step(g)
    for target, net in zip(ensemble.targets, ensemble.online):
        soft_update(target.params, net.params, cfg.tau)
    ensemble.steps += 1
    return {"loss": loss, "mean_target": float(targets.mean())}


@dataclass
class Trainer:
    """Runs ``train_step`` for a budget, logging metrics and writing checkpoints.

    The metrics CSV holds ``step, loss, mean_target`` averaged over each
    logging window and is byte-identical across seeded reruns; wall-clock
    times go to a ``.timing.csv`` sidecar.
    """

    ensemble: QEnsemble
    buffer: ReplayBuffer
    metrics_path: str | Path | None = None
    checkpoint_dir: str | Path | None = None
    history: list[dict] = field(default_factory=list)

    def run(self, steps: int | None = None) -> list[dict]:
        cfg = self.ensemble.config
        steps = cfg.steps if steps is None else steps
        rng = np.random.default_rng(cfg.seed + 1)
        self.buffer.precompute_views(self.ensemble.kind)
        writer = timing = None
        if self.metrics_path is not None:
            path = Path(self.metrics_path)
            fh = open(path, "w", newline="")
            tfh = open(path.with_suffix(".timing.csv"), "w", newline="")
            writer, timing = csv.writer(fh), csv.writer(tfh)
            writer.writerow(METRIC_COLUMNS)
            timing.writerow(("step", "wall_time"))
        start = time.perf_counter()
        window = []
        try:
            for _ in range(steps):
                window.append(train_step(self.ensemble, self.buffer, rng))
                step = self.ensemble.steps
                if len(window) == cfg.log_every or _ == steps - 1:
                    row = {"step": step,
                           "loss": float(np.mean([m["loss"] for m in window])),
                           "mean_target": float(np.mean([m["mean_target"] for m in window]))}
                    self.history.append(row)
                    window = []
                    if writer is not None:
                        writer.writerow((step, repr(row["loss"]), repr(row["mean_target"])))
                        timing.writerow((step, f"{time.perf_counter() - start:.3f}"))
                if cfg.checkpoint_every and self.checkpoint_dir is not None and step % cfg.checkpoint_every == 0:
                    Path(self.checkpoint_dir).mkdir(parents=True, exist_ok=True)
                    self.ensemble.save(Path(self.checkpoint_dir) / f"step{step:08d}.ckpt")
        finally:
            if writer is not None:
                fh.close()
                tfh.close()
        return self.history


# ---------------------------------------------------------------- bandit task
BANDIT_STATES = (
    Observation(np.zeros((0, 3), np.float32), np.array([1.0, 1.0, 1.0], np.float32)),
    Observation(np.array([[0.5, 0.0, 0.0]], np.float32), np.array([0.5, 1.0, 0.0], np.float32)),
)
# Rewarded action per bandit state: keep in the first, left in the second.
BANDIT_BEST = (0, 1)


def bandit_reward(state: int, action: int) -> float:
    return 1.0 if action == BANDIT_BEST[state] else 0.0


def bandit_q_star(gamma: float) -> np.ndarray:
    """Optimal Q-values ``[2, 3]``: the states alternate regardless of the action."""
    v = 1.0 / (1.0 - gamma)
    q = np.full((2, N_ACTIONS), gamma * v)
    for s, a in enumerate(BANDIT_BEST):
        q[s, a] = 1.0 + gamma * v
    return q


def bandit_buffer(n: int = 600, seed: int = 0) -> ReplayBuffer:
    """Offline dataset of the two-state bandit with uniformly random logged actions."""
    rng = np.random.default_rng(seed)
    transitions = []
    for i in range(n):
        s = i % 2
        a = int(rng.integers(N_ACTIONS))
        transitions.append(Transition(BANDIT_STATES[s], a, bandit_reward(s, a), BANDIT_STATES[1 - s]))
    return ReplayBuffer.from_transitions(transitions)
