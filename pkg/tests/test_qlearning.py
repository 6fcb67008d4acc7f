import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from deepsetq.encoders import Network, Observation, StateBatch
from deepsetq.experiments.dataset import file_digest, load_buffer
from deepsetq.nn import relative_error
from deepsetq.qlearning import (BANDIT_BEST, BANDIT_STATES, METRIC_COLUMNS, Minibatch, QEnsemble, ReplayBuffer,
                                TrainConfig, Trainer, Transition, bandit_buffer, bandit_q_star,
                                compute_targets, greedy_action, td_loss, train_step)

SMALL = {"kind": "deepset", "phi": [8], "rho": [8], "pooling": "sum", "head": [16]}
LAST = "head.1"
EMPTY = Observation(np.zeros((0, 3), np.float32), np.array([1, 1, 1], np.float32))


def _constant(net: Network, values):
    """Make ``net`` output ``values`` for every input."""
    net.params[f"{LAST}.weight"][...] = 0
    net.params[f"{LAST}.bias"][...] = values


def _batch(n=1, rewards=None, actions=None):
    states = StateBatch.from_observations([EMPTY] * n)
    rewards = np.ones(n) if rewards is None else np.asarray(rewards, float)
    actions = np.zeros(n, np.int64) if actions is None else np.asarray(actions)
    return Minibatch(states, actions, rewards, StateBatch.from_observations([EMPTY] * n))


# ----------------------------------------------------------------- targets

def test_clipped_double_target_example():
    ens = QEnsemble(SMALL)
    _constant(ens.targets[0], [1, 2, 3])
    _constant(ens.targets[1], [2, 1, 2])
    assert compute_targets(ens, _batch())[0] == pytest.approx(2.98)


def test_gamma_zero_target_is_reward():
    ens = QEnsemble(SMALL)
    batch = _batch(3, rewards=[0.25, -1.0, 0.9])
    np.testing.assert_array_equal(compute_targets(ens, batch, gamma=0.0), batch.rewards)


@given(st.lists(st.floats(-5, 5, width=32), min_size=3, max_size=3), st.floats(0, 0.99))
def test_identical_targets_reduce_to_dqn(q, gamma):
    ens = QEnsemble(SMALL)
    for net in ens.targets:
        _constant(net, q)
    assert compute_targets(ens, _batch(), gamma)[0] == pytest.approx(1.0 + gamma * max(np.float32(q)))


def test_targets_initialized_as_copies():
    ens = QEnsemble(SMALL)
    for online, target in zip(ens.online, ens.targets):
        np.testing.assert_array_equal(online.params.flat, target.params.flat)
        assert online.params.flat is not target.params.flat
    assert not np.array_equal(ens.online[0].params.flat, ens.online[1].params.flat)


def test_tau_one_synchronizes_targets():
    ens = QEnsemble(SMALL, TrainConfig(tau=1.0, seed=2))
    train_step(ens, bandit_buffer(20), np.random.default_rng(0))
    for online, target in zip(ens.online, ens.targets):
        np.testing.assert_array_equal(online.params.flat, target.params.flat)


# -------------------------------------------------------------------- loss

def test_single_sample_loss():
    ens = QEnsemble(SMALL)
    for net in ens.online:
        _constant(net, [0, 0, 0])
    loss, _ = td_loss(ens, _batch(), np.array([2.0]))
    assert loss == pytest.approx(8.0)  # 4 per network


def test_perfect_fit_zero_loss_and_gradients():
    ens = QEnsemble(SMALL)
    for net in ens.online:
        _constant(net, [0.5, 0.1, 0.2])
    loss, grads = td_loss(ens, _batch(4, actions=[0, 1, 2, 0]), np.array([0.5, 0.1, 0.2, 0.5], np.float32))
    assert loss == pytest.approx(0.0, abs=1e-12)
    for g in grads:
        assert not g.flat.any()


def test_td_gradient_matches_finite_differences(small_dataset):
    buf = load_buffer(small_dataset)
    ens = QEnsemble(SMALL, TrainConfig(seed=1))
    ens.online = [net.astype(np.float64) for net in ens.online]
    ens.targets = [net.astype(np.float64) for net in ens.targets]
    batch = buf.sample(16, np.random.default_rng(0))
    y = compute_targets(ens, batch) + 0.3
    _, grads = td_loss(ens, batch, y)
    rng = np.random.default_rng(1)
    for net, g in zip(ens.online, grads):
        analytic = g.flat.copy()
        worst = 0.0
        for idx in rng.choice(net.params.size(), 64, replace=False):
            orig = net.params.flat[idx]
            vals = []
            for d in (1e-5, -1e-5):
                net.params.flat[idx] = orig + d
                q = net.forward(batch.states)[np.arange(16), batch.actions]
                vals.append(np.mean((q - y) ** 2))
            net.params.flat[idx] = orig
            numeric = (vals[0] - vals[1]) / 2e-5
            if abs(numeric) + abs(analytic[idx]) > 1e-9:
                worst = max(worst, float(relative_error(analytic[idx], numeric)))
        assert worst < 1e-4


def test_targets_do_not_receive_gradients():
    ens = QEnsemble(SMALL)
    before = [t.params.flat.copy() for t in ens.targets]
    td_loss(ens, _batch(2), np.array([1.0, 2.0]))
    for t, b in zip(ens.targets, before):
        assert not t.grads.flat.any()
        np.testing.assert_array_equal(t.params.flat, b)


# ------------------------------------------------------------------- steps

def test_soft_update_bounded_by_tau():
    ens = QEnsemble(SMALL, TrainConfig(tau=1e-2))
    before = [t.params.flat.astype(np.float64) for t in ens.targets]
    train_step(ens, bandit_buffer(20), np.random.default_rng(0))
    for t, b, o in zip(ens.targets, before, ens.online):
        moved = np.abs(t.params.flat - b)
        assert moved.max() <= 1e-2 * np.abs(o.params.flat - b).max() * (1 + 1e-5) + 1e-7


def test_train_step_deterministic():
    def run():
        ens = QEnsemble(SMALL, TrainConfig(seed=9))
        rng = np.random.default_rng(0)
        metrics = [train_step(ens, bandit_buffer(50), rng) for _ in range(20)]
        return metrics, ens.online[0].params.flat.copy()
    (ma, pa), (mb, pb) = run(), run()
    assert ma == mb and pa.tobytes() == pb.tobytes()


def test_empty_buffer():
    with pytest.raises(ValueError):
        train_step(QEnsemble(SMALL), ReplayBuffer(10), np.random.default_rng(0))


@pytest.mark.parametrize("kw", [{"gamma": 1.0}, {"gamma": -0.1}, {"tau": 1.5}, {"batch_size": 0}, {"lr": 0}])
def test_config_validation(kw):
    with pytest.raises(ValueError):
        TrainConfig(**kw)


def test_bandit_converges_to_q_star():
    cfg = TrainConfig(gamma=0.5, tau=0.05, lr=1e-3, seed=0)
    ens = QEnsemble(SMALL, cfg)
    rng = np.random.default_rng(1)
    buf = bandit_buffer()
    for _ in range(3000):
        metrics = train_step(ens, buf, rng)
    assert metrics["loss"] < 1e-3
    q = ens.q_values(StateBatch.from_observations(BANDIT_STATES))
    np.testing.assert_allclose(q, bandit_q_star(0.5), atol=0.05)
    assert [greedy_action(ens, s) for s in BANDIT_STATES] == list(BANDIT_BEST)


def test_bandit_q_star_satisfies_bellman():
    gamma = 0.9
    q = bandit_q_star(gamma)
    for s in range(2):
        for a in range(3):
            r = 1.0 if a == BANDIT_BEST[s] else 0.0
            assert q[s, a] == pytest.approx(r + gamma * q[1 - s].max())


# ------------------------------------------------------------------ greedy

@pytest.mark.parametrize("q, expected", [([1, 0, 0], 0), ([1, 1, 0], 0), ([0, 1, 1], 1), ([0, 0, 1], 2),
                                         ([2, 2, 2], 0)])
def test_greedy_action_ties(q, expected):
    ens = QEnsemble(SMALL)
    for net in ens.online:
        _constant(net, q)
    assert greedy_action(ens, EMPTY) == expected


def test_greedy_uses_mean_of_online_nets():
    ens = QEnsemble(SMALL)
    _constant(ens.online[0], [1, 0, 0])
    _constant(ens.online[1], [0, 3, 0])
    assert greedy_action(ens, EMPTY) == 1


def test_greedy_permutation_invariant(rng):
    ens = QEnsemble("deepset")
    dyn = rng.uniform(-1, 1, (12, 3)).astype(np.float32)
    static = np.array([0.7, 1, 1], np.float32)
    for _ in range(5):
        perm = rng.permutation(12)
        assert greedy_action(ens, Observation(dyn, static)) == greedy_action(ens, Observation(dyn[perm], static))


# ------------------------------------------------------------------ buffer

def test_replay_fifo_capacity():
    buf = ReplayBuffer(3)
    for r in range(5):
        buf.add(Transition(EMPTY, 0, float(r), EMPTY))
    assert len(buf) == 3
    np.testing.assert_array_equal(buf.columns.rewards, [2, 3, 4])


def test_replay_rejects_invalid_action():
    with pytest.raises(ValueError):
        ReplayBuffer(3).add(Transition(EMPTY, 3, 0.0, EMPTY))


def test_replay_sampling_deterministic(small_dataset):
    buf = load_buffer(small_dataset)
    a = buf.sample(64, np.random.default_rng(3))
    b = buf.sample(64, np.random.default_rng(3))
    np.testing.assert_array_equal(a.actions, b.actions)
    np.testing.assert_array_equal(a.states.sets.features, b.states.sets.features)


@pytest.mark.parametrize("kind", ["deepset", "set2set", "fixed", "grid"])
def test_train_step_every_encoder(kind, small_dataset):
    buf = load_buffer(small_dataset)
    ens = QEnsemble(kind, TrainConfig(batch_size=8))
    metrics = Trainer(ens, buf).run(3)
    assert len(metrics) == 1 and np.isfinite(metrics[0]["loss"])


def test_dataset_not_mutated_by_training(small_dataset):
    digest = file_digest(small_dataset)
    Trainer(QEnsemble(SMALL, TrainConfig(batch_size=8)), load_buffer(small_dataset)).run(20)
    assert file_digest(small_dataset) == digest


# ----------------------------------------------------------------- trainer

def test_metrics_and_checkpoints(tmp_path):
    ens = QEnsemble(SMALL, TrainConfig(seed=0, log_every=10, checkpoint_every=25))
    Trainer(ens, bandit_buffer(40), tmp_path / "m.csv", tmp_path / "ck").run(50)
    lines = (tmp_path / "m.csv").read_text().splitlines()
    assert lines[0] == ",".join(METRIC_COLUMNS) and len(lines) == 6
    assert (tmp_path / "m.timing.csv").exists()
    assert sorted(p.name for p in (tmp_path / "ck").iterdir()) == ["step00000025.ckpt", "step00000050.ckpt"]


def test_metrics_byte_identical(tmp_path):
    for name in ("a.csv", "b.csv"):
        Trainer(QEnsemble(SMALL, TrainConfig(seed=4, log_every=5)), bandit_buffer(40), tmp_path / name).run(30)
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


def test_checkpoint_round_trip(tmp_path):
    ens = QEnsemble("set2set", TrainConfig(seed=6, batch_size=4))
    Trainer(ens, bandit_buffer(20)).run(3)
    ens.save(tmp_path / "q.ckpt")
    back = QEnsemble.load(tmp_path / "q.ckpt")
    assert back.arch == ens.arch and back.steps == 3 and back.config == ens.config
    for a, b in zip(ens.online + ens.targets, back.online + back.targets):
        np.testing.assert_array_equal(a.params.flat, b.params.flat)
    states = StateBatch.from_observations(BANDIT_STATES)
    np.testing.assert_array_equal(ens.q_values(states), back.q_values(states))


# ----------------------------------------------------------- loss trend

@pytest.fixture(scope="module")
def frozen_target_losses(small_dataset):
    """Per-step losses for 10k steps of regression onto frozen targets."""
    ens = QEnsemble(SMALL, TrainConfig(tau=0.0, seed=0, log_every=1))
    return np.array([r["loss"] for r in Trainer(ens, load_buffer(small_dataset)).run(10_000)])


def test_loss_trend_non_increasing(frozen_target_losses):
    blocks = frozen_target_losses.reshape(10, 1000).mean(axis=1)
    assert np.mean(blocks[1:] > blocks[:-1]) <= 0.05


@pytest.mark.xfail(strict=True, reason="minibatch noise: about a third of consecutive 100-step windows rise")
def test_loss_100_step_windows_non_increasing(frozen_target_losses):
    windows = frozen_target_losses.reshape(100, 100).mean(axis=1)
    assert np.mean(windows[1:] > windows[:-1]) <= 0.05
