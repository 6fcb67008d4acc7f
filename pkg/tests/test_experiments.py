import json
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from deepsetq.encoders import Observation
from deepsetq.experiments import cli
from deepsetq.experiments.dataset import (DatasetFormatError, DatasetWriter, collect_dataset, file_digest,
                                          filter_dataset_max6, iter_transitions, load_buffer, read_header)
from deepsetq.experiments.evaluation import (EVAL_NS, NO_NOISE, NOISE_LEVELS, EvalReport, GreedyAgent,
                                             KeepAgent, NoiseSpec, eval_seed, evaluate_agent, evaluate_policy,
                                             run_baseline, run_episode)
from deepsetq.experiments.reporting import emit_search_csv, emit_summary_csv, read_search_csv
from deepsetq.experiments.search import SEARCH_SPACES, SearchSpace, random_search
from deepsetq.qlearning import QEnsemble, TrainConfig, Transition
from deepsetq.sim import HighwaySim, ScenarioConfig

SMALL = {"kind": "deepset", "phi": [8], "rho": [8], "pooling": "sum", "head": [16]}


def _obs(k, seed=0, static=(0.5, 1.0, 0.0)):
    dyn = np.random.default_rng(seed).uniform(-1, 1, (k, 3)).astype(np.float32)
    return Observation(dyn, np.array(static, np.float32))


def _write(path, transitions, header=None):
    with DatasetWriter(path, header or {"seed": 0}) as w:
        for t in transitions:
            w.write(t)


# ---------------------------------------------------------------- datasets

@given(st.lists(st.tuples(st.integers(0, 12), st.integers(0, 12), st.integers(0, 2),
                          st.floats(-2, 1, allow_nan=False)), max_size=8))
def test_dataset_round_trip_bit_exact(tmp_path_factory, specs):
    path = tmp_path_factory.mktemp("rt") / "d.dsq"
    ts = [Transition(_obs(a, i), act, r, _obs(b, i + 100)) for i, (a, b, act, r) in enumerate(specs)]
    _write(path, ts)
    back = list(iter_transitions(path))
    assert read_header(path)["count"] == len(ts) == len(back)
    for t, u in zip(ts, back):
        assert (t.action, t.reward) == (u.action, u.reward)
        assert t.state.dynamic.tobytes() == u.state.dynamic.tobytes()
        assert t.next_state.static.tobytes() == u.next_state.static.tobytes()
        assert t.next_state.dynamic.tobytes() == u.next_state.dynamic.tobytes()


def test_failed_write_leaves_partial_marker(tmp_path):
    path = tmp_path / "d.dsq"
    with pytest.raises(RuntimeError):
        with DatasetWriter(path, {}) as w:
            w.write(Transition(_obs(1), 0, 1.0, _obs(2)))
            raise RuntimeError("disk full")
    assert not path.exists()
    assert (tmp_path / "d.dsq.partial").exists()


@pytest.mark.parametrize("blob, message", [(b"", "too short"), (b"NOTADATA" + bytes(16), "magic")])
def test_bad_dataset_files(tmp_path, blob, message):
    (tmp_path / "x").write_bytes(blob)
    with pytest.raises(DatasetFormatError, match=message):
        read_header(tmp_path / "x")


def test_truncated_dataset(tmp_path):
    _write(tmp_path / "d", [Transition(_obs(3), 0, 1.0, _obs(3))])
    raw = (tmp_path / "d").read_bytes()
    (tmp_path / "t").write_bytes(raw[:-5])
    with pytest.raises(DatasetFormatError):
        list(iter_transitions(tmp_path / "t"))


@pytest.mark.parametrize("state_k, next_k, kept", [(7, 0, False), (0, 7, False), (6, 6, True), (0, 0, True)])
def test_filter_rules(tmp_path, state_k, next_k, kept):
    _write(tmp_path / "a", [Transition(_obs(state_k), 1, 0.5, _obs(next_k))])
    assert filter_dataset_max6(tmp_path / "a", tmp_path / "b") == int(kept)


def test_filter_empty_input(tmp_path):
    _write(tmp_path / "a", [])
    assert filter_dataset_max6(tmp_path / "a", tmp_path / "b") == 0
    assert read_header(tmp_path / "b")["count"] == 0
    assert len(load_buffer(tmp_path / "b")) == 0


def test_filter_preserves_order_and_is_idempotent(small_dataset, tmp_path):
    once, twice = tmp_path / "once", tmp_path / "twice"
    kept = filter_dataset_max6(small_dataset, once)
    filter_dataset_max6(once, twice)
    assert file_digest(once) == file_digest(twice)
    original = [t for t in iter_transitions(small_dataset)
                if len(t.state) <= 6 and len(t.next_state) <= 6]
    filtered = list(iter_transitions(once))
    assert 0 < kept == len(filtered) == len(original) < read_header(small_dataset)["count"]
    assert [t.reward for t in filtered] == [t.reward for t in original]
    assert read_header(once)["filter"] == {"max_vehicles": 6}


def test_collect_deterministic(tmp_path):
    for name in ("a", "b"):
        collect_dataset(tmp_path / name, 300, seed=3, episode_length=40)
    assert file_digest(tmp_path / "a") == file_digest(tmp_path / "b")
    assert read_header(tmp_path / "a")["count"] == 300


def test_collect_scenarios_and_actions(tmp_path):
    info = collect_dataset(tmp_path / "d", 400, seed=8, n_range=(30, 60), episode_length=20)
    assert info["episodes"] == 20
    assert all(30 <= n <= 60 for n, _ in info["scenarios"])
    actions = [t.action for t in iter_transitions(tmp_path / "d")]
    assert set(actions) <= {0, 1, 2} and len(set(actions)) == 3


def test_collect_replay_reproduces_rewards(tmp_path):
    info = collect_dataset(tmp_path / "d", 30, seed=2, episode_length=30)
    n, seed = info["scenarios"][0]
    sim = HighwaySim(ScenarioConfig(n, 3, seed, 30))
    for t in iter_transitions(tmp_path / "d"):
        np.testing.assert_array_equal(sim.observe().dynamic, t.state.dynamic)
        obs, r, info_step = sim.step(t.action)
        assert info_step["effective_action"] == t.action
        assert r == t.reward
        np.testing.assert_array_equal(obs.dynamic, t.next_state.dynamic)


def test_collect_rejects_bad_count(tmp_path):
    with pytest.raises(ValueError):
        collect_dataset(tmp_path / "d", 0, seed=0)


# -------------------------------------------------------------- evaluation

def test_eval_seeds_distinct():
    seeds = {eval_seed(n, i) for n in EVAL_NS for i in range(20)}
    assert len(seeds) == 260


def test_full_sweep_row_count():
    report = run_baseline("no-lane-change", episode_length=2)
    assert len(report.rows) == 260
    assert [a[4] for a in report.aggregates()] == [20] * 13
    assert [a[0] for a in report.aggregates()] == list(EVAL_NS)


def test_keep_agent_deterministic_and_never_penalized():
    a = evaluate_policy(KeepAgent(), ns=(30, 60), seeds_per_n=3, episode_length=30)
    b = evaluate_policy(KeepAgent(), ns=(30, 60), seeds_per_n=3, episode_length=30)
    assert a.rows == b.rows
    sim = HighwaySim(ScenarioConfig(40, 3, 1, 30))
    lane = sim.lane[0]
    while not sim.done:
        _, r, _ = sim.step(0)
        assert r == 1.0 - abs(sim.speed[0] - 24.0) / 24.0
        assert sim.lane[0] == lane


def test_rule_based_beats_keep_on_sparse_traffic():
    keep = run_baseline("no-lane-change", ns=(30,))
    rule = run_baseline("rule-based", ns=(30,))
    assert rule.mean() >= keep.mean()
    # Regression snapshot of the shipped evaluation seeds.
    assert keep.mean() == pytest.approx(165.545, abs=1e-3)
    assert rule.mean() == pytest.approx(166.256, abs=1e-3)


def test_unknown_baseline():
    with pytest.raises(ValueError):
        run_baseline("random")


def test_noise_zero_bit_exact():
    ens = QEnsemble(SMALL, TrainConfig(seed=1))
    agent = GreedyAgent(ens.q_values)
    kw = dict(ns=(30, 50), seeds_per_n=2, episode_length=40)
    clean = evaluate_policy(agent, **kw)
    assert evaluate_policy(agent, noise=NoiseSpec(0.0, 0.0), **kw).rows == clean.rows


class _Recorder(KeepAgent):
    def __init__(self):
        self.seen = []

    def act(self, sim, obs):
        self.seen.append(obs.dynamic.copy())
        return 0


def test_noise_reaches_the_agent():
    clean, noisy = _Recorder(), _Recorder()
    run_episode(clean, ScenarioConfig(40, 3, 1, 5))
    run_episode(noisy, ScenarioConfig(40, 3, 1, 5), NOISE_LEVELS[0])
    for a, b in zip(clean.seen, noisy.seen):
        np.testing.assert_array_equal(a[:, 2], b[:, 2])
        assert 0 < np.abs(a[:, :2] - b[:, :2]).max() < 0.5


def test_noise_leaves_lane_offsets_untouched():
    obs = _obs(50)
    noisy = NoiseSpec(0.5, 0.5).apply(obs, np.random.default_rng(0))
    np.testing.assert_array_equal(noisy.dynamic[:, 2], obs.dynamic[:, 2])
    np.testing.assert_array_equal(noisy.static, obs.static)
    assert not np.array_equal(noisy.dynamic[:, :2], obs.dynamic[:, :2])
    np.testing.assert_array_equal(NO_NOISE.apply(obs, np.random.default_rng(0)).dynamic, obs.dynamic)


def test_negative_noise_rejected():
    with pytest.raises(ValueError):
        NoiseSpec(-0.1, 0.0)


@pytest.mark.parametrize("kind", ["deepset", "set2set", "fixed", "grid"])
def test_three_lane_checkpoint_runs_on_five_lanes(kind, tmp_path):
    QEnsemble(kind).save(tmp_path / "q.ckpt")
    report = evaluate_agent(tmp_path / "q.ckpt", lanes=5, ns=(60,), seeds_per_n=1, episode_length=3)
    assert report.rows[0][1] == 5 and np.isfinite(report.rows[0][3])


def test_evaluation_reproducible_from_checkpoint(tmp_path):
    QEnsemble(SMALL, TrainConfig(seed=5)).save(tmp_path / "q.ckpt")
    kw = dict(ns=(35,), seeds_per_n=2, episode_length=20, noise=NOISE_LEVELS[0])
    assert evaluate_agent(tmp_path / "q.ckpt", **kw).rows == evaluate_agent(tmp_path / "q.ckpt", **kw).rows


# ----------------------------------------------------------------- reports

def test_empty_report_is_header_only(tmp_path):
    EvalReport().to_csv(tmp_path / "r.csv")
    assert (tmp_path / "r.csv").read_text().splitlines() == ["row_type,n,lanes,seed,episode_return,mean,std,count"]
    assert EvalReport.from_csv(tmp_path / "r.csv").rows == []


@given(st.lists(st.tuples(st.sampled_from([30, 35, 90]), st.sampled_from([3, 5]), st.integers(0, 10**6),
                          st.floats(-100, 300, allow_nan=False)), max_size=30))
def test_report_round_trip_and_aggregates(tmp_path_factory, rows):
    path = tmp_path_factory.mktemp("rep") / "r.csv"
    report = EvalReport(rows)
    report.to_csv(path)
    assert EvalReport.from_csv(path).rows == report.sorted().rows
    for n, lanes, mean, std, count in report.aggregates():
        vals = [r[3] for r in rows if r[0] == n and r[1] == lanes]
        assert count == len(vals)
        assert abs(mean - sum(vals) / len(vals)) <= 1e-9 * max(1.0, max(abs(v) for v in vals))


def test_report_rejects_foreign_csv(tmp_path):
    (tmp_path / "x.csv").write_text("a,b\n1,2\n")
    with pytest.raises(ValueError):
        EvalReport.from_csv(tmp_path / "x.csv")


def test_search_csv_round_trip(tmp_path):
    results = [{"rank": 1, "sample": 2, "score": 1.5, "config": {"width": 50, "layers": 2}}]
    emit_search_csv(results, tmp_path / "s.csv")
    assert read_search_csv(tmp_path / "s.csv") == results


def test_summary_csv(tmp_path):
    emit_summary_csv({"b": EvalReport([(30, 3, 1, 2.0), (30, 3, 2, 4.0)])}, tmp_path / "s.csv")
    lines = (tmp_path / "s.csv").read_text().splitlines()
    assert lines == ["label,lanes,n,mean,std,count", "b,3,30,3.0,1.0,2"]


# ------------------------------------------------------------------ search

@pytest.mark.parametrize("kind, size", [("fixed", 6), ("deepset", 81), ("set2set", 18), ("grid", 144)])
def test_search_space_sizes(kind, size):
    space = SEARCH_SPACES[kind]
    assert space.size == size == len(list(space.points()))
    assert [space.point(i) for i in range(size)] == list(space.points())


def test_small_space_sampled_without_replacement():
    picks = SEARCH_SPACES["fixed"].sample(20, np.random.default_rng(0))
    assert len(picks) == 6
    assert len({tuple(sorted(p.items())) for p in picks}) == 6


def test_large_space_sampled_with_replacement():
    big = SearchSpace("fixed", (("width", tuple(range(200))), ("layers", tuple(range(100)))))
    assert len(big.sample(30, np.random.default_rng(0))) == 30


@given(st.sampled_from(sorted(SEARCH_SPACES)), st.integers(0, 2**31 - 1))
def test_samples_lie_in_grid(kind, seed):
    space = SEARCH_SPACES[kind]
    picks = space.sample(20, np.random.default_rng(seed))
    assert picks == space.sample(20, np.random.default_rng(seed))
    for p in picks:
        assert space.contains(p)
        if kind == "deepset":
            assert p["phi_dim"] in (5, 20, 100) and p["rho_dim"] in (5, 20, 100)


@pytest.mark.parametrize("kind", sorted(SEARCH_SPACES))
def test_every_grid_point_builds(kind):
    from deepsetq.encoders import Network
    space = SEARCH_SPACES[kind]
    for p in [space.point(0), space.point(space.size - 1)]:
        Network(space.arch(p))


def test_random_search_ranks(small_dataset):
    probes = [ScenarioConfig(30, 3, 1, 5), ScenarioConfig(40, 3, 2, 5)]
    kw = dict(budget=3, train_steps=5, seed=1, probes=probes)
    a = random_search("fixed", load_buffer(small_dataset), **kw)
    b = random_search("fixed", load_buffer(small_dataset), **kw)
    assert a == b
    assert [r["rank"] for r in a] == [1, 2, 3]
    assert [r["score"] for r in a] == sorted((r["score"] for r in a), reverse=True)


# --------------------------------------------------------------------- cli

def _run(*argv):
    return cli.main([str(a) for a in argv])


def test_cli_pipeline(tmp_path, capsys):
    d, f, ck = tmp_path / "d.dsq", tmp_path / "f.dsq", tmp_path / "q.ckpt"
    assert _run("collect", "--out", d, "--count", 200, "--seed", 1, "--episode-length", 25) == 0
    assert _run("filter", "--in", d, "--out", f) == 0
    assert _run("train", "--algo", "dqn", "--encoder", "fixed", "--data", d, "--out", ck, "--steps", 5,
                "--metrics", tmp_path / "m.csv", "--batch-size", 8) == 0
    assert _run("evaluate", "--checkpoint", ck, "--ns", "30,35", "--seeds", 2, "--episode-length", 4,
                "--out", tmp_path / "e.csv", "--noise", "default") == 0
    assert (tmp_path / "e.noise1.csv").exists() and (tmp_path / "e.noise2.csv").exists()
    meta = json.loads((tmp_path / "e.noise1.csv.meta.json").read_text())
    assert meta["noise"] == [0.025, 0.025] and meta["ns"] == [30, 35]
    assert _run("baseline", "--kind", "rule-based", "--ns", "30", "--seeds", 2, "--episode-length", 4,
                "--out", tmp_path / "b.csv") == 0
    assert _run("report", "--inputs", f"noisy={tmp_path / 'e.noise1.csv'}", tmp_path / "b.csv",
                "--out", tmp_path / "s.csv") == 0
    assert "noisy" in capsys.readouterr().out
    assert (tmp_path / "s.csv").read_text().startswith("label,lanes,n,mean,std,count")


def test_cli_train_ppo(tmp_path):
    assert _run("train", "--algo", "ppo", "--out", tmp_path / "p.ckpt", "--env-steps", 50) == 0
    assert _run("evaluate", "--checkpoint", tmp_path / "p.ckpt", "--ns", 30, "--seeds", 1,
                "--episode-length", 3, "--out", tmp_path / "e.csv") == 0


def test_cli_scenario_and_trajectory(tmp_path):
    ScenarioConfig(10, 3, 4, 3).save(tmp_path / "s.json")
    assert _run("baseline", "--scenario", tmp_path / "s.json", "--trajectory", tmp_path / "t.csv",
                "--out", tmp_path / "r.csv") == 0
    lines = (tmp_path / "t.csv").read_text().splitlines()
    assert lines[0] == "step,vehicle_id,p,lane,v" and len(lines) == 1 + 11 * 12
    assert len(EvalReport.from_csv(tmp_path / "r.csv").rows) == 1


def test_cli_config_file_and_overrides(tmp_path):
    (tmp_path / "c.json").write_text(json.dumps({"count": 50, "seed": 9, "episode-length": 10}))
    assert _run("collect", "--config", tmp_path / "c.json", "--out", tmp_path / "a.dsq") == 0
    assert _run("collect", "--config", tmp_path / "c.json", "--out", tmp_path / "b.dsq", "--count", 60) == 0
    assert read_header(tmp_path / "a.dsq")["count"] == 50 and read_header(tmp_path / "a.dsq")["seed"] == 9
    assert read_header(tmp_path / "b.dsq")["count"] == 60


def test_cli_gradcheck(capsys):
    assert _run("gradcheck", "--encoder", "deepset", "--coords", 16) == 0
    assert capsys.readouterr().out.strip().endswith("PASS")


@pytest.mark.parametrize("argv", [
    ["train", "--algo", "sarsa"],
    ["evaluate", "--lanes", "4"],
    ["collect"],
    ["collect", "--out", "x.dsq", "--count", "0"],
    ["filter", "--in", "missing.dsq", "--out", "y.dsq"],
    ["evaluate", "--checkpoint", "missing.ckpt", "--out", "e.csv"],
    ["evaluate", "--checkpoint", "missing.ckpt", "--out", "e.csv", "--noise", "1,2,3"],
    ["train", "--algo", "ppo", "--encoder", "grid", "--out", "p.ckpt"],
    [],
])
def test_cli_validation_errors(argv, tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    assert cli.main(argv) == 2


def test_cli_unknown_config_key(tmp_path):
    (tmp_path / "c.json").write_text('{"colour": "red"}')
    assert _run("collect", "--config", tmp_path / "c.json", "--out", tmp_path / "d.dsq") == 2
    (tmp_path / "bad.json").write_text("{")
    assert _run("collect", "--config", tmp_path / "bad.json", "--out", tmp_path / "d.dsq") == 2


def test_cli_runtime_failure(tmp_path):
    assert _run("collect", "--out", tmp_path / "no" / "such" / "dir.dsq", "--count", 5) == 3


def test_cli_gradcheck_failure_exit_code():
    assert _run("gradcheck", "--encoder", "fixed", "--coords", 8, "--tolerance", 0) == 3


def test_module_entry_point():
    out = subprocess.run([sys.executable, "-m", "deepsetq.experiments.cli", "--version"],
                         capture_output=True, text=True)
    assert out.returncode == 0 and out.stdout.strip()
