"""Command line interface.

Every subcommand accepts ``--config FILE`` (a JSON object whose keys are
option names with dashes or underscores); explicit flags override it.
Exit codes: 0 success, 2 invalid input, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .. import __version__

log = logging.getLogger("deepsetq")

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 2, 3


class UsageError(ValueError):
    pass


def _csv_ints(text) -> list[int]:
    if isinstance(text, (list, tuple)):
        return [int(v) for v in text]
    return [int(v) for v in str(text).split(",") if v.strip()]


def _noise(text):
    from .evaluation import NOISE_LEVELS, NO_NOISE, NoiseSpec
    if text is None or text == "none":
        return [NO_NOISE]
    if text == "default":
        return list(NOISE_LEVELS)
    if isinstance(text, (list, tuple)):
        return [NoiseSpec(float(text[0]), float(text[1]))]
    parts = str(text).split(",")
    if len(parts) != 2:
        raise UsageError(f"--noise expects 'none', 'default' or 'SIGMA_DR,SIGMA_DV', got {text!r}")
    return [NoiseSpec(float(parts[0]), float(parts[1]))]


# Per-subcommand defaults; argparse defaults stay None so config files can fill gaps.
DEFAULTS = {
    "collect": {"count": 50_000, "seed": 0, "lanes": 3, "n_min": 30, "n_max": 60, "episode_length": 250,
                "driver_pool_seed": 0},
    "filter": {"max_vehicles": 6},
    "train": {"algo": "dqn", "encoder": "deepset", "steps": 50_000, "seed": 0, "gamma": None, "lr": None,
              "tau": None, "batch_size": None, "log_every": 100, "checkpoint_every": 0, "lanes": 3,
              "env_steps": 200_000},
    "evaluate": {"lanes": 3, "noise": "none", "ns": None, "seeds": 20, "episode_length": 250},
    "baseline": {"kind": "no-lane-change", "lanes": 3, "ns": None, "seeds": 20, "episode_length": 250},
    "search": {"encoder": "deepset", "budget": 20, "train_steps": 2_000, "seed": 0},
    "gradcheck": {"encoder": "all", "coords": 64, "seed": 0, "tolerance": 1e-4},
    "report": {},
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="deepsetq", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def cmd(name, help_text):
        sp = sub.add_parser(name, help=help_text)
        sp.add_argument("--config", help="JSON file with option values")
        return sp

    sp = cmd("collect", "collect a transition dataset with the random safe agent")
    sp.add_argument("--out", help="dataset file to write")
    sp.add_argument("--count", type=int)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--lanes", type=int, choices=(3, 5))
    sp.add_argument("--n-min", type=int)
    sp.add_argument("--n-max", type=int)
    sp.add_argument("--episode-length", type=int)
    sp.add_argument("--driver-pool-seed", type=int)

    sp = cmd("filter", "keep transitions with few surrounding vehicles")
    sp.add_argument("--in", dest="input", help="source dataset")
    sp.add_argument("--out")
    sp.add_argument("--max-vehicles", type=int)

    sp = cmd("train", "train a DQN (offline) or PPO (online) agent")
    sp.add_argument("--algo", choices=("dqn", "ppo"))
    sp.add_argument("--encoder", choices=("deepset", "set2set", "fixed", "grid"))
    sp.add_argument("--data", help="dataset file (dqn)")
    sp.add_argument("--out", help="final checkpoint path")
    sp.add_argument("--steps", type=int, help="gradient steps (dqn)")
    sp.add_argument("--env-steps", type=int, help="environment steps (ppo)")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--gamma", type=float)
    sp.add_argument("--lr", type=float)
    sp.add_argument("--tau", type=float)
    sp.add_argument("--batch-size", type=int)
    sp.add_argument("--log-every", type=int)
    sp.add_argument("--metrics", help="metrics CSV path")
    sp.add_argument("--checkpoint-every", type=int)
    sp.add_argument("--checkpoint-dir")
    sp.add_argument("--lanes", type=int, choices=(3, 5), help="training lanes (ppo)")

    for name, help_text in (("evaluate", "evaluate a checkpoint on the scenario sweep"),
                            ("baseline", "evaluate a baseline agent on the scenario sweep")):
        sp = cmd(name, help_text)
        if name == "evaluate":
            sp.add_argument("--checkpoint")
            sp.add_argument("--noise", help="'none', 'default' or 'SIGMA_DR,SIGMA_DV'")
        else:
            sp.add_argument("--kind", choices=("no-lane-change", "rule-based"))
        sp.add_argument("--lanes", type=int, choices=(3, 5))
        sp.add_argument("--ns", help="comma-separated vehicle counts (default 30,35,...,90)")
        sp.add_argument("--seeds", type=int, help="scenarios per vehicle count")
        sp.add_argument("--episode-length", type=int)
        sp.add_argument("--out", help="report CSV")
        sp.add_argument("--scenario", help="run a single scenario config file instead of the sweep")
        sp.add_argument("--trajectory", help="trajectory CSV for --scenario runs")

    sp = cmd("search", "random search over an architecture space")
    sp.add_argument("--encoder", choices=("deepset", "set2set", "fixed", "grid"))
    sp.add_argument("--data")
    sp.add_argument("--budget", type=int)
    sp.add_argument("--train-steps", type=int)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--out")

    sp = cmd("gradcheck", "finite-difference check of every encoder")
    sp.add_argument("--encoder", choices=("all", "deepset", "set2set", "fixed", "grid"))
    sp.add_argument("--coords", type=int)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--tolerance", type=float)

    sp = cmd("report", "merge evaluation reports into a summary CSV")
    sp.add_argument("--inputs", nargs="+", help="LABEL=REPORT.csv or REPORT.csv")
    sp.add_argument("--out")
    return p


def resolve(args: argparse.Namespace) -> dict:
    """Defaults, then the config file, then explicit flags."""
    opts = dict(DEFAULTS[args.command])
    if args.config:
        path = Path(args.config)
        if not path.is_file():
            raise UsageError(f"config file {path} does not exist")
        try:
            data = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise UsageError(f"config file {path} is not valid JSON: {exc}") from exc
        if not isinstance(data, dict):
            raise UsageError("config file must hold a JSON object")
        known = set(vars(args)) | set(opts)
        for key, value in data.items():
            key = key.replace("-", "_")
            if key not in known or key in ("command", "config"):
                raise UsageError(f"unknown config key {key!r}")
            opts[key] = value
    for key, value in vars(args).items():
        if key in ("command", "config", "verbose"):
            continue
        if value is not None or key not in opts:
            opts[key] = value
    return opts


def _require(opts: dict, *keys: str) -> None:
    missing = [k for k in keys if opts.get(k) in (None, "")]
    if missing:
        raise UsageError("missing required option(s): " + ", ".join("--" + k.replace("_", "-") for k in missing))


def _existing(path) -> Path:
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"input file {p} does not exist")
    return p


def cmd_collect(o: dict) -> int:
    from .dataset import collect_dataset
    _require(o, "out")
    info = collect_dataset(o["out"], int(o["count"]), int(o["seed"]), int(o["lanes"]),
                           (int(o["n_min"]), int(o["n_max"])), int(o["episode_length"]),
                           int(o["driver_pool_seed"]))
    log.info("wrote %d transitions from %d episodes to %s", info["count"], info["episodes"], o["out"])
    return EXIT_OK


def cmd_filter(o: dict) -> int:
    from .dataset import filter_dataset_max6
    _require(o, "input", "out")
    kept = filter_dataset_max6(_existing(o["input"]), o["out"], int(o["max_vehicles"]))
    log.info("kept %d transitions", kept)
    return EXIT_OK


def cmd_train(o: dict) -> int:
    _require(o, "out")
    overrides = {k: o[k] for k in ("gamma", "lr", "tau", "batch_size") if o.get(k) is not None}
    if o["algo"] == "dqn":
        from ..qlearning import QEnsemble, TrainConfig, Trainer
        from .dataset import load_buffer
        _require(o, "data")
        buffer = load_buffer(_existing(o["data"]))
        if len(buffer) == 0:
            raise UsageError("dataset is empty")
        config = TrainConfig(steps=int(o["steps"]), seed=int(o["seed"]), log_every=int(o["log_every"]),
                             checkpoint_every=int(o["checkpoint_every"]), **overrides)
        ens = QEnsemble(o["encoder"], config)
        Trainer(ens, buffer, o.get("metrics"), o.get("checkpoint_dir")).run()
        ens.save(o["out"])
    else:
        from ..ppo import HighwayEnv, PpoAgent, PpoConfig, train_ppo
        if o["encoder"] != "deepset":
            raise UsageError("PPO is implemented for the deepset encoder only")
        overrides.pop("tau", None)
        config = PpoConfig(seed=int(o["seed"]), env_steps=int(o["env_steps"]), **overrides)
        agent = PpoAgent(config)
        train_ppo(agent, HighwayEnv(lanes=int(o["lanes"]), seed=int(o["seed"])), metrics_path=o.get("metrics"))
        agent.save(o["out"])
    log.info("saved checkpoint %s", o["out"])
    return EXIT_OK


def _sweep(o: dict, agent) -> int:
    from ..sim import HighwaySim, ScenarioConfig
    from .evaluation import EVAL_NS, EvalReport, evaluate_policy
    from .reporting import write_metadata
    _require(o, "out")
    noises = _noise(o.get("noise"))
    if o.get("scenario"):
        config = ScenarioConfig.load(_existing(o["scenario"]))
        sim = HighwaySim(config, record=bool(o.get("trajectory")))
        rng = np.random.default_rng(config.seed)
        obs, total = sim.observe(), 0.0
        while not sim.done:
            obs, r, _ = sim.step(agent.act(sim, noises[0].apply(obs, rng)))
            total += r
        if o.get("trajectory"):
            sim.dump_trajectory(o["trajectory"])
        EvalReport([(config.n_vehicles, config.lanes, config.seed, total)]).to_csv(o["out"])
        return EXIT_OK
    ns = _csv_ints(o["ns"]) if o.get("ns") else list(EVAL_NS)
    for k, noise in enumerate(noises):
        out = Path(o["out"])
        if len(noises) > 1:
            out = out.with_name(f"{out.stem}.noise{k + 1}{out.suffix}")
        report = evaluate_policy(agent, int(o["lanes"]), ns, int(o["seeds"]), noise, int(o["episode_length"]))
        report.to_csv(out)
        meta = {k2: v for k2, v in o.items() if k2 not in ("trajectory", "scenario")}
        meta.update({"noise": [noise.sigma_dr, noise.sigma_dv], "ns": ns, "agent": agent.name})
        write_metadata(out, meta)
        log.info("%s: mean return %.3f over %d scenarios", out, report.mean(), len(report.rows))
    return EXIT_OK


def cmd_evaluate(o: dict) -> int:
    from .evaluation import load_agent
    _require(o, "checkpoint")
    return _sweep(o, load_agent(_existing(o["checkpoint"])))


def cmd_baseline(o: dict) -> int:
    from .evaluation import BASELINES
    if o["kind"] not in BASELINES:
        raise UsageError(f"unknown baseline {o['kind']!r}")
    return _sweep(dict(o, noise="none"), BASELINES[o["kind"]]())


def cmd_search(o: dict) -> int:
    from .dataset import load_buffer
    from .reporting import emit_search_csv, write_metadata
    from .search import random_search
    _require(o, "data", "out")
    buffer = load_buffer(_existing(o["data"]))
    results = random_search(o["encoder"], buffer, int(o["budget"]), int(o["train_steps"]), int(o["seed"]))
    emit_search_csv(results, o["out"])
    write_metadata(o["out"], o)
    return EXIT_OK


def cmd_gradcheck(o: dict) -> int:
    from ..encoders import ENCODER_KINDS, Network, SetBatch, StateBatch, default_arch
    from ..nn import grad_check
    seed = int(o["seed"])
    rng = np.random.default_rng(seed)
    sets = [rng.uniform(-1, 1, (k, 3)) for k in (0, 1, 3, 6, 2)]
    batch = StateBatch(SetBatch.from_sets(sets), rng.uniform(0, 1, (len(sets), 3)).astype(np.float32))
    kinds = ENCODER_KINDS if o["encoder"] == "all" else (o["encoder"],)
    worst = 0.0
    for kind in kinds:
        net = Network(default_arch(kind), rng=np.random.default_rng(seed))
        err = grad_check(net, batch, n_coords=int(o["coords"]), seed=seed)
        worst = max(worst, err)
        print(f"{kind:8s} max relative error {err:.3e}")
    ok = worst < float(o["tolerance"])
    print("PASS" if ok else "FAIL")
    return EXIT_OK if ok else EXIT_RUNTIME


def cmd_report(o: dict) -> int:
    from .evaluation import EvalReport
    from .reporting import emit_summary_csv, summarize
    _require(o, "inputs", "out")
    reports = {}
    for item in o["inputs"]:
        label, _, path = item.rpartition("=")
        path = _existing(path)
        reports[label or path.stem] = EvalReport.from_csv(path)
    emit_summary_csv(reports, o["out"])
    for label, lanes, n, mean, std, count in summarize(reports):
        print(f"{label:24s} lanes={lanes} n={n:3d} mean={mean:8.3f} std={std:7.3f} count={count}")
    return EXIT_OK


COMMANDS = {"collect": cmd_collect, "filter": cmd_filter, "train": cmd_train, "evaluate": cmd_evaluate,
            "baseline": cmd_baseline, "search": cmd_search, "gradcheck": cmd_gradcheck, "report": cmd_report}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](resolve(args))
    except (ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except Exception as exc:  # noqa: BLE001
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
