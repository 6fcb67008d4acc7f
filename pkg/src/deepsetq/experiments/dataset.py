"""Binary transition datasets: collection, streaming IO and filtering.

Layout (little endian)::

    magic  b"DSQDATA\\0"
    u32    format version
    u64    transition count (patched when the writer closes)
    u32    header length, then that many bytes of sorted-key JSON
    records, each:
        u8 action, f64 reward, state, next state
    state:
        3 x f32 static features, u16 set size k, k x 3 f32 (dr, dv, dl)
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
from collections.abc import Iterator
from dataclasses import asdict
from pathlib import Path

import numpy as np

from ..encoders import N_ACTIONS, Observation, SetBatch, StateBatch
from ..qlearning import ReplayBuffer, Transition
from ..sim import HighwaySim, LaneChangeParams, RingRoad, ScenarioConfig

MAGIC = b"DSQDATA\x00"
VERSION = 1
SCHEMA = {"dynamic": ["dr", "dv", "dl"], "static": ["v_ego_norm", "left_available", "right_available"]}
N_RANGE = (30, 60)
MAX_SET = 65535

_PRE = struct.Struct("<8sIQI")
_REC = struct.Struct("<Bd")
_STATE = struct.Struct("<3fH")


class DatasetFormatError(ValueError):
    pass


def sim_config_hash(lanes: int, episode_length: int, driver_pool_seed: int,
                    lc: LaneChangeParams | None = None, road: RingRoad | None = None) -> str:
    road = road if road is not None else RingRoad(lanes=lanes)
    lc = lc if lc is not None else LaneChangeParams()
    blob = json.dumps({"road": asdict(road), "lane_change": asdict(lc), "episode_length": episode_length,
                       "driver_pool_seed": driver_pool_seed}, sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _pack_state(obs: Observation) -> bytes:
    dyn = np.ascontiguousarray(obs.dynamic, dtype="<f4").reshape(-1, 3)
    if len(dyn) > MAX_SET:
        raise ValueError(f"set of {len(dyn)} vehicles exceeds the record limit")
    static = np.asarray(obs.static, dtype=np.float32)
    return _STATE.pack(*static.tolist(), len(dyn)) + dyn.tobytes()


class DatasetWriter:
    """Append-only writer; the file only appears under its final name on success."""

    def __init__(self, path: str | Path, header: dict):
        self.path = Path(path)
        self.partial = self.path.with_name(self.path.name + ".partial")
        self.header = dict(header, format="deepsetq-dataset", version=VERSION)
        self.header.pop("count", None)
        self.count = 0
        self._fh = open(self.partial, "wb")
        blob = json.dumps(self.header, sort_keys=True).encode()
        self._fh.write(_PRE.pack(MAGIC, VERSION, 0, len(blob)) + blob)

    def write(self, transition: Transition) -> None:
        self._fh.write(_REC.pack(int(transition.action), float(transition.reward)))
        self._fh.write(_pack_state(transition.state))
        self._fh.write(_pack_state(transition.next_state))
        self.count += 1

    def close(self) -> None:
        self._fh.seek(struct.calcsize("<8sI"))
        self._fh.write(struct.pack("<Q", self.count))
        self._fh.close()
        os.replace(self.partial, self.path)

    def abort(self) -> None:
        """Close without publishing; the ``.partial`` file marks the failed write."""
        if not self._fh.closed:
            self._fh.close()

    def __enter__(self) -> DatasetWriter:
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        if exc_type is None:
            self.close()
        else:
            self.abort()


def read_header(path: str | Path) -> dict:
    with open(path, "rb") as fh:
        header, _ = _read_preamble(fh)
    return header


def _read_preamble(fh) -> tuple[dict, int]:
    raw = fh.read(_PRE.size)
    if len(raw) < _PRE.size:
        raise DatasetFormatError("file too short for a dataset header")
    magic, version, count, hlen = _PRE.unpack(raw)
    if magic != MAGIC:
        raise DatasetFormatError("not a dataset file (bad magic)")
    if version != VERSION:
        raise DatasetFormatError(f"unsupported dataset version {version}")
    header = json.loads(fh.read(hlen))
    header["count"] = count
    return header, _PRE.size + hlen


def _read_state(fh) -> Observation:
    raw = fh.read(_STATE.size)
    if len(raw) < _STATE.size:
        raise DatasetFormatError("truncated record")
    s0, s1, s2, k = _STATE.unpack(raw)
    body = fh.read(12 * k)
    if len(body) < 12 * k:
        raise DatasetFormatError("truncated record")
    dyn = np.frombuffer(body, dtype="<f4").reshape(k, 3).astype(np.float32)
    return Observation(dyn, np.array([s0, s1, s2], dtype=np.float32))


def iter_transitions(path: str | Path) -> Iterator[Transition]:
    """Stream transitions without loading the whole file."""
    with open(path, "rb") as fh:
        header, _ = _read_preamble(fh)
        for _ in range(header["count"]):
            raw = fh.read(_REC.size)
            if len(raw) < _REC.size:
                raise DatasetFormatError("truncated record")
            action, reward = _REC.unpack(raw)
            if action >= N_ACTIONS:
                raise DatasetFormatError(f"invalid action {action}")
            state = _read_state(fh)
            next_state = _read_state(fh)
            yield Transition(state, action, reward, next_state)


def load_buffer(path: str | Path, capacity: int | None = None) -> ReplayBuffer:
    """Read a dataset into a columnar replay buffer."""
    states, nexts, actions, rewards = [], [], [], []
    for t in iter_transitions(path):
        states.append(t.state)
        nexts.append(t.next_state)
        actions.append(t.action)
        rewards.append(t.reward)
    if not actions:
        empty = StateBatch(SetBatch.from_sets([]), np.zeros((0, 3), np.float32))
        return ReplayBuffer.from_arrays(empty, [], [], empty, capacity=capacity or 1)
    return ReplayBuffer.from_arrays(StateBatch.from_observations(states), actions, rewards,
                                    StateBatch.from_observations(nexts), capacity=capacity)


def random_safe_action(sim: HighwaySim, rng: np.random.Generator) -> int:
    options = sim.safe_actions()
    return options[int(rng.integers(len(options)))]


def collect_dataset(path: str | Path, count: int, seed: int, lanes: int = 3,
                    n_range: tuple[int, int] = N_RANGE, episode_length: int = 250,
                    driver_pool_seed: int = 0) -> dict:
    """Run the random collection agent and write ``count`` transitions to ``path``.

    Each episode draws its vehicle count uniformly from ``n_range``
    (inclusive) and its scenario seed from the master seed. The stored
    action is the one chosen by the agent, which is always safe.
    """
    if count <= 0:
        raise ValueError("count must be positive")
    lo, hi = n_range
    if not 0 <= lo <= hi:
        raise ValueError(f"invalid vehicle range {n_range}")
    rng = np.random.default_rng(seed)
    header = {"seed": seed, "collector": "random-safe", "lanes": lanes, "n_range": [lo, hi],
              "episode_length": episode_length, "driver_pool_seed": driver_pool_seed, "schema": SCHEMA,
              "sim_config_hash": sim_config_hash(lanes, episode_length, driver_pool_seed)}
    episodes = []
    with DatasetWriter(path, header) as writer:
        while writer.count < count:
            n = int(rng.integers(lo, hi + 1))
            scenario_seed = int(rng.integers(2**31))
            sim = HighwaySim(ScenarioConfig(n, lanes, scenario_seed, episode_length, driver_pool_seed))
            episodes.append((n, scenario_seed))
            obs = sim.observe()
            while not sim.done and writer.count < count:
                action = random_safe_action(sim, rng)
                nxt, r, _ = sim.step(action)
                writer.write(Transition(obs, action, r, nxt))
                obs = nxt
    return {"count": count, "episodes": len(episodes), "scenarios": episodes}


def filter_dataset_max6(src: str | Path, dst: str | Path, max_vehicles: int = 6) -> int:
    """Keep transitions whose state and next state both see at most ``max_vehicles`` vehicles."""
    header = read_header(src)
    header.pop("count")
    previous = header.get("filter")
    if previous is None or previous["max_vehicles"] > max_vehicles:
        header["filter"] = {"max_vehicles": max_vehicles}
    with DatasetWriter(dst, header) as writer:
        for t in iter_transitions(src):
            if len(t.state.dynamic) <= max_vehicles and len(t.next_state.dynamic) <= max_vehicles:
                writer.write(t)
    return writer.count


def file_digest(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()
