"""Experiment orchestration: demand-window sweeps, the online learning loop,
metric collection, reward normalization/smoothing, and CSV export.

A run is one (window, seed, arm) triple. Static arms (SP, LB, NUM) apply one
action for every epoch; learning arms (DRL-TE, DDPG) couple the agent to the
simulator online. The same simulator seed is used for every arm of a
(window, seed) pair, so arms see identical arrival processes.
"""

from __future__ import annotations

import csv
import json
import multiprocessing
import os
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path as FsPath

import numpy as np
from scipy import signal

from .agent import Agent, AgentConfig, TrainingDivergedError
from .baselines import lb_action, num_action, num_solve, sp_action
from .objective import UtilityConfig, reward
from .replay import ReplayConfig, TransitionSample
from .sim import (
    NormConfig,
    SimConfig,
    SplitAction,
    init_sim,
    observation_to_state,
    run_epoch,
)
from .topology import (
    MBPS,
    NetworkGraph,
    bundled_topology,
    generate_random_topology,
    load_topology,
    make_sessions,
)

CONFIG_VERSION = 1
ARMS = ("DRL-TE", "DDPG", "SP", "LB", "NUM")
ENV_OUT_DIR = "TELAB_OUT_DIR"
ENV_WORKERS = "TELAB_WORKERS"


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    topology: str | None = "nsfnet"            # bundled name or document path
    random_topology: tuple[int, int, int] | None = None   # (nodes, links, seed)
    k_sessions: int = 20
    window_lo: float = 10 * MBPS               # bits/s
    window_hi: float = 30 * MBPS
    slide_step: float = 5 * MBPS
    n_windows: int = 1
    arms: tuple[str, ...] = ("DRL-TE",)
    epochs: int = 10_000
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    eval_span: int = 1000
    out_dir: str | None = None
    workers: int = 1
    smooth_cutoff: float = 0.05
    agent: AgentConfig = field(default_factory=AgentConfig)
    sim: SimConfig = field(default_factory=lambda: SimConfig(seed=0))
    utility: UtilityConfig = field(default_factory=UtilityConfig)
    norm: NormConfig = field(default_factory=NormConfig)

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.window_hi <= self.window_lo:
            raise ConfigError("window_hi must exceed window_lo")
        if self.slide_step <= 0:
            raise ConfigError("slide_step must be > 0")
        if not self.seeds:
            raise ConfigError("need at least one seed")
        for arm in self.arms:
            if arm not in ARMS:
                raise ConfigError(f"unknown arm {arm!r}; valid: {ARMS}")
        if self.topology is None and self.random_topology is None:
            raise ConfigError("either topology or random_topology is required")

    def window(self, i: int) -> tuple[float, float]:
        return (self.window_lo + i * self.slide_step,
                self.window_hi + i * self.slide_step)

    # -- serialization ------------------------------------------------------

    def to_json(self) -> str:
        doc = asdict(self)
        doc["version"] = CONFIG_VERSION
        return json.dumps(doc, indent=1)

    @staticmethod
    def from_json(text: str) -> "ExperimentConfig":
        doc = json.loads(text)
        version = doc.pop("version", CONFIG_VERSION)
        if version != CONFIG_VERSION:
            raise ConfigError(f"unsupported config version {version}")
        try:
            if "agent" in doc:
                replay = doc["agent"].pop("replay", {})
                doc["agent"]["replay"] = ReplayConfig(**replay)
                doc["agent"]["hidden"] = tuple(doc["agent"].get("hidden", (64, 32)))
                doc["agent"] = AgentConfig(**doc["agent"])
            if "sim" in doc:
                doc["sim"] = SimConfig(**doc["sim"])
            if "utility" in doc:
                doc["utility"] = UtilityConfig(**doc["utility"])
            if "norm" in doc:
                doc["norm"] = NormConfig(**doc["norm"])
            for key in ("arms", "seeds"):
                if key in doc:
                    doc[key] = tuple(doc[key])
            if doc.get("random_topology") is not None:
                doc["random_topology"] = tuple(doc["random_topology"])
            return ExperimentConfig(**doc)
        except TypeError as e:
            raise ConfigError(f"bad config field: {e}") from e

    @staticmethod
    def load(path: str | FsPath) -> "ExperimentConfig":
        return ExperimentConfig.from_json(FsPath(path).read_text())


@dataclass
class RunRecord:
    arm: str
    seed: int
    window: tuple[float, float]       # bits/s
    rewards: np.ndarray               # (T,)
    throughput: np.ndarray            # (T, K) bits/s
    delay: np.ndarray                 # (T, K) s
    drops: np.ndarray                 # (T, K) packets
    epsilon: np.ndarray               # (T,)
    mean_abs_td: np.ndarray           # (T,)

    @property
    def epochs(self) -> int:
        return self.rewards.shape[0]

    def summary(self, eval_span: int = 1000) -> dict:
        span = min(eval_span, self.epochs)
        sl = slice(self.epochs - span, self.epochs)
        return {
            "arm": self.arm,
            "seed": self.seed,
            "window_mbps": [self.window[0] / MBPS, self.window[1] / MBPS],
            "eval_span": span,
            "mean_utility": float(self.rewards[sl].mean()),
            "mean_total_throughput_mbps":
                float(self.throughput[sl].sum(axis=1).mean() / MBPS),
            "mean_delay_ms": float(self.delay[sl].mean() * 1e3),
            "mean_drops_per_epoch": float(self.drops[sl].sum(axis=1).mean()),
        }


def build_graph(cfg: ExperimentConfig) -> NetworkGraph:
    if cfg.random_topology is not None:
        n, m, seed = cfg.random_topology
        return generate_random_topology(n, m, seed)
    if FsPath(cfg.topology).exists():
        return load_topology(cfg.topology)
    return bundled_topology(cfg.topology)


def _derived_seed(*parts: int) -> int:
    return int(np.random.SeedSequence(list(parts)).generate_state(1)[0])


def _base_action(policy: str, g, sessions, cfg=None, probe_seed=0) -> SplitAction:
    if policy == "SP":
        return sp_action(sessions)
    if policy == "LB":
        return lb_action(sessions)
    if policy == "NUM":
        return num_action(num_solve(g, sessions))
    if policy == "best":
        if cfg is None:
            raise ConfigError("'best' base needs the experiment config")
        return _best_base_action(g, sessions, cfg, probe_seed)
    raise ConfigError(f"no base action for policy {policy!r}")


def _best_base_action(g, sessions, cfg: "ExperimentConfig", probe_seed: int,
                      probe_epochs: int = 50) -> SplitAction:
    """Pick the strongest of SP/LB/NUM by simulating each briefly on a
    throwaway simulator clone (the training stream is untouched)."""
    best = None
    for policy in ("SP", "LB", "NUM"):
        action = _base_action(policy, g, sessions)
        sim = init_sim(g, sessions, replace(cfg.sim, seed=probe_seed))
        run_epoch(sim, action)
        mean = np.mean([reward(run_epoch(sim, action), cfg.utility)
                        for _ in range(probe_epochs)])
        if best is None or mean > best[0]:
            best = (mean, action)
    return best[1]


def run_single(cfg: ExperimentConfig, window_idx: int, seed: int,
               arm: str) -> RunRecord:
    """One full run; deterministic for a fixed (config, window, seed, arm)."""
    g = build_graph(cfg)
    window = cfg.window(window_idx)
    sessions = make_sessions(g, cfg.k_sessions, window, seed=seed)
    groups = tuple(len(s.paths) for s in sessions)
    K = len(sessions)
    T = cfg.epochs

    sim_cfg = replace(cfg.sim, seed=_derived_seed(seed, window_idx, 1))
    sim = init_sim(g, sessions, sim_cfg)

    rewards = np.zeros(T)
    thr = np.zeros((T, K))
    dly = np.zeros((T, K))
    drops = np.zeros((T, K), dtype=np.int64)
    eps = np.zeros(T)
    td = np.zeros(T)

    if arm in ("SP", "LB", "NUM"):
        action = _base_action(arm, g, sessions)
        run_epoch(sim, action)  # warm-up epoch provides the initial state
        for t in range(T):
            obs = run_epoch(sim, action)
            rewards[t] = reward(obs, cfg.utility)
            thr[t] = obs.throughput
            dly[t] = obs.delay
            drops[t] = obs.drops
        return RunRecord(arm, seed, window, rewards, thr, dly, drops, eps, td)

    if arm == "DRL-TE":
        agent_cfg = cfg.agent
    elif arm == "DDPG":
        # plain-DDPG comparison arm: uniform replay, no base mixing
        agent_cfg = replace(cfg.agent, base_policy="none",
                            replay=replace(cfg.agent.replay, beta0=0.0))
    else:
        raise ConfigError(f"unknown arm {arm!r}")

    agent = Agent.build(2 * K, groups, agent_cfg,
                        seed=_derived_seed(seed, window_idx, 2, ARMS.index(arm)),
                        total_epochs=T)
    if agent_cfg.base_policy != "none":
        base = _base_action(agent_cfg.base_policy, g, sessions, cfg,
                            probe_seed=_derived_seed(seed, window_idx, 3))
        agent.set_base_action(base)
        warmup = base
    else:
        warmup = SplitAction.uniform(groups)

    obs = run_epoch(sim, warmup)
    state = observation_to_state(obs, cfg.norm)
    for t in range(T):
        eps[t] = agent.current_epsilon()
        act = agent.act_explore(state)
        obs = run_epoch(sim, act)
        rewards[t] = reward(obs, cfg.utility)
        thr[t] = obs.throughput
        dly[t] = obs.delay
        drops[t] = obs.drops
        next_state = observation_to_state(obs, cfg.norm)
        try:
            diag = agent.train_step(
                TransitionSample(state, act.flat(), rewards[t], next_state))
        except TrainingDivergedError as e:
            raise TrainingDivergedError(
                f"{arm} run diverged (window {window_idx}, seed {seed})", e.epoch
            ) from e
        td[t] = diag.mean_abs_td
        state = next_state
    return RunRecord(arm, seed, window, rewards, thr, dly, drops, eps, td)


def _run_job(args):
    cfg, w, seed, arm = args
    return (w, seed, arm), run_single(cfg, w, seed, arm)


def run_experiment(cfg: ExperimentConfig) -> dict[tuple[int, int, str], RunRecord]:
    """All (window, seed, arm) runs; optionally exports one CSV per run."""
    out_dir = os.environ.get(ENV_OUT_DIR, cfg.out_dir)
    workers = int(os.environ.get(ENV_WORKERS, cfg.workers))
    jobs = [(cfg, w, seed, arm)
            for w in range(cfg.n_windows)
            for seed in cfg.seeds
            for arm in cfg.arms]
    results: dict[tuple[int, int, str], RunRecord] = {}
    if workers > 1 and len(jobs) > 1:
        with multiprocessing.Pool(workers) as pool:
            for key, rec in pool.imap_unordered(_run_job, jobs):
                results[key] = rec
    else:
        for job in jobs:
            key, rec = _run_job(job)
            results[key] = rec
    if out_dir:
        path = FsPath(out_dir)
        path.mkdir(parents=True, exist_ok=True)
        for (w, seed, arm), rec in sorted(results.items()):
            center = (rec.window[0] + rec.window[1]) / 2 / MBPS
            name = f"{arm.lower().replace('-', '')}_w{center:g}_s{seed}.csv"
            export_csv(rec, path / name, cutoff=cfg.smooth_cutoff)
    return results


# -- reward post-processing (reporting only, never used in training) --------

def normalize_rewards(series: np.ndarray) -> np.ndarray:
    """Affine map to [0, 1]; a constant series maps to all zeros."""
    series = np.asarray(series, dtype=float)
    if series.size < 1:
        raise ValueError("series must not be empty")
    lo, hi = series.min(), series.max()
    if hi == lo:
        return np.zeros_like(series)
    return (series - lo) / (hi - lo)


def smooth_rewards(series: np.ndarray, order: int = 2,
                   cutoff: float = 0.05) -> np.ndarray:
    """Low-pass Butterworth filter applied forward then backward (zero net
    phase shift); output length equals input length."""
    series = np.asarray(series, dtype=float)
    b, a = signal.butter(order, cutoff)
    padlen = 3 * max(len(a), len(b))
    if series.size <= padlen:
        raise ValueError(f"series too short to smooth (need > {padlen} points)")
    return signal.filtfilt(b, a, series)


# -- CSV export --------------------------------------------------------------

def csv_columns(k: int) -> list[str]:
    return (["epoch", "reward", "reward_norm", "reward_smooth"]
            + [f"x_{i + 1}" for i in range(k)]
            + [f"z_{i + 1}" for i in range(k)]
            + ["drops", "epsilon", "mean_abs_td"])


def export_csv(record: RunRecord, path: str | FsPath, cutoff: float = 0.05) -> None:
    """One row per epoch; throughput in Mbps, delay in ms, floats at full
    (round-trip) precision. reward_smooth is the normalized forward-backward
    filtered reward; for runs too short to filter it falls back to reward_norm."""
    norm = normalize_rewards(record.rewards)
    try:
        smooth = normalize_rewards(smooth_rewards(record.rewards, cutoff=cutoff))
    except ValueError:
        smooth = norm
    k = record.throughput.shape[1]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(csv_columns(k))
        for t in range(record.epochs):
            row = [t + 1, repr(float(record.rewards[t])),
                   repr(float(norm[t])), repr(float(smooth[t]))]
            row += [repr(float(v / MBPS)) for v in record.throughput[t]]
            row += [repr(float(v * 1e3)) for v in record.delay[t]]
            row += [int(record.drops[t].sum()),
                    repr(float(record.epsilon[t])),
                    repr(float(record.mean_abs_td[t]))]
            w.writerow(row)


def read_csv_columns(path: str | FsPath) -> dict[str, np.ndarray]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, data = rows[0], rows[1:]
    out = {}
    for i, name in enumerate(header):
        out[name] = np.array([float(r[i]) for r in data])
    return out
