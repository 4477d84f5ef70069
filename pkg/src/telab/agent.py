"""Actor-critic agent with TE-aware exploration and prioritized replay.

The actor maps the normalized state to per-session split ratios through a
grouped softmax; the critic scores (state, action) pairs. Exploration mixes a
noise-perturbed base TE solution into the action stream with decaying
probability. Each decision epoch runs one training step: store the
transition, sample a prioritized mini-batch, accumulate importance-weighted
weight changes for both networks, apply them once through Adam, update
priorities, and soft-update the target networks.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path as FsPath

import numpy as np

from . import nn
from .replay import (
    PrioritizedBuffer,
    ReplayConfig,
    TransitionSample,
    anneal_beta1,
    compute_priority,
)
from .sim import SplitAction


class TrainingDivergedError(RuntimeError):
    """Non-finite value during a training update; aborts the run loudly."""

    def __init__(self, message: str, epoch: int):
        super().__init__(f"{message} (epoch {epoch})")
        self.epoch = epoch


@dataclass(frozen=True)
class AgentConfig:
    gamma: float = 0.99
    tau: float = 0.01
    lr_actor: float = 1e-3
    lr_critic: float = 1e-2
    batch_size: int = 64
    epsilon0: float = 1.0
    epsilon_decay: float = 0.9985
    epsilon_min: float = 0.01
    noise_amplitude: float = 0.5
    reward_scale: float = 5e-4   # scales rewards before the critic target
    hidden: tuple[int, int] = (64, 32)
    replay: ReplayConfig = field(default_factory=ReplayConfig)
    # exploration guide: a fixed policy (SP | LB | NUM), "best" to pick the
    # strongest of the three by a short simulation, or "none" (plain-DDPG arm)
    base_policy: str = "best"

    def __post_init__(self):
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError("gamma must be in [0, 1]")
        if not 0.0 < self.tau <= 1.0:
            raise ValueError("tau must be in (0, 1]")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not 0.0 <= self.epsilon0 <= 1.0:
            raise ValueError("epsilon0 must be in [0, 1]")
        if self.base_policy not in ("SP", "LB", "NUM", "best", "none"):
            raise ValueError(f"unknown base policy {self.base_policy!r}")


@dataclass
class TrainDiagnostics:
    updated: bool
    mean_abs_td: float = 0.0
    mean_priority: float = 0.0
    critic_loss: float = 0.0
    actor_value: float = 0.0
    indices: np.ndarray | None = None
    td_errors: np.ndarray | None = None
    grad_means: np.ndarray | None = None
    priorities: np.ndarray | None = None


def epsilon_at(cfg: AgentConfig, t: int) -> float:
    """max(epsilon_min, epsilon0 * decay^t); nonincreasing in t."""
    if t < 0:
        raise ValueError("t must be >= 0")
    return max(cfg.epsilon_min, cfg.epsilon0 * cfg.epsilon_decay ** t)


def project_to_simplexes(flat: np.ndarray, group_sizes: tuple[int, ...]) -> np.ndarray:
    """Clip negatives and renormalize each session block; an all-zero block
    falls back to a uniform split."""
    out = np.empty_like(flat)
    start = 0
    for g in group_sizes:
        v = np.maximum(flat[start:start + g], 0.0)
        s = v.sum()
        if s <= 1e-12:
            out[start:start + g] = 1.0 / g
        else:
            out[start:start + g] = v / s
        start += g
    return out


class Agent:
    """Owns the four networks, optimizer states, replay buffer and epoch counter."""

    def __init__(self, actor: nn.MlpParams, critic: nn.MlpParams,
                 cfg: AgentConfig, group_sizes: tuple[int, ...], seed: int = 0):
        if critic.input_dim != actor.input_dim + actor.output_dim:
            raise ValueError("critic input must be state_dim + action_dim")
        self.cfg = cfg
        self.group_sizes = tuple(group_sizes)
        self.actor = actor
        self.critic = critic
        self.target_actor = nn.clone_params(actor)
        self.target_critic = nn.clone_params(critic)
        self.actor_opt = nn.init_adam(actor, cfg.lr_actor)
        self.critic_opt = nn.init_adam(critic, cfg.lr_critic)
        ss = np.random.SeedSequence(seed)
        self.rng = np.random.default_rng(ss.spawn(1)[0])
        self.buffer = PrioritizedBuffer(cfg.replay,
                                        seed=int(ss.generate_state(1)[0]))
        self.t = 0
        self.a_base: np.ndarray | None = None

    @classmethod
    def build(cls, state_dim: int, group_sizes: tuple[int, ...],
              cfg: AgentConfig, seed: int = 0,
              total_epochs: int | None = None) -> "Agent":
        """Standard construction: grouped-softmax actor, scalar critic."""
        if cfg.replay.anneal_epochs is None:
            cfg = replace(cfg, replay=replace(cfg.replay,
                                              anneal_epochs=total_epochs or 10_000))
        action_dim = sum(group_sizes)
        ss = np.random.SeedSequence(seed)
        s_actor, s_critic, s_agent = (int(x) for x in ss.generate_state(3))
        actor = nn.init_params(state_dim, action_dim, hidden=cfg.hidden,
                               output_mode="grouped_softmax", groups=group_sizes,
                               seed=s_actor)
        critic = nn.init_params(state_dim + action_dim, 1, hidden=cfg.hidden,
                                seed=s_critic)
        return cls(actor, critic, cfg, group_sizes, seed=s_agent)

    # -- acting ------------------------------------------------------------

    @property
    def state_dim(self) -> int:
        return self.actor.input_dim

    @property
    def action_dim(self) -> int:
        return self.actor.output_dim

    def set_base_action(self, action: SplitAction | np.ndarray | None) -> None:
        if action is None:
            self.a_base = None
        else:
            flat = action.flat() if isinstance(action, SplitAction) else np.asarray(action)
            if flat.shape != (self.action_dim,):
                raise ValueError("base action dimension mismatch")
            self.a_base = flat.astype(float).copy()

    def current_epsilon(self) -> float:
        return epsilon_at(self.cfg, self.t)

    def act_greedy(self, state: np.ndarray) -> SplitAction:
        """Deterministic actor output; simplex-valid by the grouped softmax."""
        y, _ = nn.forward(self.actor, state)
        return SplitAction.from_flat(y, self.group_sizes)

    def act_explore(self, state: np.ndarray) -> SplitAction:
        """With probability eps_t perturb the base TE action, otherwise the
        actor output; both get eps_t-scaled uniform noise, then a projection
        back onto the per-session simplexes."""
        eps = self.current_epsilon()
        if self.a_base is not None and self.rng.random() < eps:
            a = self.a_base
        else:
            a, _ = nn.forward(self.actor, state)
        noise = self.rng.uniform(-self.cfg.noise_amplitude,
                                 self.cfg.noise_amplitude, size=self.action_dim)
        flat = project_to_simplexes(a + eps * noise, self.group_sizes)
        return SplitAction.from_flat(flat, self.group_sizes)

    # -- learning ----------------------------------------------------------

    def train_step(self, transition: TransitionSample) -> TrainDiagnostics:
        """Store the transition, then (once the buffer can fill a batch) run
        one accumulated update of critic and actor plus target soft-updates."""
        if transition.state.shape != (self.state_dim,) or \
                transition.action.shape != (self.action_dim,) or \
                transition.next_state.shape != (self.state_dim,):
            raise ValueError("transition dimension mismatch")
        cfg = self.cfg
        self.buffer.insert(transition)
        if len(self.buffer) < cfg.batch_size:
            self.t += 1
            return TrainDiagnostics(updated=False)

        beta1 = anneal_beta1(cfg.replay, self.t)
        batch = self.buffer.sample_batch(cfg.batch_size, beta1)

        critic_acc = nn.zeros_like_grads(self.critic)
        actor_acc = nn.zeros_like_grads(self.actor)
        n = len(batch)
        deltas = np.empty(n)
        grad_means = np.empty(n)
        priorities = np.empty(n)
        indices = np.empty(n, dtype=int)
        weighted_sq = 0.0
        actor_value = 0.0

        for i, (idx, tr, w) in enumerate(batch):
            a_next, _ = nn.forward(self.target_actor, tr.next_state)
            q_next, _ = nn.forward(self.target_critic,
                                   np.concatenate([tr.next_state, a_next]))
            y = cfg.reward_scale * tr.reward + cfg.gamma * q_next[0]

            q, cache_q = nn.forward(self.critic,
                                    np.concatenate([tr.state, tr.action]))
            delta = y - q[0]
            if not np.isfinite(delta):
                raise TrainingDivergedError("non-finite TD error", self.t)
            # ascent on -0.5 * delta^2: accumulate w * delta * dQ/dtheta
            g_critic = nn.backward_params(self.critic, cache_q, np.ones(1))
            nn.accumulate(critic_acc, g_critic, w * delta)

            a_pi, cache_pi = nn.forward(self.actor, tr.state)
            q_pi, cache_qpi = nn.forward(self.critic,
                                         np.concatenate([tr.state, a_pi]))
            dq_input = nn.backward_input(self.critic, cache_qpi, np.ones(1))
            dq_da = dq_input[self.state_dim:]
            if not np.all(np.isfinite(dq_da)):
                raise TrainingDivergedError("non-finite action gradient", self.t)
            g_actor = nn.backward_params(self.actor, cache_pi, dq_da)
            nn.accumulate(actor_acc, g_actor, w)

            # priorities live in raw reward units so the xi offset keeps its
            # intended magnitude regardless of reward_scale
            p = compute_priority(delta / cfg.reward_scale,
                                 dq_da / cfg.reward_scale, cfg.replay)
            self.buffer.update_priority(idx, p)

            indices[i] = idx
            deltas[i] = delta
            grad_means[i] = float(np.mean(np.abs(dq_da)))
            priorities[i] = p
            weighted_sq += w * delta * delta
            actor_value += q_pi[0]

        # Adam minimizes, so feed the negated ascent accumulators
        neg_c = nn.Gradients([-w for w in critic_acc.weights],
                             [-b for b in critic_acc.biases])
        neg_a = nn.Gradients([-w for w in actor_acc.weights],
                             [-b for b in actor_acc.biases])
        try:
            nn.adam_step(self.critic, neg_c, self.critic_opt)
            nn.adam_step(self.actor, neg_a, self.actor_opt)
        except ValueError as e:
            raise TrainingDivergedError(str(e), self.t) from e
        for p in (self.critic, self.actor):
            for arr in (*p.weights, *p.biases):
                if not np.all(np.isfinite(arr)):
                    raise TrainingDivergedError("non-finite network parameter", self.t)

        nn.soft_update(self.target_critic, self.critic, cfg.tau)
        nn.soft_update(self.target_actor, self.actor, cfg.tau)
        self.t += 1
        return TrainDiagnostics(
            updated=True,
            mean_abs_td=float(np.mean(np.abs(deltas))),
            mean_priority=float(np.mean(priorities)),
            critic_loss=float(weighted_sq / n),
            actor_value=float(actor_value / n),
            indices=indices, td_errors=deltas,
            grad_means=grad_means, priorities=priorities)

    # -- persistence ---------------------------------------------------------

    def save(self, path: str | FsPath) -> None:
        """All four networks, both optimizer states, epoch counter, base action."""
        arrays = {}
        nets = {"actor": self.actor, "critic": self.critic,
                "tactor": self.target_actor, "tcritic": self.target_critic}
        meta = {"version": nn.CHECKPOINT_VERSION, "t": self.t,
                "group_sizes": list(self.group_sizes),
                "has_base": self.a_base is not None}
        for name, p in nets.items():
            meta[name] = {"n_layers": len(p.weights), "hidden_slope": p.hidden_slope,
                          "output_mode": p.output_mode,
                          "groups": list(p.groups) if p.groups else None}
            for i, (w, b) in enumerate(zip(p.weights, p.biases)):
                arrays[f"{name}_W{i}"] = w
                arrays[f"{name}_b{i}"] = b
        for name, opt in (("aopt", self.actor_opt), ("copt", self.critic_opt)):
            meta[name] = {"lr": opt.lr, "step": opt.step}
            for i in range(len(opt.m_w)):
                arrays[f"{name}_mw{i}"] = opt.m_w[i]
                arrays[f"{name}_vw{i}"] = opt.v_w[i]
                arrays[f"{name}_mb{i}"] = opt.m_b[i]
                arrays[f"{name}_vb{i}"] = opt.v_b[i]
        if self.a_base is not None:
            arrays["a_base"] = self.a_base
        arrays["meta"] = np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8)
        np.savez(path, **arrays)

    def load(self, path: str | FsPath) -> None:
        with np.load(path) as data:
            meta = json.loads(bytes(data["meta"]).decode())
            if meta["version"] != nn.CHECKPOINT_VERSION:
                raise ValueError(f"unsupported checkpoint version {meta['version']}")
            for name, p in (("actor", self.actor), ("critic", self.critic),
                            ("tactor", self.target_actor),
                            ("tcritic", self.target_critic)):
                for i in range(meta[name]["n_layers"]):
                    p.weights[i][:] = data[f"{name}_W{i}"]
                    p.biases[i][:] = data[f"{name}_b{i}"]
            for name, opt in (("aopt", self.actor_opt), ("copt", self.critic_opt)):
                opt.step = meta[name]["step"]
                for i in range(len(opt.m_w)):
                    opt.m_w[i][:] = data[f"{name}_mw{i}"]
                    opt.v_w[i][:] = data[f"{name}_vw{i}"]
                    opt.m_b[i][:] = data[f"{name}_mb{i}"]
                    opt.v_b[i][:] = data[f"{name}_vb{i}"]
            self.t = meta["t"]
            self.a_base = data["a_base"].copy() if meta["has_base"] else None
