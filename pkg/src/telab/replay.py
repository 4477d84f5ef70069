"""Prioritized experience replay over a sum-tree.

Leaves store priorities raised to the prioritization exponent, so prefix-sum
descent samples index i with probability p_i^beta0 / sum_j p_j^beta0; raw
priorities are kept alongside for the insert-with-max rule. Importance
weights are (n * P(i))^(-beta1), normalized by the batch max so they only
scale updates downward.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class TransitionSample:
    state: np.ndarray
    action: np.ndarray
    reward: float
    next_state: np.ndarray

    def __post_init__(self):
        for name in ("state", "action", "next_state"):
            arr = np.asarray(getattr(self, name), dtype=float)
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"non-finite {name}")
            object.__setattr__(self, name, arr)
        if not np.isfinite(self.reward):
            raise ValueError("non-finite reward")


@dataclass(frozen=True)
class ReplayConfig:
    capacity: int = 1 << 17
    beta0: float = 0.6          # prioritization exponent
    beta1_start: float = 0.4    # importance-sampling annealing start
    xi: float = 0.01            # priority offset
    phi: float = 0.6            # TD-error vs action-gradient mix
    anneal_epochs: int | None = None  # None: resolved to the run length

    def __post_init__(self):
        if self.beta0 < 0:
            raise ValueError("beta0 must be >= 0")
        if not 0.0 < self.beta1_start <= 1.0:
            raise ValueError("beta1_start must be in (0, 1]")
        if self.xi <= 0:
            raise ValueError("xi must be > 0")
        if not 0.0 <= self.phi <= 1.0:
            raise ValueError("phi must be in [0, 1]")
        if self.capacity < 1:
            raise ValueError("capacity must be >= 1")


class SumTree:
    """Complete binary tree: leaves hold values, internal nodes children sums.

    ``ops`` counts node visits, used by the complexity tests.
    """

    def __init__(self, capacity: int):
        if capacity < 1 or capacity & (capacity - 1):
            raise ValueError(f"capacity must be a power of two, got {capacity}")
        self.capacity = capacity
        self.nodes = np.zeros(2 * capacity)
        self.ops = 0

    @property
    def total(self) -> float:
        return float(self.nodes[1])

    def get(self, leaf: int) -> float:
        return float(self.nodes[self.capacity + leaf])

    def set(self, leaf: int, value: float) -> None:
        i = self.capacity + leaf
        self.nodes[i] = value
        i >>= 1
        while i >= 1:
            self.nodes[i] = self.nodes[2 * i] + self.nodes[2 * i + 1]
            self.ops += 1
            i >>= 1

    def prefix_find(self, u: float) -> int:
        """Largest-index descent: the leaf whose cumulative range contains u."""
        i = 1
        while i < self.capacity:
            self.ops += 1
            left = self.nodes[2 * i]
            if u < left:
                i = 2 * i
            else:
                u -= left
                i = 2 * i + 1
        return i - self.capacity


class MaxTree:
    """Segment tree over leaf maxima (exact running max under overwrites)."""

    def __init__(self, capacity: int):
        self.capacity = capacity
        self.nodes = np.zeros(2 * capacity)

    @property
    def max(self) -> float:
        return float(self.nodes[1])

    def set(self, leaf: int, value: float) -> None:
        i = self.capacity + leaf
        self.nodes[i] = value
        i >>= 1
        while i >= 1:
            self.nodes[i] = max(self.nodes[2 * i], self.nodes[2 * i + 1])
            i >>= 1


def compute_priority(td_error: float, action_grad: np.ndarray,
                     cfg: ReplayConfig) -> float:
    """phi * (|delta| + xi) + (1 - phi) * mean(|action gradient|); always > 0."""
    grad = np.asarray(action_grad, dtype=float)
    if not (np.isfinite(td_error) and np.all(np.isfinite(grad))):
        raise ValueError("non-finite priority inputs")
    return cfg.phi * (abs(td_error) + cfg.xi) + (1.0 - cfg.phi) * float(np.mean(np.abs(grad)))


def anneal_beta1(cfg: ReplayConfig, epoch: int) -> float:
    """Linear ramp from beta1_start at epoch 0 to 1.0 at anneal_epochs, then flat."""
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    span = cfg.anneal_epochs
    if span is None or span <= 0:
        return 1.0
    frac = min(1.0, epoch / span)
    return cfg.beta1_start + (1.0 - cfg.beta1_start) * frac


class PrioritizedBuffer:
    """Ring buffer of transitions with sum-tree proportional sampling."""

    def __init__(self, cfg: ReplayConfig, seed: int = 0):
        cap = 1
        while cap < cfg.capacity:
            cap *= 2
        self.cfg = cfg
        self.capacity = cfg.capacity
        self.tree = SumTree(cap)
        self.max_tree = MaxTree(cap)
        self.raw_priority = np.zeros(cfg.capacity)
        self.storage: list[TransitionSample] = []
        self.cursor = 0
        self.rng = np.random.default_rng(seed)

    def __len__(self) -> int:
        return len(self.storage)

    def insert(self, t: TransitionSample) -> int:
        """Store at the cursor (overwriting the oldest when full) with the
        current max priority (1 on the first insert)."""
        priority = self.max_tree.max if self.storage else 1.0
        idx = self.cursor
        if len(self.storage) < self.capacity:
            self.storage.append(t)
        else:
            self.storage[idx] = t
        self.cursor = (self.cursor + 1) % self.capacity
        self._set_priority(idx, priority)
        return idx

    def _set_priority(self, idx: int, priority: float) -> None:
        self.raw_priority[idx] = priority
        self.tree.set(idx, priority ** self.cfg.beta0)
        self.max_tree.set(idx, priority)

    def update_priority(self, idx: int, priority: float) -> None:
        if not 0 <= idx < len(self.storage):
            raise IndexError(f"index {idx} out of range")
        if not (priority > 0 and np.isfinite(priority)):
            raise ValueError(f"priority must be positive and finite, got {priority}")
        self._set_priority(idx, priority)

    def sample_probability(self, idx: int) -> float:
        return self.tree.get(idx) / self.tree.total

    def sample_batch(self, n: int, beta1: float) -> list[tuple[int, TransitionSample, float]]:
        """Stratified proportional sampling: [0, p_total] is split into n equal
        sub-ranges and one leaf is drawn uniformly from each. Importance
        weights are normalized by the batch max, so max(weights) == 1."""
        size = len(self.storage)
        if n < 1 or size < n:
            raise ValueError(f"need at least {n} stored samples, have {size}")
        total = self.tree.total
        seg = total / n
        idxs = np.empty(n, dtype=int)
        for i in range(n):
            u = self.rng.uniform(seg * i, seg * (i + 1))
            idxs[i] = min(self.tree.prefix_find(u), size - 1)
        probs = np.array([self.tree.get(i) for i in idxs]) / total
        weights = (size * probs) ** (-beta1)
        weights /= weights.max()
        return [(int(i), self.storage[int(i)], float(w))
                for i, w in zip(idxs, weights)]
