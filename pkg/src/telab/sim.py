"""Discrete-event packet-level simulator.

Per-session Poisson arrivals at the source, per-packet path selection by
split ratio, per-link FIFO queues with drop-tail buffers, deterministic
transmission time (fixed packet size), then propagation delay. One call to
``run_epoch`` advances the (persistent) system by one decision epoch and
reports per-session throughput, mean delay and drops for that epoch.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _simcore as core
from .topology import NetworkGraph, SessionSpec


class SimError(ValueError):
    """Invalid simulator input (bad action, bad path reference, bad config)."""


SIMPLEX_TOL = 1e-9


@dataclass(frozen=True)
class SplitAction:
    """Per-session split ratios over candidate paths (one array per session)."""

    ratios: tuple[np.ndarray, ...]

    @staticmethod
    def from_flat(flat: np.ndarray, group_sizes: tuple[int, ...]) -> "SplitAction":
        flat = np.asarray(flat, dtype=float)
        if flat.shape != (sum(group_sizes),):
            raise SimError(f"flat action length {flat.shape} != {sum(group_sizes)}")
        out, start = [], 0
        for g in group_sizes:
            out.append(flat[start:start + g].copy())
            start += g
        return SplitAction(tuple(out))

    @staticmethod
    def uniform(group_sizes: tuple[int, ...]) -> "SplitAction":
        return SplitAction(tuple(np.full(g, 1.0 / g) for g in group_sizes))

    def flat(self) -> np.ndarray:
        return np.concatenate(self.ratios)

    def validate(self, group_sizes: tuple[int, ...]) -> None:
        if len(self.ratios) != len(group_sizes):
            raise SimError(f"action has {len(self.ratios)} sessions, "
                           f"expected {len(group_sizes)}")
        for k, (r, g) in enumerate(zip(self.ratios, group_sizes)):
            if r.shape != (g,):
                raise SimError(f"session {k + 1}: {r.shape[0]} ratios for {g} paths")
            if np.any(r < -SIMPLEX_TOL) or abs(float(r.sum()) - 1.0) > SIMPLEX_TOL:
                raise SimError(f"session {k + 1}: ratios {r} violate the simplex")


@dataclass(frozen=True)
class EpochObservation:
    throughput: np.ndarray   # bits/s per session (floor when nothing delivered)
    delay: np.ndarray        # s per session, mean sojourn of this epoch's deliveries
    drops: np.ndarray        # packets dropped per session this epoch
    delivered: np.ndarray    # packets delivered per session this epoch
    epoch: int


@dataclass(frozen=True)
class SimConfig:
    seed: int
    epoch_length: float = 0.5          # s
    packet_size: float = 8000.0        # bits
    delay_floor: float = 1e-6          # s
    throughput_floor: float = 1e3      # bits/s
    record_deliveries: bool = False
    delivery_log_capacity: int = 1 << 16

    def __post_init__(self):
        for name in ("epoch_length", "packet_size", "delay_floor", "throughput_floor"):
            if getattr(self, name) <= 0:
                raise SimError(f"{name} must be strictly positive")


@dataclass(frozen=True)
class NormConfig:
    """State normalization references; entries are clipped to [0, 1]."""

    throughput_ref: float = 1e8   # bits/s
    delay_ref: float = 0.02       # s

    def __post_init__(self):
        if self.throughput_ref <= 0 or self.delay_ref <= 0:
            raise SimError("normalization references must be positive")


class SimState:
    """Owns all simulator arrays; exclusively single-threaded."""

    def __init__(self, g: NetworkGraph, sessions: list[SessionSpec], cfg: SimConfig):
        self.graph = g
        self.sessions = tuple(sessions)
        self.cfg = cfg
        K = len(sessions)
        E = len(g.links)
        if K < 1:
            raise SimError("need at least one session")
        self.group_sizes = tuple(len(s.paths) for s in sessions)
        pmax = max(self.group_sizes)

        self.rate = np.array([ln.capacity for ln in g.links])
        self.prop = np.array([ln.prop_delay for ln in g.links])
        self.buf = np.array([ln.buffer_limit for ln in g.links], dtype=np.int64)

        flat: list[int] = []
        self.path_off = np.zeros((K, pmax), dtype=np.int64)
        self.path_len = np.zeros((K, pmax), dtype=np.int64)
        self.n_paths = np.array(self.group_sizes, dtype=np.int64)
        self.path_key: dict[int, tuple[int, int]] = {}
        for k, s in enumerate(sessions):
            for j, p in enumerate(s.paths):
                for lid in p.link_ids:
                    if not 0 <= lid < E:
                        raise SimError(f"session {s.id}: invalid link reference {lid}")
                self.path_off[k, j] = len(flat)
                self.path_len[k, j] = len(p.link_ids)
                self.path_key[len(flat)] = (k, j)
                flat.extend(p.link_ids)
        self.path_links = np.array(flat, dtype=np.int64)

        self.lam = np.array([s.demand_mean / cfg.packet_size for s in sessions])

        pool = int(sum(int(ln.buffer_limit) + 2 +
                       math.ceil(ln.prop_delay * ln.capacity / cfg.packet_size)
                       for ln in g.links) + K + 64)
        self.pool_size = pool
        self.pk_sess = np.zeros(pool, dtype=np.int64)
        self.pk_hop = np.zeros(pool, dtype=np.int64)
        self.pk_off = np.zeros(pool, dtype=np.int64)
        self.pk_plen = np.zeros(pool, dtype=np.int64)
        self.pk_created = np.zeros(pool)
        self.free_list = np.arange(pool - 1, -1, -1, dtype=np.int64)

        heap_cap = K + E + pool + 8
        self.ht = np.zeros(heap_cap)
        self.hs = np.zeros(heap_cap, dtype=np.int64)
        self.hk = np.zeros(heap_cap, dtype=np.int64)
        self.ha = np.zeros(heap_cap, dtype=np.int64)

        self.serving = np.full(E, -1, dtype=np.int64)
        qcap = max(1, int(self.buf.max()))
        self.q = np.zeros((E, qcap), dtype=np.int64)
        self.q_head = np.zeros(E, dtype=np.int64)
        self.q_len = np.zeros(E, dtype=np.int64)

        self.st_bits = np.zeros(K)
        self.st_cnt = np.zeros(K, dtype=np.int64)
        self.st_delay = np.zeros(K)
        self.st_drop = np.zeros(K, dtype=np.int64)
        self.st_gen = np.zeros(K, dtype=np.int64)

        log_cap = cfg.delivery_log_capacity if cfg.record_deliveries else 1
        self.lg_created = np.zeros(log_cap)
        self.lg_time = np.zeros(log_cap)
        self.lg_sess = np.zeros(log_cap, dtype=np.int64)
        self.lg_path = np.zeros(log_cap, dtype=np.int64)

        self.ints = np.zeros(core.N_INTS, dtype=np.int64)
        self.ints[core.I_FREE] = pool
        self.flts = np.zeros(core.N_FLTS)
        self.epoch_index = 0

        ss = np.random.SeedSequence(cfg.seed)
        states = ss.generate_state(2 * K, dtype=np.uint64)
        self.arr_states = states[:K].copy()
        self.choice_states = states[K:].copy()

        # seed first arrival per session (none for zero-demand sessions)
        for k in range(K):
            if self.lam[k] > 0:
                u = core._uniform(self.arr_states, k)
                t0 = -math.log1p(-u) / self.lam[k]
                self.ints[core.I_HEAP] = core._heap_push(
                    self.ht, self.hs, self.hk, self.ha,
                    int(self.ints[core.I_HEAP]), t0, int(self.ints[core.I_SEQ]),
                    core.EV_ARRIVAL, k)
                self.ints[core.I_SEQ] += 1

        self._cum_w = np.ones((K, pmax))

    # -- introspection -----------------------------------------------------

    @property
    def time(self) -> float:
        return float(self.flts[core.F_CLOCK])

    @property
    def packets_generated(self) -> int:
        return int(self.ints[core.I_GEN])

    @property
    def packets_delivered(self) -> int:
        return int(self.ints[core.I_DEL])

    @property
    def packets_dropped(self) -> int:
        return int(self.ints[core.I_DROP])

    @property
    def packets_in_flight(self) -> int:
        """Packets allocated from the pool (queued, in service or propagating)."""
        return self.pool_size - int(self.ints[core.I_FREE])

    @property
    def pending_arrivals(self) -> int:
        n = int(self.ints[core.I_HEAP])
        return int(np.sum(self.hk[:n] == core.EV_ARRIVAL))

    def delivery_log(self):
        """(created, delivered, session, (session, path)) for this epoch's
        deliveries, in delivery order. Needs cfg.record_deliveries."""
        if not self.cfg.record_deliveries:
            raise SimError("delivery log not enabled in SimConfig")
        n = int(self.ints[core.I_LOG])
        keys = [self.path_key[int(off)] for off in self.lg_path[:n]]
        return (self.lg_created[:n].copy(), self.lg_time[:n].copy(),
                self.lg_sess[:n].copy(), keys)


def init_sim(g: NetworkGraph, sessions: list[SessionSpec], cfg: SimConfig) -> SimState:
    """Build a fresh simulator: empty queues, first arrival per session seeded."""
    return SimState(g, sessions, cfg)


def run_epoch(state: SimState, action: SplitAction) -> EpochObservation:
    """Advance simulated time by one epoch under the given split action."""
    action.validate(state.group_sizes)
    for k, r in enumerate(action.ratios):
        np.cumsum(np.maximum(r, 0.0), out=state._cum_w[k, :r.shape[0]])

    state.st_bits[:] = 0.0
    state.st_cnt[:] = 0
    state.st_delay[:] = 0.0
    state.st_drop[:] = 0
    state.st_gen[:] = 0
    state.ints[core.I_LOG] = 0

    status = core.run_epoch_kernel(
        state.ints, state.flts, state.ht, state.hs, state.hk, state.ha,
        state.arr_states, state.choice_states,
        state.lam, state.path_off, state.path_len, state.n_paths,
        state._cum_w, state.path_links,
        state.rate, state.prop, state.buf, state.serving,
        state.q, state.q_head, state.q_len,
        state.pk_sess, state.pk_hop, state.pk_off, state.pk_plen,
        state.pk_created, state.free_list,
        state.st_bits, state.st_cnt, state.st_delay, state.st_drop, state.st_gen,
        state.lg_created, state.lg_time, state.lg_sess, state.lg_path,
        1 if state.cfg.record_deliveries else 0,
        state.cfg.packet_size, state.cfg.epoch_length)
    if status == core.STATUS_POOL_FULL:
        raise SimError("packet pool exhausted (internal sizing bug)")
    if status == core.STATUS_LOG_FULL:
        raise SimError("delivery log full; raise delivery_log_capacity")

    cnt = state.st_cnt
    x = np.where(cnt > 0, state.st_bits / state.cfg.epoch_length,
                 state.cfg.throughput_floor)
    with np.errstate(invalid="ignore", divide="ignore"):
        z = np.where(cnt > 0, state.st_delay / np.maximum(cnt, 1),
                     state.cfg.delay_floor)
    z = np.maximum(z, state.cfg.delay_floor)
    state.epoch_index += 1
    return EpochObservation(
        throughput=x, delay=z, drops=state.st_drop.copy(),
        delivered=cnt.copy(), epoch=state.epoch_index)


def observation_to_state(obs: EpochObservation, norm: NormConfig) -> np.ndarray:
    """Length-2K vector [(x_1, z_1), ...] scaled by the references, clipped to [0, 1]."""
    out = np.empty(2 * obs.throughput.shape[0])
    out[0::2] = np.clip(obs.throughput / norm.throughput_ref, 0.0, 1.0)
    out[1::2] = np.clip(obs.delay / norm.delay_ref, 0.0, 1.0)
    return out
