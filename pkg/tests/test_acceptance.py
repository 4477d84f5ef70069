"""Acceptance suite: one test per criterion, each printing a PASS line.

Run with `pytest -s tests/test_acceptance.py` to see the per-criterion lines.
The learning-curve and ranking criteria (5, 6) share one experiment matrix on
the NSFNET-style topology (K=20 sessions, demand window [10, 30] Mbps,
100 Mbps links); learning arms train for 4000 epochs, static arms run 1000
stationary epochs, and both are scored over their final 1000 epochs.
"""

import os
from dataclasses import replace
from multiprocessing import Pool

import numpy as np
import pytest
from scipy import stats

from telab import nn
from telab.agent import Agent, AgentConfig, project_to_simplexes
from telab.baselines import num_solve
from telab.harness import (
    ExperimentConfig,
    normalize_rewards,
    run_experiment,
    run_single,
    smooth_rewards,
)
from telab.objective import UtilityConfig, reward
from telab.replay import PrioritizedBuffer, ReplayConfig, TransitionSample
from telab.sim import SimConfig, SplitAction, init_sim, run_epoch
from telab.topology import Link, NetworkGraph, SessionSpec

from test_baselines import (
    oracle_two_session,
    random_two_session_instance,
    shared_link_instance,
)
from test_nn import fd_input_grad, fd_param_grads, max_rel_err, random_net, safe_input

LEARN_EPOCHS = 4000
STATIC_EPOCHS = 1000
EVAL_SPAN = 1000
SEEDS = (0, 1, 2, 3, 4)
WORKERS = max(1, min(2, os.cpu_count() or 1))

EXPERIMENT = ExperimentConfig(
    topology="nsfnet",
    k_sessions=20,
    window_lo=10e6,
    window_hi=30e6,
    seeds=SEEDS,
    epochs=LEARN_EPOCHS,
    eval_span=EVAL_SPAN,
)


def _matrix_job(args):
    arm, seed, epochs = args
    cfg = replace(EXPERIMENT, epochs=epochs, arms=(arm,), seeds=(seed,))
    return (arm, seed), run_single(cfg, 0, seed, arm)


@pytest.fixture(scope="module")
def experiment_matrix():
    jobs = [(arm, seed, LEARN_EPOCHS)
            for arm in ("DRL-TE", "DDPG") for seed in SEEDS]
    jobs += [(arm, seed, STATIC_EPOCHS)
             for arm in ("SP", "LB", "NUM") for seed in SEEDS]
    results = {}
    if WORKERS > 1:
        with Pool(WORKERS) as pool:
            for key, rec in pool.imap_unordered(_matrix_job, jobs):
                results[key] = rec
    else:
        for job in jobs:
            key, rec = _matrix_job(job)
            results[key] = rec
    return results


class TestCriterion1Gradients:
    def test_backprop_matches_central_differences(self):
        rng = np.random.default_rng(20240202)
        worst = 0.0
        for trial in range(100):
            mode = "grouped_softmax" if trial % 3 == 0 else "identity"
            groups = (2, 3) if mode == "grouped_softmax" else None
            p = random_net(rng, mode, groups)
            x = safe_input(p, rng)
            v = rng.normal(size=p.output_dim)
            _, cache = nn.forward(p, x)
            ana = nn.backward_params(p, cache, v)
            fw, fb = fd_param_grads(p, x, v)
            for a, f in zip((*ana.weights, *ana.biases), (*fw, *fb)):
                worst = max(worst, max_rel_err(a, f))
            worst = max(worst, max_rel_err(nn.backward_input(p, cache, v),
                                           fd_input_grad(p, x, v)))
        assert worst <= 1e-5
        print(f"\nPASS criterion 1: backprop vs central differences, "
              f"max rel err {worst:.2e} <= 1e-5 over 100 pairs")


class TestCriterion2SumTree:
    def test_sampling_matches_priority_law(self):
        raw = np.array([0.25, 3.0, 1.0, 0.5, 2.0, 0.125, 4.0, 1.5,
                        0.75, 2.5, 0.375, 1.25, 3.5, 0.625, 1.75, 2.25])
        pvals = {}
        for beta0 in (0.0, 0.6, 1.0):
            buf = PrioritizedBuffer(
                ReplayConfig(capacity=16, beta0=beta0, anneal_epochs=1),
                seed=int(beta0 * 100) + 3)
            for i, p in enumerate(raw):
                buf.insert(TransitionSample(np.zeros(1), np.zeros(1), 0.0,
                                            np.zeros(1)))
                buf.update_priority(i, float(p))
            counts = np.zeros(16)
            draws, batch = 100_000, 8
            for _ in range(draws // batch):
                for idx, _, _ in buf.sample_batch(batch, beta1=1.0):
                    counts[idx] += 1
            expected = raw ** beta0
            expected = expected / expected.sum() * counts.sum()
            pvals[beta0] = stats.chisquare(counts, expected).pvalue
            assert pvals[beta0] > 0.01, f"beta0={beta0}: p={pvals[beta0]}"
        # beta0 = 0 must reduce to uniform sampling
        assert pvals[0.0] > 0.01
        print(f"\nPASS criterion 2: sum-tree sampling matches p^beta0 law, "
              f"chi-square p-values {[f'{b}:{v:.3f}' for b, v in pvals.items()]}")


class TestCriterion3QueueingOracle:
    def test_md1_sojourn_all_loads(self):
        capacity, pkt, prop = 1e8, 8000.0, 1e-3
        mu = capacity / pkt
        errs = {}
        for rho in (0.3, 0.5, 0.8):
            g = NetworkGraph(["s", "t"], [Link("s", "t", capacity, prop, 100_000)])
            sess = [SessionSpec(1, "s", "t", rho * capacity,
                                (g.path_from_nodes(["s", "t"]),))]
            st = init_sim(g, sess, SimConfig(seed=31, epoch_length=0.5))
            act = SplitAction.uniform((1,))
            tot_d, tot_n = 0.0, 0
            while tot_n < 100_000:
                obs = run_epoch(st, act)
                tot_d += obs.delay[0] * obs.delivered[0]
                tot_n += int(obs.delivered[0])
            expected = 1 / mu + rho / (2 * mu * (1 - rho)) + prop
            errs[rho] = abs(tot_d / tot_n - expected) / expected
            assert errs[rho] < 0.05, f"rho={rho}: err={errs[rho]:.3%}"
        print(f"\nPASS criterion 3: M/D/1 sojourn within 5% at rho 0.3/0.5/0.8 "
              f"({', '.join(f'{r}:{e:.2%}' for r, e in errs.items())})")


class TestCriterion4NumSolver:
    def test_shared_link_and_grid_oracle(self):
        g, sess = shared_link_instance()
        sol = num_solve(g, sess)
        for k in (0, 1):
            assert abs(sol.throughput[k] / 1e6 - 50.0) / 50.0 <= 1e-3
        gaps = []
        for seed in (101, 202, 303):
            gi, si = random_two_session_instance(seed)
            soli = num_solve(gi, si)
            oracle = oracle_two_session(gi, si)
            gaps.append(abs(soli.objective - oracle))
            assert gaps[-1] <= 1e-3, f"seed {seed}: gap {gaps[-1]}"
            d = soli.diagnostics
            assert d.max_capacity_violation <= 1e-6
            assert d.max_demand_violation <= 1e-6
            assert d.flow_residual <= 1e-6
        print(f"\nPASS criterion 4: NUM x1=x2=50 within 1e-3; grid-oracle gaps "
              f"{[f'{g:.1e}' for g in gaps]} <= 1e-3; residuals <= 1e-6")


class TestCriterion5LearningCurve:
    def test_normalized_smoothed_reward_rises(self, experiment_matrix):
        hits = []
        for seed in SEEDS:
            rec = experiment_matrix[("DRL-TE", seed)]
            curve = normalize_rewards(smooth_rewards(rec.rewards))
            peak = float(curve[:3000].max())
            hits.append(peak >= 0.8)
            print(f"  criterion 5, seed {seed}: max normalized smoothed "
                  f"reward within 3000 epochs = {peak:.3f}")
        assert sum(hits) >= 3, f"only {sum(hits)}/5 seeds reached 0.8"
        print(f"PASS criterion 5: reward reaches >= 0.8 within 3000 epochs in "
              f"{sum(hits)}/5 seeds (need >= 3)")


class TestCriterion6Ranking:
    def test_drlte_wins_utility_and_beats_num_delay(self, experiment_matrix):
        util_wins, delay_wins = 0, 0
        for seed in SEEDS:
            summaries = {arm: experiment_matrix[(arm, seed)].summary(EVAL_SPAN)
                         for arm in ("DRL-TE", "DDPG", "SP", "LB", "NUM")}
            u = {arm: s["mean_utility"] for arm, s in summaries.items()}
            z = {arm: s["mean_delay_ms"] for arm, s in summaries.items()}
            won_u = all(u["DRL-TE"] > u[a] for a in ("SP", "LB", "NUM", "DDPG"))
            won_z = z["DRL-TE"] < z["NUM"]
            util_wins += won_u
            delay_wins += won_z
            print(f"  criterion 6, seed {seed}: utility "
                  + " ".join(f"{a}={u[a]:.2f}" for a in u)
                  + f" | delay DRL-TE={z['DRL-TE']:.3f}ms NUM={z['NUM']:.3f}ms"
                  + f" -> util_win={won_u} delay_win={won_z}")
        assert util_wins >= 4, f"utility wins {util_wins}/5"
        assert delay_wins >= 4, f"delay wins {delay_wins}/5"
        print(f"PASS criterion 6: DRL-TE utility wins {util_wins}/5, "
              f"delay below NUM {delay_wins}/5 (need >= 4)")


class TestCriterion7InvariantFuzz:
    def test_actions_simplex_conservation_and_target_identity(self):
        rng = np.random.default_rng(7)
        # 1e4 random states and epsilon values never break the simplex
        ag = Agent.build(8, (3, 2, 3), AgentConfig(
            noise_amplitude=0.7, replay=ReplayConfig(capacity=256,
                                                     anneal_epochs=100)), seed=1)
        ag.set_base_action(project_to_simplexes(rng.random(8), (3, 2, 3)))
        for i in range(10_000):
            ag.t = int(rng.integers(0, 10_000))
            act = ag.act_explore(rng.random(8))
            flat = act.flat()
            start = 0
            for gsize in (3, 2, 3):
                block = flat[start:start + gsize]
                assert np.all(block >= -1e-9)
                assert abs(block.sum() - 1.0) <= 1e-9
                start += gsize
        ag.t = 0

        # conservation holds on every fuzzed simulator epoch
        links = [Link(a, b, 1e7, 1e-4, 25) for a, b in
                 [("s", "a"), ("a", "t"), ("s", "b"), ("b", "t"), ("a", "b"),
                  ("b", "a"), ("t", "s")]]
        g = NetworkGraph(["s", "a", "b", "t"], links)
        sessions = [
            SessionSpec(1, "s", "t", 8e6, (g.path_from_nodes(["s", "a", "t"]),
                                           g.path_from_nodes(["s", "b", "t"]))),
            SessionSpec(2, "a", "t", 9e6, (g.path_from_nodes(["a", "t"]),
                                           g.path_from_nodes(["a", "b", "t"]))),
        ]
        st = init_sim(g, sessions, SimConfig(seed=5, epoch_length=0.1))
        for _ in range(200):
            w = [rng.dirichlet(np.ones(2)), rng.dirichlet(np.ones(2))]
            run_epoch(st, SplitAction(tuple(w)))
            assert st.packets_generated == (st.packets_delivered +
                                            st.packets_dropped +
                                            st.packets_in_flight)

        # target soft-update identity after every train step
        ag2 = Agent.build(4, (2, 2), AgentConfig(
            batch_size=8, tau=0.01,
            replay=ReplayConfig(capacity=128, anneal_epochs=100)), seed=2)
        for step in range(150):
            prior = ([w.copy() for w in ag2.target_actor.weights],
                     [w.copy() for w in ag2.target_critic.weights])
            tr = TransitionSample(rng.random(4),
                                  project_to_simplexes(rng.random(4), (2, 2)),
                                  float(rng.normal()), rng.random(4))
            d = ag2.train_step(tr)
            if not d.updated:
                continue
            for tw, pw, ow in zip(ag2.target_actor.weights, prior[0],
                                  ag2.actor.weights):
                assert np.abs(tw - (0.01 * ow + 0.99 * pw)).max() <= 1e-12
            for tw, pw, ow in zip(ag2.target_critic.weights, prior[1],
                                  ag2.critic.weights):
                assert np.abs(tw - (0.01 * ow + 0.99 * pw)).max() <= 1e-12
        print("\nPASS criterion 7: 1e4-action simplex fuzz, per-epoch packet "
              "conservation, and 1e-12 target soft-update identity all hold")


class TestCriterion8Determinism:
    def test_csv_bytes_reproducible(self, tmp_path):
        cfg = ExperimentConfig(
            topology="nsfnet", k_sessions=6, epochs=30, seeds=(3,),
            arms=("LB", "DRL-TE"), eval_span=10,
            agent=AgentConfig(batch_size=8,
                              replay=ReplayConfig(capacity=64,
                                                  anneal_epochs=30)))
        out_a, out_b = tmp_path / "a", tmp_path / "b"
        run_experiment(replace(cfg, out_dir=str(out_a)))
        run_experiment(replace(cfg, out_dir=str(out_b)))
        names = sorted(p.name for p in out_a.iterdir())
        assert names == sorted(p.name for p in out_b.iterdir())
        for name in names:
            assert (out_a / name).read_bytes() == (out_b / name).read_bytes(), name
        print(f"\nPASS criterion 8: byte-identical CSVs across repeated runs "
              f"({', '.join(names)})")
