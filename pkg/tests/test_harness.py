import json
import os
import subprocess
import sys

import numpy as np
import pytest

from telab.harness import (
    ARMS,
    ConfigError,
    ExperimentConfig,
    RunRecord,
    build_graph,
    csv_columns,
    export_csv,
    normalize_rewards,
    read_csv_columns,
    run_experiment,
    run_single,
    smooth_rewards,
)
from telab.topology import MBPS


def tiny_config(**kw):
    defaults = dict(topology="nsfnet", k_sessions=5, epochs=6, seeds=(0,),
                    arms=("LB",), eval_span=5)
    defaults.update(kw)
    return ExperimentConfig(**defaults)


class TestConfig:
    def test_roundtrip_json(self):
        cfg = tiny_config(arms=("DRL-TE", "SP"), n_windows=2, seeds=(1, 2))
        text = cfg.to_json()
        back = ExperimentConfig.from_json(text)
        assert back == cfg

    def test_versioned(self):
        cfg = tiny_config()
        doc = json.loads(cfg.to_json())
        assert doc["version"] == 1
        doc["version"] = 99
        with pytest.raises(ConfigError):
            ExperimentConfig.from_json(json.dumps(doc))

    def test_invalid_fields_rejected(self):
        with pytest.raises(ConfigError):
            tiny_config(epochs=0)
        with pytest.raises(ConfigError):
            tiny_config(arms=("bogus",))
        with pytest.raises(ConfigError):
            tiny_config(window_lo=3e7, window_hi=1e7)
        with pytest.raises(ConfigError):
            tiny_config(seeds=())

    def test_window_protocol_matches_centers(self):
        # windows starting at [0, 20] sliding by 5 have centers 10, 15, 20, ...
        cfg = tiny_config(window_lo=0.0, window_hi=20 * MBPS,
                          slide_step=5 * MBPS, n_windows=5)
        centers = [(sum(cfg.window(i)) / 2) / MBPS for i in range(5)]
        assert centers == [10, 15, 20, 25, 30]

    def test_build_graph_variants(self, tmp_path):
        g = build_graph(tiny_config(topology="nsfnet"))
        assert len(g.nodes) == 14
        g2 = build_graph(tiny_config(topology=None, random_topology=(6, 12, 3)))
        assert len(g2.nodes) == 6 and len(g2.links) == 12


class TestRunSingle:
    def test_lb_arm_static_action(self):
        rec = run_single(tiny_config(), 0, 0, "LB")
        assert rec.epochs == 6
        assert np.all(rec.epsilon == 0.0)
        assert np.all(rec.mean_abs_td == 0.0)
        assert np.all(np.isfinite(rec.rewards))

    def test_drlte_single_epoch_warmup_contract(self):
        # one epoch stores exactly one transition; batch_size > 1 means the
        # networks must not change
        from dataclasses import replace
        from telab.agent import AgentConfig
        cfg = tiny_config(epochs=1, arms=("DRL-TE",),
                          agent=AgentConfig(batch_size=8))
        rec = run_single(cfg, 0, 0, "DRL-TE")
        assert rec.epochs == 1
        assert rec.mean_abs_td[0] == 0.0

    def test_deterministic_records(self):
        cfg = tiny_config(arms=("DRL-TE",), epochs=5)
        a = run_single(cfg, 0, 0, "DRL-TE")
        b = run_single(cfg, 0, 0, "DRL-TE")
        assert np.array_equal(a.rewards, b.rewards)
        assert np.array_equal(a.throughput, b.throughput)
        assert np.array_equal(a.delay, b.delay)
        assert np.array_equal(a.mean_abs_td, b.mean_abs_td)

    def test_arms_share_arrival_process(self):
        lb = run_single(tiny_config(), 0, 0, "LB")
        sp = run_single(tiny_config(), 0, 0, "SP")
        assert lb.window == sp.window
        # same sessions and sim seed: total generated load comparable; the
        # first-epoch throughput under identical arrivals differs only via
        # routing, so totals stay within a few percent
        assert lb.throughput[0].sum() == pytest.approx(sp.throughput[0].sum(),
                                                       rel=0.1)


class TestRunExperiment:
    def test_returns_record_per_window_seed_arm(self, tmp_path):
        cfg = tiny_config(arms=("LB", "SP"), seeds=(0, 1), n_windows=2,
                          out_dir=str(tmp_path / "out"))
        results = run_experiment(cfg)
        assert set(results) == {(w, s, a) for w in range(2) for s in (0, 1)
                                for a in ("LB", "SP")}
        files = sorted(os.listdir(tmp_path / "out"))
        assert len(files) == 8
        assert "lb_w20_s0.csv" in files and "sp_w25_s1.csv" in files

    def test_env_overrides(self, tmp_path, monkeypatch):
        out = tmp_path / "envout"
        monkeypatch.setenv("TELAB_OUT_DIR", str(out))
        run_experiment(tiny_config(out_dir=None))
        assert out.exists() and len(list(out.iterdir())) == 1

    def test_parallel_matches_serial(self):
        cfg = tiny_config(arms=("LB",), seeds=(0, 1))
        serial = run_experiment(cfg)
        parallel = run_experiment(tiny_config(arms=("LB",), seeds=(0, 1),
                                              workers=2))
        for key in serial:
            assert np.array_equal(serial[key].rewards, parallel[key].rewards)


class TestNormalize:
    def test_direct_formula(self):
        assert np.allclose(normalize_rewards(np.array([1.0, 3.0, 2.0])),
                           [0.0, 1.0, 0.5])

    def test_constant_series_maps_to_zero(self):
        assert np.array_equal(normalize_rewards(np.full(5, 2.5)), np.zeros(5))

    def test_extremes_hit_bounds(self):
        rng = np.random.default_rng(0)
        r = rng.normal(size=100)
        n = normalize_rewards(r)
        assert n.min() == 0.0 and n.max() == 1.0
        assert n[np.argmin(r)] == 0.0 and n[np.argmax(r)] == 1.0

    def test_idempotent(self):
        rng = np.random.default_rng(1)
        r = rng.normal(size=50)
        once = normalize_rewards(r)
        assert np.allclose(normalize_rewards(once), once, atol=1e-15)


class TestSmooth:
    def test_constant_series_unchanged(self):
        out = smooth_rewards(np.full(100, 3.25))
        assert np.allclose(out, 3.25, atol=1e-9)

    def test_impulse_response_symmetric(self):
        x = np.zeros(201)
        x[100] = 1.0
        out = smooth_rewards(x)
        for k in range(1, 40):
            assert out[100 - k] == pytest.approx(out[100 + k], abs=1e-9)

    def test_high_frequency_attenuated(self):
        x = np.array([1.0, -1.0] * 200)
        out = smooth_rewards(x, cutoff=0.05)
        assert np.abs(out[50:-50]).max() < 0.1 / 10

    def test_preserves_mean_on_stationary_noise(self):
        rng = np.random.default_rng(2)
        x = 1.0 + 0.3 * rng.standard_normal(4000)
        out = smooth_rewards(x)
        assert abs(out.mean() - x.mean()) <= 0.01 * abs(x.mean())

    def test_too_short_rejected(self):
        with pytest.raises(ValueError, match="too short"):
            smooth_rewards(np.ones(5))


class TestCsvExport:
    def make_record(self, t=7, k=3, seed=0):
        rng = np.random.default_rng(seed)
        return RunRecord(
            arm="LB", seed=0, window=(1e7, 3e7),
            rewards=rng.normal(size=t),
            throughput=rng.uniform(1e6, 5e7, size=(t, k)),
            delay=rng.uniform(1e-4, 1e-2, size=(t, k)),
            drops=rng.integers(0, 5, size=(t, k)),
            epsilon=rng.uniform(0, 1, size=t),
            mean_abs_td=rng.uniform(0, 2, size=t))

    def test_row_count_and_header(self, tmp_path):
        rec = self.make_record(t=3)
        path = tmp_path / "r.csv"
        export_csv(rec, path)
        lines = path.read_text().strip().split("\n")
        assert len(lines) == 4
        assert lines[0].split(",") == csv_columns(3)

    def test_roundtrip_exact(self, tmp_path):
        rec = self.make_record(t=9)
        path = tmp_path / "r.csv"
        export_csv(rec, path)
        cols = read_csv_columns(path)
        assert np.array_equal(cols["reward"], rec.rewards)
        for i in range(3):
            assert np.array_equal(cols[f"x_{i + 1}"], rec.throughput[:, i] / MBPS)
            assert np.array_equal(cols[f"z_{i + 1}"], rec.delay[:, i] * 1e3)
        assert np.array_equal(cols["drops"], rec.drops.sum(axis=1))

    def test_per_session_columns_present(self, tmp_path):
        rec = self.make_record(k=5)
        path = tmp_path / "r.csv"
        export_csv(rec, path)
        cols = read_csv_columns(path)
        for i in range(1, 6):
            assert f"x_{i}" in cols and f"z_{i}" in cols


class TestCli:
    def run_cli(self, *args):
        return subprocess.run([sys.executable, "-m", "telab.cli", *args],
                              capture_output=True, text=True)

    def test_gen_topology(self, tmp_path):
        out = tmp_path / "g.json"
        res = self.run_cli("gen-topology", "--nodes", "6", "--links", "12",
                           "--seed", "3", "--out", str(out))
        assert res.returncode == 0, res.stderr
        doc = json.loads(out.read_text())
        assert len(doc["nodes"]) == 6 and len(doc["links"]) == 12

    def test_solve_num(self):
        res = self.run_cli("solve-num", "--topology", "nsfnet",
                           "--k", "4", "--window", "5", "15", "--seed", "1")
        assert res.returncode == 0, res.stderr
        doc = json.loads(res.stdout)
        assert doc["certificate"]["converged"]
        assert len(doc["throughput_mbps"]) == 4

    def test_run_from_config(self, tmp_path):
        cfg = tiny_config(out_dir=str(tmp_path / "out"))
        cfg_path = tmp_path / "cfg.json"
        cfg_path.write_text(cfg.to_json())
        res = self.run_cli("run", "-c", str(cfg_path))
        assert res.returncode == 0, res.stderr
        summaries = json.loads(res.stdout)
        assert len(summaries) == 1
        assert summaries[0]["arm"] == "LB"
        assert (tmp_path / "out").exists()
