import json
import math
import os

import numpy as np
import pytest

from spikegrad.network import FFEvNN
from spikegrad.neurons import LIF
from spikegrad.training import (
    AdamW,
    TrainConfig,
    bench,
    build_network,
    clip_global_norm,
    evaluate,
    load_checkpoint,
    load_splits,
    run_trial,
    save_checkpoint,
    train,
)


def tiny_cfg(**kw):
    base = dict(
        dataset="yinyang",
        model="qif",
        loss="integral",
        hidden=[8],
        train_size=48,
        val_size=24,
        test_size=24,
        batch_size=24,
        epochs=2,
        lr=0.03,
        workers=1,
        seed=0,
    )
    base.update(kw)
    return TrainConfig(**base)


class TestClip:
    def test_scales_down(self):
        grads = {"a": np.array([2.0, 0.0]), "b": np.array([0.0])}
        out, norm = clip_global_norm(grads, 1.0)
        assert norm == pytest.approx(2.0)
        assert np.allclose(out["a"], [1.0, 0.0])

    def test_below_threshold_unchanged(self):
        grads = {"a": np.array([0.3])}
        out, norm = clip_global_norm(grads, 1.0)
        assert out["a"] is grads["a"]

    def test_postcondition_and_direction(self):
        rng = np.random.default_rng(0)
        grads = {k: rng.normal(size=5) for k in "abc"}
        out, _ = clip_global_norm(grads, 1.0)
        total = math.sqrt(sum(float(np.sum(g * g)) for g in out.values()))
        assert total <= 1.0 + 1e-12
        flat_in = np.concatenate([grads[k] for k in "abc"])
        flat_out = np.concatenate([out[k] for k in "abc"])
        cos = flat_in @ flat_out / (np.linalg.norm(flat_in) * np.linalg.norm(flat_out))
        assert abs(cos - 1.0) < 1e-12


class TestAdamW:
    def test_zero_grad_zero_decay_identity(self):
        opt = AdamW(lr=0.1, weight_decay=0.0)
        p = {"w": np.array([1.0, -2.0])}
        out = opt.step(p, {"w": np.zeros(2)})
        assert np.array_equal(out["w"], p["w"])

    def test_first_step_hand_computed(self):
        # bias-corrected first step: m_hat = g, v_hat = g*g
        # delta = -lr * (g/ (|g| + eps) + wd*p)
        opt = AdamW(lr=0.01, weight_decay=0.0)
        g = np.array([0.3, -2.0])
        p = {"w": np.array([1.0, 1.0])}
        out = opt.step(p, {"w": g})
        expect = p["w"] - 0.01 * (g / (np.abs(g) + 1e-8))
        assert np.allclose(out["w"], expect, atol=1e-9)

    def test_decay_only_shrinks(self):
        opt = AdamW(lr=0.1, weight_decay=0.5)
        p = {"w": np.array([2.0])}
        out = opt.step(p, {"w": np.zeros(1)})
        assert out["w"][0] == pytest.approx(2.0 - 0.1 * 0.5 * 2.0)


class TestCheckpoint:
    def test_roundtrip(self, tmp_path):
        params = {
            "L0.W": np.arange(6.0).reshape(2, 3),
            "L0.Ic": np.array([0.5, -0.25]),
        }
        b = tmp_path / "c.bin"
        m = tmp_path / "c.manifest"
        save_checkpoint(b, m, params)
        back = load_checkpoint(b, m)
        assert set(back) == set(params)
        for k in params:
            assert np.array_equal(back[k], params[k])
        manifest = json.loads(m.read_text())
        assert manifest["dtype"] == "<f8"
        assert manifest["params"]["L0.W"]["shape"] == [2, 3]

    def test_roundtrip_reproduces_accuracy(self, tmp_path):
        cfg = tiny_cfg(epochs=1, out_dir=str(tmp_path / "run"))
        train(cfg)
        net, _ = build_network(cfg)
        params = load_checkpoint(
            tmp_path / "run" / "checkpoint.bin",
            tmp_path / "run" / "checkpoint.manifest",
        )
        _, _, test = load_splits(cfg)
        m1 = evaluate(net, params, cfg, test)
        m2 = evaluate(net, params, cfg, test)
        assert m1["accuracy"] == m2["accuracy"]
        summary = json.loads((tmp_path / "run" / "summary.json").read_text())
        assert m1["accuracy"] == pytest.approx(summary["test_accuracy"])


class TestTrainLoop:
    def test_determinism_byte_identical_metrics(self, tmp_path):
        a = tiny_cfg(out_dir=str(tmp_path / "a"))
        b = tiny_cfg(out_dir=str(tmp_path / "b"))
        train(a)
        train(b)
        ma = (tmp_path / "a" / "metrics.csv").read_bytes()
        mb = (tmp_path / "b" / "metrics.csv").read_bytes()
        assert ma == mb

    def test_zero_epochs_evaluates_initial_network(self, tmp_path):
        cfg = tiny_cfg(epochs=0, out_dir=str(tmp_path / "r"))
        s = train(cfg)
        assert 0.0 <= s["test_accuracy"] <= 1.0
        assert s["best_epoch"] == -1

    def test_metrics_csv_columns(self, tmp_path):
        cfg = tiny_cfg(epochs=1, out_dir=str(tmp_path / "r"))
        train(cfg)
        header = (tmp_path / "r" / "metrics.csv").read_text().splitlines()[0]
        assert header == (
            "epoch,train_loss,val_accuracy,max_firing,dead_neurons,fire_count,mean_ttfs"
        )

    def test_perfect_predictor_reports_full_accuracy(self):
        # orthogonal strong channels: class c's input makes output c fire first
        cfg = tiny_cfg()
        net = FFEvNN(2, [2], [LIF(bias=False)])
        params = {"L0.W": np.array([[30.0, 0.0], [0.0, 30.0]])}
        data = [([(0, 0.0)], 0), ([(1, 0.0)], 1)] * 4
        cfg2 = TrainConfig(dataset="yinyang", model="lif", loss="ttfs", workers=1)
        m = evaluate(net, params, cfg2, data)
        assert m["accuracy"] == 1.0


class TestConfigIO:
    def test_file_roundtrip(self, tmp_path):
        cfg = tiny_cfg(model="lif", amos=True, loss="ttfs")
        p = tmp_path / "c.json"
        cfg.to_file(p)
        back = TrainConfig.from_file(p)
        assert back == cfg

    def test_unknown_key_rejected(self, tmp_path):
        p = tmp_path / "c.json"
        p.write_text('{"dataset": "yinyang", "learning_rate": 1.0}')
        with pytest.raises(ValueError, match="unknown config keys"):
            TrainConfig.from_file(p)

    def test_bad_values_rejected(self):
        with pytest.raises(ValueError):
            TrainConfig(loss="hinge")
        with pytest.raises(ValueError):
            TrainConfig(dataset="cifar")


class TestWorkers:
    def test_two_workers_smoke(self, tmp_path):
        cfg = tiny_cfg(workers=2, epochs=1, out_dir=str(tmp_path / "w2"))
        s = train(cfg)
        assert 0.0 <= s["test_accuracy"] <= 1.0


class TestBench:
    def test_trends(self):
        cfg = tiny_cfg(train_size=16, val_size=4, test_size=4)
        rows = bench(
            cfg, batch_sizes=(4,), hidden_sizes=(6,), step_sizes=(0.1, 0.2), n_batches=2
        )
        by = {(r["h"], r["mode"]): r["samples_per_s"] for r in rows}
        assert by[(0.1, "forward")] >= by[(0.1, "forward+backward")]
        assert by[(0.2, "forward")] >= by[(0.2, "forward+backward")]
        # halving h increases cost (0.2 -> 0.1 must not get faster)
        assert by[(0.2, "forward")] >= by[(0.1, "forward")]
