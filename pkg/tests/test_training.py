import csv
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import hand_adam

from ntc.errors import DivergenceError, NumericError
from ntc.models import ModelConfig, build_model, load_checkpoint, predict
from ntc.synthetic import separable_texts
from ntc.text import Record, build_vocab, make_examples, tokenize
from ntc.training import AdamState, TrainConfig, adam_step, epoch_trace_path, evaluate, predict_all, train

LR, B1, B2, EPS = 0.001, 0.9, 0.999, 1e-8


class TestAdam:
    def test_zero_gradient_noop(self):
        p = {"w": np.array([1.5, -2.0])}
        before = p["w"].copy()
        st_ = adam_step(p, {"w": np.zeros(2)}, AdamState())
        np.testing.assert_array_equal(p["w"], before)
        assert st_.t == 1

    @pytest.mark.parametrize("g", [1e-3, 1.0, 1e3, -1.0])
    def test_first_step(self, g):
        p = {"w": np.zeros(3)}
        adam_step(p, {"w": np.full(3, g)}, AdamState())
        step = np.abs(p["w"])
        assert np.abs(step - LR).max() < 1e-6
        # bias correction gives m_hat = g and sqrt(v_hat) = |g| at t = 1
        assert np.abs(step - LR * abs(g) / (abs(g) + EPS)).max() < 1e-9
        assert (np.sign(p["w"]) == -np.sign(g)).all()

    def test_two_steps_constant(self):
        p = {"w": np.zeros(1)}
        s = AdamState()
        for _ in range(2):
            adam_step(p, {"w": np.ones(1)}, s)
        m2 = (1 - B1) * (B1 + 1)
        v2 = (1 - B2) * (B2 + 1)
        mh, vh = m2 / (1 - B1 ** 2), v2 / (1 - B2 ** 2)
        expected = LR * (1 / (1 + EPS) + mh / (math.sqrt(vh) + EPS))
        assert abs(-p["w"][0] - expected) < 1e-12
        assert abs(p["w"][0] - hand_adam([1.0, 1.0])) < 1e-12

    @settings(max_examples=100)
    @given(st.lists(st.floats(-1e3, 1e3, allow_nan=False), min_size=1, max_size=6), st.floats(-5, 5))
    def test_unrolled(self, gs, theta0):
        p = {"w": np.array([theta0])}
        s = AdamState()
        for g in gs:
            adam_step(p, {"w": np.array([g])}, s)
        assert abs(p["w"][0] - hand_adam(gs, theta0)) < 1e-12
        assert s.t == len(gs) and s.m["w"].shape == (1,)

    def test_non_finite_named(self):
        p = {"a": np.zeros(2), "b": np.zeros(2)}
        with pytest.raises(NumericError, match="'b'"):
            adam_step(p, {"a": np.ones(2), "b": np.array([1.0, np.inf])}, AdamState())
        assert not p["a"].any()


def toy_data(n=16, max_len=12):
    texts = separable_texts(n, seed=0)
    vocab = build_vocab([tokenize(t) for t, _ in texts])
    recs = [Record(str(y), t, "", y) for t, y in texts]
    return vocab, make_examples(recs, vocab, max_len)


def small_model(vocab, arch="bilstm-attn", **kw):
    return build_model(ModelConfig(arch, len(vocab), 2, embed_dim=8, hidden=4, max_len=12, **kw))


class TestTrain:
    def test_trace_length_and_files(self, tmp_path):
        vocab, ex = toy_data(13)
        cfg = TrainConfig(epochs=3, batch_size=4, trace=str(tmp_path / "t.csv"))
        _, trace = train(small_model(vocab), ex, ex[:6], cfg)
        assert len(trace.steps) == 3 * math.ceil(13 / 4)
        keys = [(e, s) for e, s, _ in trace.steps]
        assert keys == sorted(keys) and [s for _, s in keys] == list(range(1, 13))
        rows = list(csv.reader(open(tmp_path / "t.csv")))
        assert rows[0] == ["epoch", "step", "loss"] and len(rows) == 13
        assert [float(r[2]) for r in rows[1:]] == [l for _, _, l in trace.steps]
        erows = list(csv.reader(open(epoch_trace_path(tmp_path / "t.csv"))))
        assert erows[0] == ["epoch", "train_loss", "precision", "recall", "f1"] and len(erows) == 4

    def test_deterministic(self, tmp_path):
        vocab, ex = toy_data()
        outs = []
        for i in range(2):
            cfg = TrainConfig(epochs=2, batch_size=5, seed=7, trace=str(tmp_path / f"t{i}.csv"))
            m, trace = train(small_model(vocab), ex, ex, cfg)
            outs.append((trace.steps, m.params.copy_values()))
        assert outs[0][0] == outs[1][0]
        for k in outs[0][1]:
            np.testing.assert_array_equal(outs[0][1][k], outs[1][1][k])
        assert (tmp_path / "t0.csv").read_bytes() == (tmp_path / "t1.csv").read_bytes()

    def test_best_epoch_restored(self, tmp_path):
        vocab, ex = toy_data(24)
        ckpt = tmp_path / "m.ntc"
        cfg = TrainConfig(epochs=6, batch_size=4, lr=0.02, checkpoint=str(ckpt))
        m, trace = train(small_model(vocab), ex, ex[:10], cfg, vocab, ["0", "1"], {"seed": 0})
        f1s = [e.metrics.f1 for e in trace.epochs]
        assert trace.best_epoch == 1 + f1s.index(max(f1s))
        ck = load_checkpoint(ckpt)
        assert ck.run["best_epoch"] == str(trace.best_epoch)
        assert evaluate(ck.model, ex[:10]).f1 == max(f1s)
        for k, v in m.params.values.items():
            np.testing.assert_array_equal(ck.model.params[k], v)

    def test_divergence(self, tmp_path):
        vocab, ex = toy_data()
        m = small_model(vocab)
        ckpt = tmp_path / "m.ntc"
        real_backward = m.backward
        calls = {"n": 0}

        def flaky(cache, probs, labels):
            calls["n"] += 1
            loss = real_backward(cache, probs, labels)
            return float("nan") if calls["n"] > 4 else loss

        m.backward = flaky
        cfg = TrainConfig(epochs=3, batch_size=4, checkpoint=str(ckpt))
        with pytest.raises(DivergenceError) as info:
            train(m, ex, ex, cfg, vocab, ["0", "1"])
        assert info.value.checkpoint == str(ckpt) and ckpt.exists()

    def test_overfit_two_texts(self):
        vocab = build_vocab([["alpha", "news", "beta", "sport"]])
        ex = make_examples([Record("a", "alpha news", "", 0), Record("b", "beta sport", "", 1)], vocab, 8)
        m = build_model(ModelConfig("bilstm-attn", len(vocab), 2, embed_dim=8, hidden=4, max_len=8, dropout=0.0))
        train(m, ex, None, TrainConfig(epochs=60, batch_size=2, lr=0.02))
        assert predict(m, "alpha news", vocab).label == 0
        assert predict(m, "beta sport", vocab).label == 1

    def test_frozen_embedding_unchanged(self):
        vocab, ex = toy_data()
        m = small_model(vocab, arch="lstm", embed_trainable=False)
        before = m.params["embed.table"].copy()
        train(m, ex, None, TrainConfig(epochs=1, batch_size=8))
        np.testing.assert_array_equal(m.params["embed.table"], before)

    def test_threads_do_not_change_predictions(self, monkeypatch):
        vocab, ex = toy_data(40)
        m = small_model(vocab)
        one = predict_all(m, ex, batch_size=8)
        monkeypatch.setenv("NTC_THREADS", "4")
        np.testing.assert_array_equal(predict_all(m, ex, batch_size=8), one)
