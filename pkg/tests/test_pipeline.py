import numpy as np
import pytest

from dacat.core import DimensionError, EmptyInputError, LSTMState, ModelConfig, Readout, StreamState
from dacat.data import SyntheticConfig, gen_dataset, gen_stream
from dacat.neural import ops
from dacat.pipeline import (DualStreamModel, init_cache_params, init_dacat_params, run_inference,
                            step_online, train_cache_encoder, train_dacat)
from dacat.pipeline.model import check_params

from gradcheck import numeric_grad, rel_error

SMALL = ModelConfig(d=4, d_raw=5, K=3, hidden=3, seed=0)

CONFIGS = [
    SMALL,
    SMALL.with_(interaction="add"),
    SMALL.with_(interaction="concat"),
    SMALL.with_(fusion_mode="before"),
    SMALL.with_(fusion_mode="before", interaction="concat"),
    SMALL.with_(branches="fwb"),
    SMALL.with_(branches="acb"),
    SMALL.with_(readout=Readout("fixed", 2)),
    SMALL.with_(readout=Readout("all")),
]


def _params(config, seed=0):
    return init_dacat_params(config, init_cache_params(config, seed), seed)


def _video(config, T=30, seed=0):
    return np.random.default_rng(seed).normal(size=(T, config.d_raw))


class TestInit:
    @pytest.mark.parametrize("config", CONFIGS, ids=str)
    def test_params_match_config(self, config):
        p = _params(config)
        check_params(config, p)
        np.testing.assert_array_equal(p["fwb.enc.W"], p["cache.enc.W"])
        assert p["fwb.enc.W"] is not p["cache.enc.W"]

    def test_branch_specific_params(self):
        assert "acb.lstm.W" not in _params(SMALL.with_(branches="fwb"))
        assert "ca.Wq" not in _params(SMALL.with_(interaction="add"))
        assert "acb.lstm.W" not in _params(SMALL.with_(fusion_mode="before"))

    def test_mismatched_params_rejected(self):
        p = _params(SMALL)
        with pytest.raises(DimensionError):
            DualStreamModel(p, SMALL.with_(d=5))
        del p["ca.Wo"]
        with pytest.raises(KeyError):
            DualStreamModel(p, SMALL)


class TestOnlineStep:
    def test_wrong_observation_shape(self):
        with pytest.raises(DimensionError):
            step_online(np.zeros(2), StreamState.fresh(SMALL), _params(SMALL), SMALL)

    def test_empty_video(self):
        with pytest.raises(EmptyInputError):
            run_inference(np.zeros((0, SMALL.d_raw)), _params(SMALL), SMALL)

    def test_state_advances(self):
        p = _params(SMALL)
        s = StreamState.fresh(SMALL)
        for i, x in enumerate(_video(SMALL, 5), 1):
            pred, s = step_online(x, s, p, SMALL)
            assert pred.t == i and len(s.cache) == i
            assert 1 <= pred.clip_start <= i

    def test_first_frame_identical_across_readouts(self):
        x = _video(SMALL, 1)
        base = _params(SMALL)
        logits = []
        for r in (Readout("adaptive"), Readout("fixed", 1), Readout("fixed", 10), Readout("all")):
            cfg = SMALL.with_(readout=r)
            pred, _ = step_online(x[0], StreamState.fresh(cfg), base, cfg)
            logits.append(pred.fused_logits)
        for lg in logits[1:]:
            np.testing.assert_array_equal(lg, logits[0])

    def test_fixed_matches_all_while_short(self):
        X = _video(SMALL, 8)
        p = _params(SMALL)
        a = run_inference(X, p, SMALL.with_(readout=Readout("fixed", 10)))
        b = run_inference(X, p, SMALL.with_(readout=Readout("all")))
        np.testing.assert_array_equal(a.timeline.labels, b.timeline.labels)

    def test_fusion_after_adds_branch_logits(self):
        res = run_inference(_video(SMALL, 6), _params(SMALL), SMALL)
        for pr in res.predictions:
            np.testing.assert_allclose(pr.fused_logits, pr.fwb_logits + pr.acb_logits, rtol=1e-15)

    def test_fusion_before_reports_fused_for_both(self):
        cfg = SMALL.with_(fusion_mode="before")
        res = run_inference(_video(cfg, 6), _params(cfg), cfg)
        for pr in res.predictions:
            np.testing.assert_array_equal(pr.fwb_logits, pr.fused_logits)
            np.testing.assert_array_equal(pr.acb_logits, pr.fused_logits)

    def test_capacity_limits_cache_and_reports_absolute_start(self):
        cfg = SMALL.with_(capacity=4, readout=Readout("all"))
        res = run_inference(_video(cfg, 12), _params(cfg), cfg)
        assert len(res.state.cache) == 4
        assert res.predictions[-1].clip_start == 9

    def test_float32_close_to_float64(self):
        X, p = _video(SMALL, 40), _params(SMALL)
        a = run_inference(X, p, SMALL)
        b = run_inference(X, p, SMALL, dtype=np.float32)
        assert b.predictions[-1].fused_logits.dtype == np.float32
        f64 = np.stack([q.fused_logits for q in a.predictions])
        f32 = np.stack([q.fused_logits for q in b.predictions])
        np.testing.assert_allclose(f32, f64, rtol=1e-4, atol=1e-4)


class TestDeterminismAndCausality:
    @pytest.mark.parametrize("config", CONFIGS[:4], ids=str)
    def test_chunked_equals_single_run(self, config):
        X, p = _video(config, 50, 3), _params(config)
        full = run_inference(X, p, config)
        state, logits = None, []
        for s, e in ((0, 7), (7, 8), (8, 31), (31, 50)):
            r = run_inference(X[s:e], p, config, state=state)
            state = r.state
            logits += [q.fused_logits for q in r.predictions]
        np.testing.assert_array_equal(np.stack(logits),
                                      np.stack([q.fused_logits for q in full.predictions]))

    def test_prefix_invariance(self):
        X, p = _video(SMALL, 40, 4), _params(SMALL)
        full = run_inference(X, p, SMALL).timeline.labels
        for T in (1, 13, 39):
            np.testing.assert_array_equal(run_inference(X[:T], p, SMALL).timeline.labels,
                                          full[:T])

    def test_future_frames_do_not_matter(self):
        X, p = _video(SMALL, 30, 5), _params(SMALL)
        Y = X.copy()
        Y[20:] = 100.0
        a = run_inference(X, p, SMALL).predictions
        b = run_inference(Y, p, SMALL).predictions
        for i in range(20):
            np.testing.assert_array_equal(a[i].fused_logits, b[i].fused_logits)

    def test_training_is_deterministic(self):
        data = gen_dataset(SyntheticConfig(K=3, d_raw=5, n_videos=2, video_len=40, seed=1))
        c1 = train_cache_encoder(data, SMALL, epochs=2, segment_len=16, lr=1e-2)
        c2 = train_cache_encoder(data, SMALL, epochs=2, segment_len=16, lr=1e-2)
        p1 = train_dacat(data, c1, SMALL, epochs=2, segment_len=8, lr=1e-2)
        p2 = train_dacat(data, c2, SMALL, epochs=2, segment_len=8, lr=1e-2)
        for k in p1:
            np.testing.assert_array_equal(p1[k], p2[k])


def _segment_loss_and_grads(model, X, y, fwb, acb):
    C = model.cache_features(X)
    n = len(y)
    tapes, dlog, loss = [], np.zeros((n, model.config.K)), 0.0
    for t in range(n):
        out = model.frame(X[t], C[:t + 1], fwb, acb, record=True)
        fwb, acb = out.fwb_state, out.acb_state
        l, probs = ops.cross_entropy(out.fused, int(y[t]))
        loss += l / n
        dlog[t] = ops.cross_entropy_backward(probs, int(y[t])) / n
        tapes.append(out.tape)
    return loss, model.backward(tapes, dlog)


class TestFullModelGradient:
    @pytest.mark.parametrize("config", CONFIGS, ids=str)
    def test_backward_matches_finite_differences(self, config):
        rng = np.random.default_rng(7)
        p = _params(config, seed=3)
        for k in p:
            p[k] = p[k] + 0.3 * rng.normal(size=p[k].shape)
        X = rng.normal(size=(6, config.d_raw))
        y = rng.integers(0, config.K, 6)
        h0 = LSTMState(rng.normal(size=config.hidden) * 0.5, rng.normal(size=config.hidden) * 0.5)
        _, grads = _segment_loss_and_grads(DualStreamModel(p, config), X, y, h0, h0.copy())
        assert not any(k.startswith("cache.") for k in grads)

        def loss():
            return _segment_loss_and_grads(DualStreamModel(p, config), X, y, h0, h0.copy())[0]

        for name, g in grads.items():
            assert rel_error(g, numeric_grad(loss, p[name])) <= 1e-4, name


class TestTraining:
    def test_stage2_freezes_cache_and_leaves_input_untouched(self):
        data = gen_dataset(SyntheticConfig(K=3, d_raw=5, n_videos=2, video_len=40, seed=2))
        cache = init_cache_params(SMALL, 5)
        before = {k: v.copy() for k, v in cache.items()}
        p = train_dacat(data, cache, SMALL, epochs=2, segment_len=8, lr=1e-2)
        for k in before:
            np.testing.assert_array_equal(cache[k], before[k])
        np.testing.assert_array_equal(p["cache.enc.W"], before["cache.enc.W"])
        assert not np.array_equal(p["fwb.enc.W"], before["cache.enc.W"])

    def test_rejects_bad_labels(self):
        X, y = gen_stream(SyntheticConfig(K=3, d_raw=5, video_len=20))
        bad = [(X, np.full(20, 3))]
        with pytest.raises(ValueError):
            train_cache_encoder(bad, SMALL, epochs=1)

    def test_loss_decreases(self):
        from dacat.pipeline import TrainHistory

        data = gen_dataset(SyntheticConfig(K=3, d_raw=5, n_videos=3, video_len=60, seed=3))
        h = TrainHistory()
        train_cache_encoder(data, SMALL, epochs=15, segment_len=32, lr=1e-2, history=h)
        assert h.epoch_loss[-1] < 0.7 * h.epoch_loss[0]

    def test_validation_selects_best_epoch(self):
        from dacat.pipeline import TrainHistory

        data = gen_dataset(SyntheticConfig(K=3, d_raw=5, n_videos=2, video_len=40, seed=4))
        cache = train_cache_encoder(data, SMALL, epochs=3, segment_len=20, lr=1e-2)
        h = TrainHistory()
        train_dacat(data, cache, SMALL, epochs=3, segment_len=10, lr=1e-2, val_data=data, history=h)
        assert len(h.val_accuracy) == 3
        assert h.val_accuracy[h.best_epoch - 1] == max(h.val_accuracy)

    @pytest.mark.slow
    def test_converges_on_easy_data(self):
        cfg = ModelConfig(d=8, d_raw=8, K=4, hidden=16, seed=0)
        data = gen_dataset(SyntheticConfig(K=4, d_raw=8, n_videos=4, video_len=120,
                                           noise_scale=0.5, seed=0))
        cache = train_cache_encoder(data, cfg, epochs=15, segment_len=256, lr=1e-2)
        p = train_dacat(data, cache, cfg, epochs=10, segment_len=64, lr=5e-3)
        hits = sum(int(np.sum(run_inference(X, p, cfg).timeline.labels == y.labels))
                   for X, y in data)
        assert hits / sum(len(y) for _, y in data) >= 0.95
