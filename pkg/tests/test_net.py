import numpy as np
import pytest

from hashconv import net, ops
from hashconv.batch import batch_levels, psh_hierarchy

from _util import fd_rel_errors, random_set, sample_coords, smooth_net_case


def toy_batch(count=4, resolution=8, seed=0):
    models, labels = net.toy_dataset(count, seed)
    return [net.encode(m, resolution) for m in models], labels


class TestArchitecture:
    def test_channel_formula(self):
        assert net.channels_at(5) == 16
        assert net.channels_at(2) == 128
        assert net.channels_at(4) == 32
        assert net.channels_at(9) == 2 and net.channels_at(12) == 2

    def test_parameter_shapes(self):
        m = net.HashNet(4, 3)
        assert m.params["conv4.W"].shape == (32, 3 * 27)
        assert m.params["conv3.W"].shape == (64, 32 * 27)
        assert m.params["conv2.W"].shape == (128, 64 * 27)
        assert m.params["fc1.W"].shape == (128, 128 * 8)
        assert m.params["fc2.W"].shape == (3, 128)

    def test_xavier_bounds(self):
        m = net.HashNet(4, 3, seed=1)
        W = m.params["conv3.W"]
        assert np.abs(W).max() <= np.sqrt(6 / (32 * 27 + 64 * 27))


class TestForward:
    def test_zero_fc_uniform(self):
        enc, _ = toy_batch()
        m = net.HashNet(3, 4)
        for k in ("fc1.W", "fc1.b", "fc2.W", "fc2.b"):
            m.params[k][...] = 0
        np.testing.assert_allclose(m.predict(net.make_batch(enc)), 0.25, atol=1e-7)

    def test_duplicate_rows(self):
        enc, _ = toy_batch(2)
        m = net.HashNet(3, 3)
        probs = m.predict(net.make_batch([enc[0], enc[1], enc[0]]))
        np.testing.assert_array_equal(probs[0], probs[2])

    def test_rows_sum_to_one(self):
        enc, _ = toy_batch(6)
        probs = net.HashNet(3, 3, seed=2).predict(net.make_batch(enc))
        np.testing.assert_allclose(probs.sum(axis=1), 1, atol=1e-6)

    def test_missing_level(self):
        enc, _ = toy_batch(2)
        batch = net.make_batch(enc)
        with pytest.raises(ValueError, match="lacks"):
            net.HashNet(3, 3).predict(batch[:-1])

    def test_single_level_matches_hand_pipeline(self):
        rng = np.random.default_rng(3)
        sets = [random_set(rng, 4, n, unit=True) for n in (20, 9)]
        batch = batch_levels([psh_hierarchy(s, 2) for s in sets])
        m = net.HashNet(2, 3, coarsest_level=2, hidden=16, seed=4, dtype=np.float64)
        got = m.predict(batch)

        fine, top = batch
        p, st = m.params, m.stats
        X = fine.D.astype(np.float64)
        Y, _ = ops.conv_forward(fine, fine, p["conv2.W"], ops.ConvSpec(3, 1, 0, 3, 128), X)
        Z, _ = ops.batch_norm_forward(Y, st["bn2.mean"].copy(), st["bn2.var"].copy(), training=False)
        R = ops.relu_forward(ops.scale_forward(Z, p["bn2.gamma"], p["bn2.beta"]))
        P, _ = ops.max_pool(fine, top, ops.ConvSpec(2, 2, 0, 128, 128), R)
        flat = np.zeros((2, 128, 8))
        pos, model = top.column_positions()
        for j in range(top.columns):
            x, y, z = pos[j]
            flat[model[j] - 1, :, x + 2 * y + 4 * z] = P[:, j]
        h = flat.reshape(2, -1) @ p["fc1.W"].T + p["fc1.b"]
        logits = h @ p["fc2.W"].T + p["fc2.b"]
        expect = np.exp(logits - logits.max(axis=1, keepdims=True))
        expect /= expect.sum(axis=1, keepdims=True)
        np.testing.assert_allclose(got, expect, rtol=1e-10)

    def test_dropout_seeded(self):
        enc, labels = toy_batch(4)
        batch = net.make_batch(enc)
        m = net.HashNet(3, 3)
        a = m.forward(batch, True, np.random.default_rng(5))[0]
        b = m.forward(batch, True, np.random.default_rng(5))[0]
        np.testing.assert_array_equal(a, b)


class TestTraining:
    def test_zero_lr_keeps_params(self):
        enc, labels = toy_batch(4)
        m = net.HashNet(3, 3)
        before = {k: v.copy() for k, v in m.params.items()}
        loss = m.train_step(net.make_batch(enc), labels, net.TrainConfig(lr=0.0))
        assert np.isfinite(loss)
        for k, v in before.items():
            np.testing.assert_array_equal(m.params[k], v)

    def test_bad_label(self):
        enc, _ = toy_batch(2)
        with pytest.raises(ValueError):
            net.HashNet(3, 3).train_step(net.make_batch(enc), [0, 3], net.TrainConfig())
        with pytest.raises(ValueError):
            net.HashNet(3, 3).train_step(net.make_batch(enc), [0], net.TrainConfig())

    def test_overfit_one_sample(self):
        models, labels = net.toy_dataset(2, seed=7)
        batch = net.make_batch([net.encode(models[0], 8)])
        m = net.HashNet(3, 2, seed=7)
        m.dropout = 0.0
        cfg = net.TrainConfig(lr=0.01, dropout=0.0)
        for _ in range(200):
            loss = m.train_step(batch, [labels[0] % 2], cfg)
        assert loss < 0.1

    def test_first_layer_gradient(self):
        m, batch, labels = smooth_net_case(8)
        _, grads = m.loss_and_grads(batch, labels)
        f = lambda: m.loss_and_grads(batch, labels)[0]
        W = m.params["conv3.W"]
        errs = fd_rel_errors(f, W, grads["conv3.W"], sample_coords(np.random.default_rng(8), W.shape, 40))
        assert np.mean(errs <= 1e-4) >= 0.99

    def test_gradient_on_toy_shapes_small_step(self):
        # on dense toy shapes h=1e-3 crosses kinks; a small step checks the same code
        enc, labels = toy_batch(3, seed=8)
        batch = net.make_batch(enc)
        m = net.HashNet(3, 3, seed=8, dropout=0.0, dtype=np.float64)
        _, grads = m.loss_and_grads(batch, labels)
        f = lambda: m.loss_and_grads(batch, labels)[0]
        rng = np.random.default_rng(8)
        for name in ("conv3.W", "bn3.gamma", "conv2.W", "fc1.W"):
            W = m.params[name]
            errs = fd_rel_errors(f, W, grads[name], sample_coords(rng, W.shape, 10), h=1e-6)
            assert np.all(errs <= 1e-4), name

    def test_loss_monotone_small_lr(self):
        enc, labels = toy_batch(12, seed=9)
        batch = net.make_batch(enc)
        m = net.HashNet(3, 3, seed=9, dropout=0.0)
        cfg = net.TrainConfig(lr=1e-3, weight_decay=0.0, dropout=0.0)
        losses = [m.train_step(batch, labels, cfg) for _ in range(40)]
        steps = np.diff(losses)
        assert np.mean(steps <= 1e-6) >= 0.95

    def test_fit_deterministic(self):
        enc, labels = toy_batch(10, seed=10)
        cfg = net.TrainConfig(lr=0.01, epochs=2, batch_size=4, seed=3)
        a = net.fit(net.HashNet(3, 3, seed=3), enc, labels, cfg)
        b = net.fit(net.HashNet(3, 3, seed=3), enc, labels, cfg)
        assert a == b


class TestEvaluate:
    def test_perfect_scores(self):
        labels = np.array([0, 2, 1])
        assert net.accuracy(np.eye(3)[labels], labels) == 1.0

    def test_vote_identical_poses(self):
        scores = np.random.default_rng(0).random((5, 3))
        np.testing.assert_allclose(net.vote([scores] * 12), scores, rtol=1e-15)
        labels = np.array([0, 1, 2, 0, 1])
        assert net.accuracy(net.vote([scores] * 12), labels) == net.accuracy(scores, labels)

    def test_single_pose_voting_is_plain(self):
        models, labels = net.toy_dataset(6, seed=11)
        m = net.HashNet(3, 3, seed=11)
        assert net.evaluate(m, models, labels, 8, voting=1) == net.evaluate(m, models, labels, 8)

    @pytest.mark.slow
    def test_voting_does_not_hurt(self):
        drops = []
        for seed in range(5):
            train, y = net.toy_dataset(60, seed=100 + seed)
            test, ty = net.toy_dataset(30, seed=200 + seed)
            m = net.HashNet(3, 3, seed=seed)
            net.fit(m, [net.encode(t, 8) for t in train], y,
                    net.TrainConfig(lr=0.01, epochs=6, batch_size=8, seed=seed))
            drops.append(net.evaluate(m, test, ty, 8) - net.evaluate(m, test, ty, 8, voting=12))
        # one model in thirty flipping is noise; a systematic loss is not
        assert np.mean(drops) <= 2 / 30


class TestConfig:
    def test_defaults(self):
        cfg = net.TrainConfig()
        assert (cfg.momentum, cfg.weight_decay, cfg.dropout, cfg.lr) == (0.9, 0.0005, 0.5, 0.1)
        assert [cfg.lr_at(e) for e in (0, 9, 10, 20)] == pytest.approx([0.1, 0.1, 0.01, 0.001])

    def test_text_round_trip(self):
        cfg = net.TrainConfig(lr=0.01, epochs=5, seed=4)
        assert net.TrainConfig.from_text(cfg.to_text()) == cfg
        parsed = net.TrainConfig.from_text("# comment\nlr = 0.5\n\nbatch_size=8\n")
        assert parsed.lr == 0.5 and parsed.batch_size == 8

    @pytest.mark.parametrize("text", ["lr", "nope=1", "lr=abc", "batch_size=1.5", "dropout=1"])
    def test_parse_errors(self, text):
        with pytest.raises(ValueError):
            net.TrainConfig.from_text(text)

    def test_schedule_monotone(self):
        cfg = net.TrainConfig(lr=0.3, lr_step=3)
        rates = [cfg.lr_at(e) for e in range(20)]
        assert all(a >= b for a, b in zip(rates, rates[1:]))


class TestCheckpoint:
    def test_round_trip(self, tmp_path):
        enc, labels = toy_batch(4)
        m = net.HashNet(3, 3, seed=12)
        m.train_step(net.make_batch(enc), labels, net.TrainConfig(lr=0.01), rng=np.random.default_rng(0))
        m.save(tmp_path / "m.ckpt")
        back = net.HashNet.load(tmp_path / "m.ckpt")
        batch = net.make_batch(enc)
        np.testing.assert_array_equal(back.predict(batch), m.predict(batch))
        for k in m.stats:
            np.testing.assert_array_equal(back.stats[k], m.stats[k])

    def test_corrupt(self, tmp_path):
        raw = net.pack_arrays(net.HashNet(3, 3).state())
        assert raw[:4] == b"HCKP"
        with pytest.raises(ValueError):
            net.unpack_arrays(raw[:-10])
        with pytest.raises(ValueError):
            net.unpack_arrays(b"XXXX" + raw[4:])
