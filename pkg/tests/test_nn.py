import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import gradcheck as gc
from ricemap.errors import BadMagicError, DataError, TruncatedError, VersionMismatchError
from ricemap.nn import ModelSpec, ModelWeights, TrainConfig, build_model, evaluate_records, train
from ricemap.nn import augment as aug
from ricemap.nn.checkpoint import decode_weights, encode_weights, load_weights, save_weights
from ricemap.nn.layers import (Conv2D, DepthwiseSeparableConv, Dropout, MaxPool2x2, ReLU, Upsample2x,
                               cross_entropy, softmax_channels, softmax_cross_entropy)
from ricemap.nn.metrics import f1_score, metrics
from ricemap.nn.optim import Adam
from ricemap.stratify import SampleRecord, one_hot


@pytest.mark.parametrize("name", sorted(gc.CHECKS))
def test_gradients(name):
    rng = np.random.default_rng(hash(name) % 2 ** 32)
    errs = [gc.CHECKS[name](rng) for _ in range(6)]
    assert max(errs) < gc.TOLERANCE, errs


def test_gradcheck_detects_a_wrong_backward():
    class BadReLU(ReLU):
        def backward(self, dy):
            return super().backward(dy) * 1.01

    rng = np.random.default_rng(0)
    assert gc.check_layer(BadReLU(), gc.away_from_zero(rng, (1, 2, 3, 3)), rng) > 1e-3


def test_unet_end_to_end_gradient():
    rng = np.random.default_rng(5)
    m = build_model(ModelSpec("unet", 2, base_filters=2), seed=1).astype(np.float64)
    x = rng.normal(size=(1, 2, 16, 16))
    y = np.eye(5)[rng.integers(0, 5, (1, 16, 16))].transpose(0, 3, 1, 2)

    def loss():
        return softmax_cross_entropy(m.logits(x), y)[0]

    m.zero_grad()
    _, _, d = softmax_cross_entropy(m.logits(x), y)
    dx = m.backward(d)
    grads = {k: v.copy() for k, v in m.gradients().items()}
    params = m.parameters()
    for name in ("enc0.conv0.depthwise", "mid.conv1.bias", "dec2.match.weight", "head.weight"):
        assert gc.rel_error(grads[name], gc.numeric_grad(loss, params[name])) < 1e-4, name
    sub = x[:, :, 4:8, 4:8]
    num = gc.numeric_grad(loss, sub)  # view: perturbs x in place
    assert gc.rel_error(dx[:, :, 4:8, 4:8], num) < 1e-4


class TestLayers:
    def test_conv1x1_matches_einsum(self, rng):
        layer = Conv2D(3, 4, 1, rng)
        x = rng.random((2, 3, 5, 6)).astype(np.float32)
        want = np.einsum("oc,nchw->nohw", layer.params["weight"][:, :, 0, 0], x)
        np.testing.assert_allclose(layer.forward(x), want, rtol=1e-5, atol=1e-6)

    def test_conv3x3_matches_loops(self, rng):
        layer = Conv2D(2, 3, 3, rng)
        layer.params["bias"][:] = [0.1, -0.2, 0.3]
        x = rng.random((1, 2, 4, 5)).astype(np.float32)
        xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
        w = layer.params["weight"]
        want = np.zeros((1, 3, 4, 5))
        for o in range(3):
            for r in range(4):
                for c in range(5):
                    want[0, o, r, c] = (w[o] * xp[0, :, r:r + 3, c:c + 3]).sum() + layer.params["bias"][o]
        np.testing.assert_allclose(layer.forward(x), want, rtol=1e-5, atol=1e-6)

    def test_ds_param_count(self):
        assert sum(p.size for p in DepthwiseSeparableConv(8, 16).params.values()) == 8 * 9 + 8 * 16 + 16

    def test_maxpool_and_upsample(self):
        x = np.arange(16, dtype=np.float32).reshape(1, 1, 4, 4)
        np.testing.assert_array_equal(MaxPool2x2().forward(x)[0, 0], [[5, 7], [13, 15]])
        up = Upsample2x().forward(np.array([[[[1.0, 2.0]]]]))
        np.testing.assert_array_equal(up[0, 0], [[1, 1, 2, 2], [1, 1, 2, 2]])
        with pytest.raises(ValueError):
            MaxPool2x2().forward(np.zeros((1, 1, 3, 4)))

    def test_dropout(self, rng):
        d = Dropout(0.5)
        x = np.ones((1, 1, 100, 100), np.float32)
        assert d.forward(x) is x
        d.rng = rng
        y = d.forward(x, training=True)
        assert set(np.unique(y)) <= {0.0, 2.0}
        assert abs(y.mean() - 1.0) < 0.05

    def test_softmax_and_ce(self):
        logits = np.array([[[[0.0]], [[np.log(3.0)]]]])
        p = softmax_channels(logits)
        np.testing.assert_allclose(p[0, :, 0, 0], [0.25, 0.75])
        assert cross_entropy(p, np.array([[[[0.0]], [[1.0]]]])) == pytest.approx(-np.log(0.75))

    def test_shape_checks(self):
        with pytest.raises(ValueError):
            Conv2D(3, 2).forward(np.zeros((1, 2, 4, 4), np.float32))
        with pytest.raises(ValueError):
            Conv2D(3, 2, kernel_size=5)


class TestModels:
    def test_unet_shape_and_normalisation(self, rng):
        m = build_model(ModelSpec("unet", 3, base_filters=4), seed=0)
        p = m.predict(rng.random((3, 64, 64)).astype(np.float32))
        assert p.shape == (5, 64, 64)
        assert np.abs(p.sum(axis=0) - 1).max() < 1e-6
        with pytest.raises(ValueError):
            m.predict(np.zeros((3, 40, 40), np.float32))
        with pytest.raises(ValueError):
            m.predict(np.zeros((4, 64, 64), np.float32))

    def test_dnn_is_pixelwise(self, rng):
        m = build_model(ModelSpec("dnn", 4), seed=0)
        x = rng.random((4, 6, 7)).astype(np.float32)
        tile = m.predict(x)
        assert tile.shape == (5, 6, 7)
        np.testing.assert_allclose(tile.sum(axis=0), 1.0, atol=1e-6)
        for r in range(6):
            for c in range(7):
                assert np.array_equal(tile[:, r, c], m.predict(x[:, r:r + 1, c:c + 1])[:, 0, 0])

    def test_dnn_param_count(self):
        m = build_model(ModelSpec("dnn", 8), seed=0)
        assert m.param_count() == (8 * 256 + 256) + (256 * 128 + 128) + (128 * 64 + 64) + (64 * 5 + 5)

    def test_seeded_init(self):
        a = build_model(ModelSpec("unet", 2, base_filters=2), seed=3).parameters()
        b = build_model(ModelSpec("unet", 2, base_filters=2), seed=3).parameters()
        assert all(np.array_equal(a[k], b[k]) for k in a)

    def test_spec_validation(self):
        for bad in (dict(architecture="cnn", input_channels=3), dict(architecture="dnn", input_channels=0),
                    dict(architecture="dnn", input_channels=3, hidden=(4, 4)),
                    dict(architecture="unet", input_channels=3, depth=3),
                    dict(architecture="dnn", input_channels=3, dropout=1.0)):
            with pytest.raises(ValueError):
                ModelSpec(**bad)
        s = ModelSpec("UNET", 5, base_filters=4)
        assert ModelSpec.from_dict(s.to_dict()) == s


class TestMetrics:
    def test_f1(self):
        assert f1_score(0.8997, 0.8169) == pytest.approx(0.8563, abs=5e-5)
        assert f1_score(0.0, 0.0) == 0.0

    def test_counts(self):
        probs = np.zeros((5, 1, 4))
        probs[0, 0, :] = [0.9, 0.9, 0.2, 0.4]
        probs[1, 0, :] = [0.1, 0.1, 0.8, 0.6]
        labels = one_hot(np.array([[0, 1, 1, 0]]))
        m = metrics(probs, labels)
        # thresholded at 0.5: tp=2 (px0 class0, px2 class1), fp=2, fn=2
        assert (m.precision, m.recall, m.accuracy) == (0.5, 0.5, 0.5)


class TestAdam:
    def test_matches_reference(self, rng):
        p = {"w": rng.normal(size=5)}
        ref = p["w"].copy()
        m = v = np.zeros(5)
        opt = Adam(0.01)
        for t in range(1, 6):
            g = rng.normal(size=5)
            opt.step(p, {"w": g})
            m = 0.9 * m + 0.1 * g
            v = 0.999 * v + 0.001 * g * g
            lr_t = 0.01 * np.sqrt(1 - 0.999 ** t) / (1 - 0.9 ** t)
            ref = ref - lr_t * m / (np.sqrt(v) + 1e-7)
        np.testing.assert_allclose(p["w"], ref, rtol=1e-12)

    def test_minimises_quadratic(self):
        p = {"w": np.array([5.0, -3.0])}
        opt = Adam(0.1)
        for _ in range(500):
            opt.step(p, {"w": 2 * p["w"]})
        assert np.abs(p["w"]).max() < 1e-2


class TestAugment:
    def test_draw_consumes_fixed_variates(self):
        a, b = np.random.default_rng(1), np.random.default_rng(1)
        aug.draw(a, 0.0)
        aug.draw(b, 1.0)
        assert a.random() == b.random()

    def test_labels_follow_geometry(self, rng):
        f = rng.random((2, 8, 8)).astype(np.float32)
        lab = one_hot(rng.integers(0, 5, (8, 8)))
        d = aug.AugmentDraw(True, True, False, 1, 0.0, 1.0)
        f2, lab2 = aug.apply(f, lab, d)
        np.testing.assert_array_equal(lab2, np.rot90(lab[..., ::-1], 1, axes=(-2, -1)))
        np.testing.assert_allclose(f2, np.rot90(f[..., ::-1], 1, axes=(-2, -1)), atol=1e-6)
        assert np.all(lab2.sum(axis=0) == 1)

    def test_identity_cases(self, rng):
        f = rng.random((2, 1, 1)).astype(np.float32)
        lab = one_hot(np.array([[2]]))
        d = aug.AugmentDraw(True, True, True, 2, 0.05, 1.05)
        assert aug.apply(f, lab, d)[0] is f
        r = SampleRecord(rng.random((2, 4, 4)).astype(np.float32), one_hot(np.zeros((4, 4), int)), 0)
        assert aug.augment(r, 0, probability=0.0).features is r.features

    @given(st.integers(0, 2 ** 31))
    @settings(max_examples=30, deadline=None)
    def test_range_and_onehot(self, seed):
        rng = np.random.default_rng(seed)
        r = SampleRecord(rng.random((3, 8, 8)).astype(np.float32), one_hot(rng.integers(0, 5, (8, 8))), 0)
        out = aug.augment(r, seed, probability=1.0)
        assert out.features.min() >= 0 and out.features.max() <= 1
        assert np.all(out.labels.sum(axis=0) == 1)
        assert sorted(out.labels.sum(axis=(1, 2))) == sorted(r.labels.sum(axis=(1, 2)))


def toy_records(n, size, channels=3, seed=0):
    """Class is encoded in channel 0, so a model can learn it."""
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n):
        c = i % 5
        f = rng.random((channels, size, size)).astype(np.float32) * 0.1
        f[0] += c / 5
        out.append(SampleRecord(f, one_hot(np.full((size, size), c)), i))
    return out


class TestTraining:
    def test_dnn_learns(self):
        recs = toy_records(200, 1)
        m = build_model(ModelSpec("dnn", 3, hidden=(16, 16, 16), dropout=0.0), seed=0)
        before = evaluate_records(m, recs).loss
        train(m, recs, [], TrainConfig(epochs=20, batch_size=16, learning_rate=1e-2, seed=0, micro_batch=16))
        after = evaluate_records(m, recs)
        assert after.loss < before and after.accuracy > 0.9

    def test_deterministic_and_resume(self):
        recs = toy_records(20, 16)
        spec = ModelSpec("unet", 3, base_filters=2)
        cfg = TrainConfig(epochs=3, batch_size=8, seed=2)
        a = build_model(spec, seed=1)
        wa, ha = train(a, recs[:15], recs[15:], cfg)
        b = build_model(spec, seed=1)
        wb, _ = train(b, recs[:15], recs[15:], cfg)
        assert encode_weights(wa) == encode_weights(wb)
        # Stop after one epoch, round-trip the checkpoint, resume to three.
        c = build_model(spec, seed=1)
        w1, _ = train(c, recs[:15], recs[15:], TrainConfig(epochs=1, batch_size=8, seed=2))
        w1 = decode_weights(encode_weights(w1))
        d = build_model(spec, seed=99)
        wd, hd = train(d, recs[:15], recs[15:], cfg, resume=w1)
        assert len(hd) == 2
        assert encode_weights(wd) == encode_weights(wa)
        assert hd[-1] == ha[-1]

    def test_micro_batch_does_not_change_gradients(self):
        recs = toy_records(8, 16)
        spec = ModelSpec("unet", 3, base_filters=2)
        ws = []
        for mb in (1, 8):
            m = build_model(spec, seed=0)
            w, _ = train(m, recs, [], TrainConfig(epochs=1, batch_size=8, seed=0, micro_batch=mb, augment_prob=0))
            ws.append(w.params)
        for k in ws[0]:
            np.testing.assert_allclose(ws[0][k], ws[1][k], rtol=1e-4, atol=1e-6)

    def test_errors(self):
        m = build_model(ModelSpec("dnn", 4), seed=0)
        with pytest.raises(DataError):
            train(m, [], [], TrainConfig(epochs=1))
        with pytest.raises(DataError):
            train(m, toy_records(3, 1, channels=3), [], TrainConfig(epochs=1))
        with pytest.raises(ValueError):
            TrainConfig(epochs=0)


class TestCheckpoint:
    def random_weights(self, rng):
        spec = ModelSpec("dnn", int(rng.integers(1, 6)), hidden=tuple(int(h) for h in rng.integers(1, 8, 3)))
        m = build_model(spec, seed=int(rng.integers(0, 1000)))
        params = {k: rng.normal(size=v.shape).astype(np.float32) for k, v in m.parameters().items()}
        mm = {k: rng.normal(size=v.shape).astype(np.float32) for k, v in params.items()}
        vv = {k: rng.random(v.shape).astype(np.float32) for k, v in params.items()}
        return ModelWeights(spec, params, mm, vv, int(rng.integers(0, 2 ** 40)), int(rng.integers(0, 100)),
                            float(rng.random()), 0.9, 0.999, 1e-7)

    def test_round_trip_random(self, rng):
        for _ in range(100):
            w = self.random_weights(rng)
            buf = encode_weights(w)
            back = decode_weights(buf)
            assert encode_weights(back) == buf
            assert back.spec == w.spec and back.step == w.step and back.epoch == w.epoch
            for k in w.params:
                assert back.params[k].tobytes() == w.params[k].tobytes()
                assert back.adam_v[k].tobytes() == w.adam_v[k].tobytes()

    def test_file_and_model_load(self, rng, tmp_path):
        w = self.random_weights(rng)
        save_weights(w, tmp_path / "m.pwts")
        m = build_model(w.spec, seed=0)
        load_weights(tmp_path / "m.pwts", m)
        assert all(np.array_equal(m.parameters()[k], w.params[k]) for k in w.params)
        other = build_model(ModelSpec("dnn", w.spec.input_channels + 1), seed=0)
        with pytest.raises(DataError):
            load_weights(tmp_path / "m.pwts", other)

    def test_errors(self, rng, tmp_path):
        buf = encode_weights(self.random_weights(rng))
        with pytest.raises(BadMagicError):
            decode_weights(b"XXXX" + buf[4:])
        with pytest.raises(VersionMismatchError):
            decode_weights(buf[:4] + (9).to_bytes(4, "little") + buf[8:])
        with pytest.raises(TruncatedError):
            decode_weights(buf[:-3])
        with pytest.raises(TruncatedError):
            decode_weights(buf + b"\0")
        with pytest.raises(DataError):
            load_weights(tmp_path / "missing.pwts")


class TestLayerExamples:
    def test_identity_1x1(self, rng):
        layer = Conv2D(3, 3, 1)
        layer.params["weight"][:] = np.eye(3, dtype=np.float32)[:, :, None, None]
        x = rng.random((2, 3, 4, 5)).astype(np.float32)
        assert np.array_equal(layer.forward(x), x)

    def test_all_ones_3x3(self):
        layer = Conv2D(1, 1, 3)
        layer.params["weight"][:] = 1.0
        out = layer.forward(np.ones((1, 1, 5, 5), np.float32))
        assert out[0, 0, 2, 2] == 9.0 and out[0, 0, 0, 0] == 4.0

    def test_depthwise_identity_is_pointwise(self, rng):
        ds = DepthwiseSeparableConv(3, 4, rng)
        ds.params["depthwise"][:] = 0.0
        ds.params["depthwise"][:, 1, 1] = 1.0
        plain = Conv2D(3, 4, 1)
        plain.params["weight"][:] = ds.params["pointwise"]
        plain.params["bias"][:] = rng.random(4)
        ds.params["bias"][:] = plain.params["bias"]
        x = rng.random((1, 3, 6, 6)).astype(np.float32)
        assert np.array_equal(ds.forward(x), plain.forward(x))

    def test_small_examples(self):
        p = softmax_channels(np.zeros((1, 5, 1, 1)))
        np.testing.assert_allclose(p[0, :, 0, 0], 0.2)
        pool = MaxPool2x2()
        assert pool.forward(np.array([[[[1.0, 2.0], [3.0, 4.0]]]]))[0, 0, 0, 0] == 4.0
        np.testing.assert_array_equal(pool.backward(np.array([[[[1.0]]]]))[0, 0], [[0, 0], [0, 1]])
        d = Dropout(0.0)
        x = np.ones((1, 1, 2, 2), np.float32)
        assert d.forward(x, training=True) is x and d.forward(x) is x

    def test_cross_entropy_zero_only_at_one_hot(self, rng):
        y = one_hot(rng.integers(0, 5, (3, 3)))[None]
        assert cross_entropy(y, y) == 0.0
        p = softmax_channels(rng.normal(size=(1, 5, 3, 3)))
        assert cross_entropy(p, y) > 0.0


def unet_param_formula(c, b):
    f = [b * 2 ** i for i in range(5)]

    def ds(i, o):
        return 9 * i + i * o + o

    total, cin = 0, c
    for lvl in range(4):
        total += ds(cin, f[lvl]) + ds(f[lvl], f[lvl])
        cin = f[lvl]
    total += (9 * f[3] * f[4] + f[4]) + (9 * f[4] * f[4] + f[4])
    cin = f[4]
    for lvl in reversed(range(4)):
        total += cin * f[lvl] + f[lvl] + 2 * ds(f[lvl], f[lvl])
        cin = f[lvl]
    return total + f[0] * 5 + 5


class TestUNetStructure:
    @pytest.mark.parametrize("c,b", [(8, 32), (8, 16), (13, 4), (24, 8)])
    def test_param_count(self, c, b):
        assert build_model(ModelSpec("unet", c, base_filters=b)).param_count() == unet_param_formula(c, b)

    def test_flip_equivariance(self, rng):
        m = build_model(ModelSpec("unet", 2, base_filters=2), seed=4).astype(np.float64)
        for layer in m.layers.values():
            for k, w in layer.params.items():
                if w.ndim >= 3 and w.shape[-1] == 3:
                    w[...] = (w + w[..., ::-1]) / 2
        x = rng.random((1, 2, 32, 32))
        a = m.predict(x[..., ::-1].copy())
        b = m.predict(x)[..., ::-1]
        assert np.abs(a - b).max() < 1e-5


class TestAugmentExamples:
    def test_double_flip_identity(self, rng):
        f = rng.random((2, 8, 8)).astype(np.float32)
        lab = one_hot(rng.integers(0, 5, (8, 8)))
        d = aug.AugmentDraw(True, True, False, 2, 0.0, 1.0)
        once = aug._spatial(f, d)
        assert np.array_equal(aug._spatial(once, d), f)
        assert np.array_equal(f[..., ::-1][..., ::-1], f)

    def test_applied_fraction(self):
        rng = np.random.default_rng(0)
        frac = np.mean([aug.draw(rng, 0.8).applied for _ in range(10_000)])
        assert 0.79 <= frac <= 0.81


class TestTrainingExamples:
    def separable(self, n=200):
        rng = np.random.default_rng(0)
        recs = []
        for i in range(n):
            c = i % 2
            f = np.array([[[0.25 + 0.5 * c + rng.uniform(-0.2, 0.2)]], [[rng.random()]]], np.float32)
            recs.append(SampleRecord(f, one_hot(np.array([[c]])), i))
        return recs

    def test_loss_strictly_decreases(self):
        recs = self.separable()
        m = build_model(ModelSpec("dnn", 2, hidden=(16, 16, 16), dropout=0.0), seed=0)
        _, hist = train(m, recs, [], TrainConfig(epochs=5, batch_size=32, seed=0, micro_batch=32))
        losses = [h[0].loss for h in hist]
        assert all(b < a for a, b in zip(losses, losses[1:])), losses

    def test_zero_learning_rate(self):
        recs = self.separable(40)
        m = build_model(ModelSpec("dnn", 2, hidden=(8, 8, 8)), seed=0)
        before = {k: v.copy() for k, v in m.parameters().items()}
        _, hist = train(m, recs, recs[:10], TrainConfig(epochs=3, learning_rate=0.0, seed=0))
        assert all(np.array_equal(before[k], v) for k, v in m.parameters().items())
        assert hist[0][1] == hist[1][1] == hist[2][1]

    def test_adam_zero_gradient(self, rng):
        p = {"w": rng.normal(size=4)}
        ref = p["w"].copy()
        opt = Adam()
        for _ in range(3):
            opt.step(p, {"w": np.zeros(4)})
        assert np.array_equal(p["w"], ref)

    def test_perfect_predictions(self, rng):
        y = one_hot(rng.integers(0, 5, (4, 4)))
        m = metrics(y, y)
        assert (m.accuracy, m.precision, m.recall, m.f1, m.loss) == (1.0, 1.0, 1.0, 1.0, 0.0)
