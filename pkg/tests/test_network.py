import json

import numpy as np
import pytest

from oracles import central_difference, rel_error
from ucdsc.data import SyntheticSpec, generate_blobs
from ucdsc.losses import BackgroundBatch, FeatureBatch, LossWeights, total_loss
from ucdsc.network import (
    Gradients,
    MlpModel,
    OptimizerState,
    StaleCacheError,
    TrainConfig,
    backward,
    forward,
    init_model,
    load_checkpoint,
    rmsprop_step,
    save_checkpoint,
    train,
)
from ucdsc.simplex import DimensionError, build_simplex


def test_init_deterministic_and_zero_bias():
    a = init_model([5, 7, 3], seed=11)
    b = init_model([5, 7, 3], seed=11)
    for wa, wb in zip(a.weights, b.weights):
        assert wa.tobytes() == wb.tobytes()
    assert all(not bias.any() for bias in a.biases)


def test_init_variance():
    m = init_model([256, 256], seed=0)
    assert abs(m.weights[0].var() - 2 / 256) < 0.2 * 2 / 256


@pytest.mark.parametrize("dims", [[3], [3, 0, 2], []])
def test_init_rejects_bad_dims(dims):
    with pytest.raises(ValueError):
        init_model(dims, 0)


def test_forward_identity_layer():
    m = MlpModel([3, 3], [np.eye(3)], [np.zeros(3)])
    x = np.array([[1.0, -2.0, 3.0]])
    out, _ = forward(m, x)
    np.testing.assert_array_equal(out, x)


def test_forward_hand_two_layer():
    w1 = np.array([[1.0, -1.0], [2.0, 0.5]])
    b1 = np.array([0.0, -1.0])
    w2 = np.array([[1.0], [3.0]])
    b2 = np.array([0.5])
    m = MlpModel([2, 2, 1], [w1, w2], [b1, b2])
    out, cache = forward(m, [[1.0, 1.0]])
    # hidden pre-activation: (3, -1.5) -> relu (3, 0); output 3*1 + 0*3 + 0.5
    np.testing.assert_array_equal(cache.preacts[0], [[3.0, -1.5]])
    assert out[0, 0] == 3.5


def test_forward_dimension_mismatch():
    m = init_model([4, 2], 0)
    with pytest.raises(DimensionError):
        forward(m, np.zeros((3, 5)))


def test_backward_zero_upstream():
    m = init_model([4, 6, 3], 1)
    _, cache = forward(m, np.random.default_rng(0).normal(size=(5, 4)))
    g = backward(m, cache, np.zeros((5, 3)))
    assert all(not p.any() for p in g.parameters())


def test_backward_linear_in_upstream():
    rng = np.random.default_rng(2)
    m = init_model([4, 6, 3], 1)
    _, cache = forward(m, rng.normal(size=(5, 4)))
    g1, g2 = rng.normal(size=(5, 3)), rng.normal(size=(5, 3))
    a, b, ab = backward(m, cache, g1), backward(m, cache, g2), backward(m, cache, g1 + g2)
    for pa, pb, pab in zip(a.parameters(), b.parameters(), ab.parameters()):
        np.testing.assert_allclose(pa + pb, pab, rtol=1e-12, atol=1e-12)


def test_backward_stale_cache():
    m = init_model([3, 4, 2], 0)
    _, cache = forward(m, np.ones((2, 3)))
    grads = backward(m, cache, np.ones((2, 2)))
    rmsprop_step(m, OptimizerState.for_model(m, 0.01), grads)
    with pytest.raises(StaleCacheError):
        backward(m, cache, np.ones((2, 2)))
    with pytest.raises(StaleCacheError):
        backward(m.copy(), forward(m, np.ones((2, 3)))[1], np.ones((2, 2)))


def _param_fd(model, loss_of_model):
    """Central differences over every parameter of ``model``."""
    out = []
    for p in model.parameters():
        def fn(values, p=p):
            saved = p.copy()
            p[...] = values
            v = loss_of_model(model)
            p[...] = saved
            return v
        out.append(central_difference(fn, p.copy(), step=1e-6))
    return out


def test_backward_matches_finite_differences():
    rng = np.random.default_rng(5)
    m = init_model([3, 5, 4, 2], 3)
    for b in m.biases:
        b[...] = rng.normal(size=b.shape) * 0.1
    x = rng.normal(size=(6, 3))
    target = rng.normal(size=(6, 2))

    def loss(model):
        out, _ = forward(model, x)
        return 0.5 * np.sum((out - target) ** 2)

    out, cache = forward(m, x)
    grads = backward(m, cache, out - target)
    for analytic, numeric in zip(grads.parameters(), _param_fd(m, loss)):
        assert rel_error(analytic, numeric) < 1e-4


def test_end_to_end_parameter_gradients():
    rng = np.random.default_rng(8)
    m = init_model([4, 10, 6, 3], 2)
    assert m.num_parameters() <= 500
    centers = build_simplex(3, 3, 2.0)
    x, y = rng.normal(size=(7, 4)), rng.integers(0, 3, 7)
    xbg = rng.normal(size=(4, 4)) * 2
    w = LossWeights(1.0, 5.0, 0.5)

    def loss(model):
        f, _ = forward(model, np.vstack([x, xbg]))
        return total_loss(FeatureBatch(f[:7], y), BackgroundBatch(f[7:]), centers, w).value

    f, cache = forward(m, np.vstack([x, xbg]))
    lv = total_loss(FeatureBatch(f[:7], y), BackgroundBatch(f[7:]), centers, w)
    grads = backward(m, cache, np.vstack([lv.grad_features, lv.grad_background]))
    for analytic, numeric in zip(grads.parameters(), _param_fd(m, loss)):
        assert rel_error(analytic, numeric) < 1e-4


class TestRmsprop:
    def _scalar(self, w0=0.0):
        m = MlpModel([1, 1], [np.array([[w0]])], [np.array([0.0])])
        return m, OptimizerState.for_model(m, learning_rate=0.01)

    def test_zero_everything_unchanged(self):
        m, st = self._scalar()
        rmsprop_step(m, st, Gradients([np.zeros((1, 1))], [np.zeros(1)]))
        assert m.weights[0][0, 0] == 0.0 and m.biases[0][0] == 0.0

    def test_first_step_hand_value(self):
        m, st = self._scalar()
        rmsprop_step(m, st, Gradients([np.ones((1, 1))], [np.zeros(1)]))
        assert st.square_avg_w[0][0, 0] == pytest.approx(0.05, rel=1e-15)
        assert m.weights[0][0, 0] == pytest.approx(-0.01 / np.sqrt(0.05 + 1e-6), rel=1e-12)
        assert m.weights[0][0, 0] == pytest.approx(-0.04472, abs=1e-5)

    def test_momentum_accelerates(self):
        m, st = self._scalar()
        g = Gradients([np.ones((1, 1))], [np.zeros(1)])
        w0 = m.weights[0][0, 0]
        rmsprop_step(m, st, g)
        w1 = m.weights[0][0, 0]
        rmsprop_step(m, st, g)
        w2 = m.weights[0][0, 0]
        assert abs(w2 - w1) > abs(w1 - w0)

    def test_penalties_skip_biases(self):
        m = MlpModel([1, 1], [np.array([[2.0]])], [np.array([2.0])])
        st = OptimizerState.for_model(m, 0.01)
        rmsprop_step(m, st, Gradients([np.zeros((1, 1))], [np.zeros(1)]))
        assert m.biases[0][0] == 2.0
        assert m.weights[0][0, 0] < 2.0

    def test_shape_mismatch(self):
        m, st = self._scalar()
        with pytest.raises(DimensionError):
            rmsprop_step(m, st, Gradients([np.ones((2, 1))], [np.zeros(1)]))


def _blobs(seed=0, classes=2, scale=10.0):
    ds = generate_blobs(SyntheticSpec(classes, 2, 60, scale, 0.5), seed)
    return ds.samples, ds.labels


def test_train_collapses_separable_blobs():
    x, y = _blobs()
    cfg = TrainConfig(epochs=60, batch_size=16, learning_rate=0.01, seed=0, weights=LossWeights(0, 0, 38), expand_factor=100)
    model, centers, hist = train(x, y, None, cfg, [2, 16, 8, 1])
    assert centers.num_classes == 2 and centers.feature_dim == 1
    assert hist[-1].intra < 0.01 * hist[0].intra


def test_train_deterministic():
    x, y = _blobs(1, 3)
    bg = np.random.default_rng(0).uniform(-15, 15, size=(100, 2))
    cfg = TrainConfig(epochs=5, batch_size=32, seed=4, weights=LossWeights(1, 5, 38), expand_factor=10)
    m1, _, h1 = train(x, y, bg, cfg, [2, 8, 2])
    m2, _, h2 = train(x, y, bg, cfg, [2, 8, 2])
    assert h1 == h2
    assert len(h1) == 5
    assert all(np.isfinite(h.total) for h in h1)
    for a, b in zip(m1.parameters(), m2.parameters()):
        assert a.tobytes() == b.tobytes()


def test_train_validation():
    x, y = _blobs(0, 3)
    cfg = TrainConfig(epochs=1, batch_size=8, weights=LossWeights(1, 0, 1))
    with pytest.raises(ValueError):
        train(x, y, None, cfg, [2, 4, 2])
    cfg = TrainConfig(epochs=1, batch_size=8, weights=LossWeights(0, 0, 1))
    with pytest.raises(DimensionError):
        train(x, y, None, cfg, [2, 4, 1])
    with pytest.raises(ValueError):
        TrainConfig(epochs=0)


def test_intra_decreases_monotonically_in_most_runs():
    # Small steps: with momentum 0.9 a large learning rate overshoots within 10 epochs.
    monotone = 0
    for seed in range(20):
        ds = generate_blobs(SyntheticSpec(4, 8, 100, 10.0, 0.5), seed)
        cfg = TrainConfig(
            epochs=10, batch_size=32, learning_rate=2e-4, seed=seed, weights=LossWeights(0, 0, 38), expand_factor=10
        )
        _, _, hist = train(ds.samples, ds.labels, None, cfg, [8, 64, 32, 4])
        intra = [h.intra for h in hist]
        monotone += all(b < a for a, b in zip(intra, intra[1:]))
    assert monotone >= 19


def test_checkpoint_roundtrip(tmp_path):
    m = init_model([3, 4, 2], 9)
    c = build_simplex(3, 2, 100.0)
    path = tmp_path / "model.json"
    save_checkpoint(path, m, c)
    data = json.loads(path.read_text())
    assert set(data) == {"layer_dims", "weights", "biases", "expand_factor", "num_classes"}
    m2, c2 = load_checkpoint(path)
    assert c2 == c
    for a, b in zip(m.parameters(), m2.parameters()):
        np.testing.assert_array_equal(a, b)
