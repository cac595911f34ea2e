import numpy as np
import pytest

from distloss import autodiff as ad
from distloss.labels import LabelDensity, LabelSpace, estimate_density, expected_labels
from distloss.loss import LossConfig, total_loss
from distloss.nn import (
    Adam,
    DenseConfig,
    DenseRegressor,
    DivergenceDetected,
    Net1DConfig,
    Net1DLite,
    TrainConfig,
    cosine_lr,
    load_checkpoint,
    save_checkpoint,
    train,
)

import oracles


def tiny(seed=0, **kw):
    cfg = dict(length=16, channels=4, blocks=2, kernel_size=3, pool=2, dtype="float64", seed=seed)
    cfg.update(kw)
    return Net1DLite(Net1DConfig(**cfg))


def _uniform_density(lo=-5, hi=5):
    space = LabelSpace.from_range(lo, hi, 0.5)
    return LabelDensity(space, np.full(len(space), 1 / len(space)))


def test_output_shape_and_shape_errors():
    model = tiny()
    x = np.random.default_rng(0).normal(size=(5, 1, 16))
    assert model(x).shape == (5,)
    with pytest.raises(ad.ShapeMismatch):
        model(np.zeros((5, 16)))
    with pytest.raises(ad.ShapeMismatch):
        model(np.zeros((5, 1, 12)))


def test_zero_head_predicts_bias():
    model = tiny()
    model.params["head_w"].value[:] = 0
    model.params["head_b"].value[:] = 1.25
    out = model(np.random.default_rng(1).normal(size=(7, 1, 16))).value
    np.testing.assert_array_equal(out, np.full(7, 1.25))


def test_identical_signals_identical_predictions():
    model = tiny()
    x = np.repeat(np.random.default_rng(2).normal(size=(1, 1, 16)), 4, axis=0)
    out = model(x).value
    assert np.all(out == out[0])


def test_residual_identity_with_zero_inner_weights():
    model = tiny()
    for k in ("conv2_w", "conv2_b"):
        model.params[f"block0.{k}"].value[:] = 0
    x = ad.as_diff(np.random.default_rng(3).normal(size=(3, 8, 4)))
    np.testing.assert_array_equal(model.block(x, 0).value, x.value)


def test_se_gate_in_open_unit_interval():
    model = tiny()
    rng = np.random.default_rng(4)
    for scale in (1e-3, 1.0, 30.0):
        h = ad.as_diff(rng.normal(scale=scale, size=(6, 8, 4)))
        g = model.se_gate(h, 1).value
        assert np.all(g > 0) and np.all(g < 1)


def test_every_parameter_gradient_matches_finite_differences():
    rng = np.random.default_rng(5)
    model = tiny(seed=5, length=100, pool=4, kernel_size=7)
    density = estimate_density(rng.uniform(-2, 2, 200), LabelSpace.from_range(-3, 3, 0.25))
    x = rng.normal(size=(6, 1, 100))
    y = rng.normal(size=6)
    e = expected_labels(density, 6)
    cfg = LossConfig(lam=1.0, base_metric="mse", epsilon=1.0)

    def loss_value():
        return float(total_loss(model(x), y, e, cfg).value)

    ad.backward(total_loss(model(x), y, e, cfg))
    for name, p in model.params.items():
        analytic = p.grad.copy()
        original = p.value.copy()

        def f(v, p=p):
            p.value = v
            return loss_value()

        numeric = oracles.central_difference(f, original)
        p.value = original
        assert oracles.rel_err(analytic, numeric) < 1e-4, name


def test_disconnected_parameter_gets_no_gradient():
    a = ad.parameter(np.ones(3))
    b = ad.parameter(np.ones(3))
    ad.backward(ad.sum_(ad.mul(a, np.array([1.0, 2.0, 3.0]))))
    np.testing.assert_array_equal(a.grad, [1.0, 2.0, 3.0])
    assert b.grad is None  # None is read as zero by the optimizer
    opt = Adam({"b_w": b}, lr=0.1)
    opt.step()
    np.testing.assert_array_equal(b.value, np.ones(3))


def test_cosine_schedule():
    assert cosine_lr(3e-3, 0, 50) == pytest.approx(3e-3)
    assert cosine_lr(3e-3, 25, 50) == pytest.approx(1.5e-3)
    assert cosine_lr(3e-3, 50, 50) == pytest.approx(0.0, abs=1e-18)


def test_weight_decay_is_decoupled_and_skips_biases():
    w = ad.parameter(np.full(2, 2.0))
    b = ad.parameter(np.full(2, 2.0))
    w.grad = np.zeros(2)
    b.grad = np.zeros(2)
    Adam({"x_w": w, "x_b": b}, lr=0.1, weight_decay=0.5).step()
    np.testing.assert_allclose(w.value, 2.0 - 0.1 * 0.5 * 2.0)
    np.testing.assert_array_equal(b.value, [2.0, 2.0])


def _toy_data(n=64, seed=0):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n, 16))
    y = rng.normal(size=n)
    return x, y


def test_lr_zero_leaves_parameters_unchanged():
    model = tiny()
    before = model.state_dict()
    x, y = _toy_data()
    train(model, x, y, TrainConfig(batch_size=16, epochs=3, lr=0.0, weight_decay=1e-2), _uniform_density())
    for k, v in model.state_dict().items():
        np.testing.assert_array_equal(v, before[k])


def test_training_log_and_determinism():
    x, y = _toy_data()
    cfg = TrainConfig(batch_size=16, epochs=3, seed=7)
    runs = []
    for _ in range(2):
        model = tiny(seed=3)
        result = train(model, x, y, cfg, _uniform_density())
        runs.append((result.log, model.state_dict()))
    (log_a, sa), (log_b, sb) = runs
    assert len(log_a) == 3
    assert log_a[0].loss == log_b[0].loss
    assert [e.lr for e in log_a] == [cosine_lr(cfg.lr, e, 3) for e in range(3)]
    for k in sa:
        assert np.max(np.abs(sa[k] - sb[k])) <= 1e-12
    for entry in log_a:
        assert entry.loss == pytest.approx(entry.plain + entry.dist, rel=1e-9)


def test_linear_toy_task_recovers_least_squares():
    rng = np.random.default_rng(0)
    x = rng.uniform(-2, 2, size=256)
    y = 1.5 * x - 0.7 + rng.normal(scale=0.1, size=256)
    model = DenseRegressor(DenseConfig(in_features=1, dtype="float64"))
    cfg = TrainConfig(batch_size=64, epochs=200, lr=5e-2, weight_decay=0.0,
                      loss=LossConfig(lam=0.0, base_metric="mse"))
    train(model, x[:, None], y, cfg, _uniform_density())
    intercept, slope = oracles.ols(x.tolist(), y.tolist())
    assert float(model.params["head_w"].value[0, 0]) == pytest.approx(slope, abs=1e-2)
    assert float(model.params["head_b"].value[0]) == pytest.approx(intercept, abs=1e-2)


def test_divergence_detected():
    model = DenseRegressor(DenseConfig(in_features=1))
    x = np.array([[1.0], [2.0]])
    y = np.array([np.inf, 1.0])
    with pytest.raises(DivergenceDetected) as info:
        train(model, x, y, TrainConfig(batch_size=2, epochs=1, loss=LossConfig(lam=0.0)), _uniform_density())
    assert info.value.epoch == 0


def test_checkpoint_round_trip(tmp_path):
    model = tiny(seed=9, output_shift=60.0, output_scale=8.0)
    x = np.random.default_rng(1).normal(size=(10, 16))
    path = tmp_path / "ckpt" / "model.npz"
    save_checkpoint(path, model, TrainConfig(seed=4))
    loaded, meta = load_checkpoint(path)
    assert meta["seed"] == 4 and meta["model_config"]["channels"] == 4
    assert np.max(np.abs(loaded.predict(x) - model.predict(x))) <= 1e-12
