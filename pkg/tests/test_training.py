import math

import numpy as np
import pytest

from lwnet3d.models import build_model
from lwnet3d.training import (
    OptimizerConfig,
    TrainRecord,
    VelocityState,
    batches,
    lr_at,
    nll_loss,
    read_records,
    sgd_step,
    train,
    write_records,
)

MINI = dict(widths=(4, 8, 16, 32), blocks=(1, 1, 1, 1))


def step(theta, grad, cfg, vel=None, name="p"):
    vel = VelocityState() if vel is None else vel
    params = {name: np.array(theta, dtype=np.float64)}
    sgd_step(params, {name: np.array(grad, dtype=np.float64)}, vel, cfg)
    return params[name], vel


def test_sgd_plain_step():
    cfg = OptimizerConfig(learning_rate=0.1, momentum=0.0, weight_decay=0.0)
    theta, _ = step([1.0], [0.5], cfg)
    assert theta[0] == pytest.approx(0.95, abs=1e-15)


def test_sgd_pure_decay():
    cfg = OptimizerConfig(learning_rate=0.01, momentum=0.0, weight_decay=1e-5)
    theta, _ = step([1.0], [0.0], cfg)
    assert abs(theta[0] - (1 - 1e-7)) < 1e-15


def test_sgd_momentum_unrolled():
    cfg = OptimizerConfig(learning_rate=0.1, momentum=0.9, weight_decay=0.0)
    params = {"p": np.array([0.0])}
    vel = VelocityState()
    sgd_step(params, {"p": np.array([1.0])}, vel, cfg)
    assert params["p"][0] == pytest.approx(-0.1, abs=1e-12)
    sgd_step(params, {"p": np.array([1.0])}, vel, cfg)
    assert params["p"][0] == pytest.approx(-0.29, abs=1e-12)
    assert vel["p"][0] == pytest.approx(1.9, abs=1e-12)


def test_sgd_long_sequence_matches_recurrence():
    rng = np.random.default_rng(0)
    cfg = OptimizerConfig(learning_rate=0.05, momentum=0.8, weight_decay=1e-3)
    theta = rng.standard_normal(6)
    params = {"w": theta.copy()}
    vel = VelocityState()
    v = np.zeros(6)
    for _ in range(25):
        g = rng.standard_normal(6)
        sgd_step(params, {"w": g}, vel, cfg)
        v = 0.8 * v + (g + 1e-3 * theta)
        theta = theta - 0.05 * v
    np.testing.assert_allclose(params["w"], theta, rtol=0, atol=1e-12)


def test_sgd_shape_mismatch():
    with pytest.raises(ValueError):
        sgd_step({"p": np.zeros(2)}, {"p": np.zeros(3)}, VelocityState(), OptimizerConfig())


def test_nll_examples():
    lp = np.log(np.full((3, 9), 1 / 9))
    loss, grad = nll_loss(lp, [0, 4, 8])
    assert abs(loss - math.log(9)) < 1e-9
    assert grad[1, 4] == pytest.approx(-1 / 3) and grad.sum() == pytest.approx(-1.0)
    perfect = np.array([[0.0, -np.inf], [-np.inf, 0.0]])
    assert nll_loss(perfect, [0, 1])[0] == 0.0
    loss, _ = nll_loss(np.zeros((1, 1)), [0], weight_decay=1e-5, params=[np.array([2.0])])
    assert loss == pytest.approx(4e-5, abs=1e-15)


def test_nll_label_range():
    with pytest.raises(ValueError):
        nll_loss(np.zeros((2, 3)), [0, 3])
    with pytest.raises(ValueError):
        nll_loss(np.zeros((2, 3)), [-1, 0])


def test_lr_schedule():
    cfg = OptimizerConfig()
    assert lr_at(1, cfg) == 0.01
    assert lr_at(49, cfg) == 0.01
    assert lr_at(50, cfg) == pytest.approx(0.001, abs=1e-15)
    assert lr_at(60, cfg) == pytest.approx(0.001, abs=1e-15)
    with pytest.raises(ValueError):
        lr_at(0, cfg)
    with pytest.raises(ValueError):
        lr_at(61, cfg)


def test_optimizer_config_validation():
    for bad in [dict(momentum=1.0), dict(weight_decay=-1), dict(batch_size=0), dict(learning_rate=-0.1)]:
        with pytest.raises(ValueError):
            OptimizerConfig(**bad)


def test_batches_cover_once_and_fold_singletons():
    rng = np.random.default_rng(0)
    out = batches(41, 20, rng)
    assert [len(b) for b in out] == [20, 21]
    assert sorted(np.concatenate(out).tolist()) == list(range(41))
    assert [len(b) for b in batches(45, 20, rng)] == [20, 20, 5]


def test_records_roundtrip(tmp_path):
    recs = [TrainRecord(1, 0.5, 0.6, 0.75, 1.25), TrainRecord(2, 0.25, 0.3, 1.0, 1.5)]
    write_records(recs, tmp_path / "r.csv")
    back = read_records(tmp_path / "r.csv")
    assert back == recs
    assert [r.seconds for r in back] == [1.25, 1.5]


# whole-loop behaviour on tiny separable data ---------------------------------


def toy_data(seed=0, n_per=8):
    rng = np.random.default_rng(seed)
    x = rng.normal(0, 0.3, size=(2 * n_per, 1, 12, 9, 9)).astype(np.float32)
    y = np.repeat([0, 1], n_per)
    x[y == 1, :, :6] += 1.0
    return x, y


def test_training_decreases_loss():
    x, y = toy_data()
    model = build_model("lwnet20", 2, seed=0, **MINI)
    _, recs = train(model, (x, y), (x, y), OptimizerConfig(epochs=8, batch_size=4))
    assert len(recs) == 8 and [r.epoch for r in recs] == list(range(1, 9))
    assert recs[-1].train_loss < recs[0].train_loss
    assert not model.training


def test_training_is_deterministic():
    x, y = toy_data()
    runs = []
    for _ in range(2):
        model = build_model("lwnet20", 2, seed=3, **MINI)
        _, recs = train(model, (x, y), (x[:4], y[:4]), OptimizerConfig(epochs=2, batch_size=5, seed=4))
        runs.append((model.state_dict(), recs))
    (a, ra), (b, rb) = runs
    assert ra == rb
    assert all(a[k].tobytes() == b[k].tobytes() for k in a)


def test_zero_learning_rate_freezes_parameters():
    x, y = toy_data()
    model = build_model("lwnet20", 2, seed=0, **MINI)
    before = {k: p.data.copy() for k, p in model.named_parameters()}
    train(model, (x, y), None, OptimizerConfig(epochs=2, learning_rate=0.0, batch_size=4))
    for k, p in model.named_parameters():
        np.testing.assert_array_equal(p.data, before[k])


def test_zero_epochs_returns_initialization():
    x, y = toy_data()
    model = build_model("lwnet20", 2, seed=0, **MINI)
    before = {k: v.copy() for k, v in model.state_dict().items()}
    _, recs = train(model, (x, y), (x, y), OptimizerConfig(epochs=0))
    assert recs == []
    assert all(np.array_equal(v, before[k]) for k, v in model.state_dict().items())


def test_train_errors():
    x, y = toy_data()
    model = build_model("lwnet20", 2, seed=0, **MINI)
    with pytest.raises(ValueError):
        train(model, (x[:0], y[:0]), None, OptimizerConfig(epochs=1))
    with pytest.raises(ValueError):
        train(model, (x, y + 5), None, OptimizerConfig(epochs=1))
