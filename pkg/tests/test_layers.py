import numpy as np
import pytest

from gradcheck import check_module
from lwnet3d.layers import (
    AdaptiveAvgPool3d,
    AvgPool3d,
    BatchNorm3d,
    Conv3d,
    Linear,
    LogSoftmax,
    MaxPool3d,
    ReLU,
    Sequential,
)

TOL = 1e-6


def x64(rng, *shape):
    return rng.standard_normal(shape)


def layer_cases():
    rng = np.random.default_rng(0)
    yield "conv_dense", Conv3d(2, 3, (3, 2, 3), stride=(2, 1, 2), padding=1, rng=rng), (2, 2, 5, 4, 5)
    yield "conv_stem", Conv3d(1, 4, (8, 3, 3), rng=rng, role="stem"), (2, 1, 10, 5, 5)
    yield "conv_pointwise", Conv3d(4, 6, 1, rng=rng), (2, 4, 3, 3, 3)
    yield "conv_depthwise", Conv3d(4, 4, 3, padding=1, groups=4, rng=rng), (2, 4, 4, 4, 4)
    yield "conv_depthwise_s2", Conv3d(4, 4, 3, stride=2, padding=1, groups=4, rng=rng), (2, 4, 5, 5, 5)
    yield "conv_grouped", Conv3d(4, 6, 2, groups=2, rng=rng), (2, 4, 3, 3, 3)
    yield "maxpool", MaxPool3d(3, 2), (2, 2, 7, 5, 5)
    yield "avgpool", AvgPool3d(2, 2), (2, 2, 4, 4, 4)
    yield "avgpool_ceil", AvgPool3d(2, 2, ceil_mode=True), (2, 2, 5, 3, 4)
    yield "relu", ReLU(), (2, 3, 3, 3, 3)
    yield "linear", Linear(5, 4, rng=rng), (3, 5)
    yield "log_softmax", LogSoftmax(), (3, 5)
    yield "adaptive_pool", AdaptiveAvgPool3d(), (2, 3, 2, 3, 2)


@pytest.mark.parametrize("name,module,shape", list(layer_cases()), ids=lambda v: v if isinstance(v, str) else "")
def test_layer_gradients(name, module, shape):
    rng = np.random.default_rng(1)
    module.astype(np.float64)
    x = x64(rng, *shape)
    if name == "maxpool":
        # distinct values keep the argmax away from ties under perturbation
        x = rng.permutation(np.arange(x.size, dtype=np.float64)).reshape(shape) * 0.01
    assert check_module(module, x, rng) < TOL


def test_batchnorm_train_gradient():
    rng = np.random.default_rng(2)
    bn = BatchNorm3d(3).astype(np.float64)
    bn.gamma.data = rng.uniform(0.5, 1.5, 3)
    bn.beta.data = rng.standard_normal(3)
    assert check_module(bn, x64(rng, 4, 3, 3, 2, 2), rng) < TOL


def test_batchnorm_eval_gradient():
    rng = np.random.default_rng(3)
    bn = BatchNorm3d(3).astype(np.float64)
    bn.running_mean = rng.standard_normal(3)
    bn.running_var = rng.uniform(0.5, 2.0, 3)
    bn.gamma.data = rng.uniform(0.5, 1.5, 3)
    bn.eval()
    assert check_module(bn, x64(rng, 2, 3, 2, 2, 2), rng) < TOL


def test_sequential_gradient():
    rng = np.random.default_rng(4)
    seq = Sequential(Conv3d(1, 2, 2, rng=rng), ReLU(), Conv3d(2, 2, 2, rng=rng)).astype(np.float64)
    assert check_module(seq, x64(rng, 1, 1, 4, 4, 4), rng) < TOL


def test_float32_gradients_looser():
    rng = np.random.default_rng(5)
    conv = Conv3d(2, 3, 3, padding=1, rng=rng)
    x = rng.standard_normal((1, 2, 4, 4, 4)).astype(np.float32)
    y = conv.forward(x)
    w = rng.standard_normal(y.shape).astype(np.float32)
    gx = conv.backward(w)
    conv64 = Conv3d(2, 3, 3, padding=1).astype(np.float64)
    conv64.weight.data = conv.weight.data.astype(np.float64)
    conv64.forward(x.astype(np.float64))
    gx64 = conv64.backward(w.astype(np.float64))
    assert np.abs(gx - gx64).max() / np.abs(gx64).max() < 1e-2


# running statistics ---------------------------------------------------------


def test_batchnorm_running_stats_update():
    bn = BatchNorm3d(1).astype(np.float64)
    x = np.array([0.0, 2.0]).reshape(2, 1, 1, 1, 1)
    bn.forward(x)
    # batch mean 1, unbiased batch variance 2
    assert bn.running_mean.item() == pytest.approx(0.1)
    assert bn.running_var.item() == pytest.approx(0.9 + 0.1 * 2.0)


def test_batchnorm_converges_to_population():
    rng = np.random.default_rng(6)
    bn = BatchNorm3d(2).astype(np.float64)
    for _ in range(200):
        bn.forward(rng.normal([3.0, -1.0], [2.0, 0.5], size=(64, 1, 1, 1, 2)).transpose(0, 4, 1, 2, 3))
    np.testing.assert_allclose(bn.running_mean, [3.0, -1.0], atol=0.1)
    np.testing.assert_allclose(bn.running_var, [4.0, 0.25], rtol=0.1)


def test_batchnorm_eval_uses_running_stats_only():
    rng = np.random.default_rng(7)
    bn = BatchNorm3d(2).astype(np.float64)
    bn.running_mean = np.array([1.0, 2.0])
    bn.running_var = np.array([4.0, 9.0])
    bn.eval()
    x = rng.standard_normal((3, 2, 2, 2, 2))
    out = bn.forward(x)
    want = (x - bn.running_mean[None, :, None, None, None]) / np.sqrt(
        bn.running_var[None, :, None, None, None] + 1e-5)
    np.testing.assert_allclose(out, want, rtol=1e-12)
    # one sample at a time gives the same answer
    np.testing.assert_allclose(bn.forward(x[:1]), want[:1], rtol=1e-12)
    np.testing.assert_array_equal(bn.running_mean, [1.0, 2.0])


def test_batchnorm_train_rejects_single_value():
    bn = BatchNorm3d(2)
    with pytest.raises(ValueError):
        bn.forward(np.zeros((1, 2, 1, 1, 1), dtype=np.float32))


# module machinery -----------------------------------------------------------


def test_backward_without_forward_raises():
    relu = ReLU()
    with pytest.raises(RuntimeError):
        relu.backward(np.zeros(3))
    relu.forward(np.ones(3))
    relu.backward(np.ones(3))
    with pytest.raises(RuntimeError):
        relu.backward(np.ones(3))


def test_gradients_accumulate_until_zeroed():
    rng = np.random.default_rng(8)
    lin = Linear(3, 2, rng=rng)
    x = rng.standard_normal((4, 3)).astype(np.float32)
    g = np.ones((4, 2), dtype=np.float32)
    lin.forward(x)
    lin.backward(g)
    once = lin.weight.grad.copy()
    lin.forward(x)
    lin.backward(g)
    np.testing.assert_allclose(lin.weight.grad, 2 * once)
    lin.zero_grad()
    assert not lin.weight.grad.any()


def test_he_init_and_shapes():
    rng = np.random.default_rng(9)
    conv = Conv3d(64, 256, 1, rng=rng)
    assert conv.weight.shape == (256, 64, 1, 1, 1)
    assert conv.weight.data.std() == pytest.approx(np.sqrt(2 / 64), rel=0.05)
    dw = Conv3d(16, 16, 3, groups=16, rng=rng)
    assert dw.weight.shape == (16, 1, 3, 3, 3)
    with pytest.raises(ValueError):
        Conv3d(3, 4, 1, groups=2)
    assert Linear(4, 3).bias.data.tolist() == [0.0, 0.0, 0.0]


def test_state_dict_order_and_load():
    seq = Sequential(Conv3d(1, 2, 1), BatchNorm3d(2))
    assert list(seq.state_dict()) == ["0.weight", "1.gamma", "1.beta", "1.running_mean", "1.running_var"]
    seq.load_state("1.running_var", np.full(2, 3.0))
    assert seq[1].running_var.tolist() == [3.0, 3.0]
    with pytest.raises(ValueError):
        seq.load_state("0.weight", np.zeros((3, 1, 1, 1, 1)))


def test_macs_definition():
    conv = Conv3d(4, 5, 1)
    assert conv.macs((1, 4, 2, 2, 2)) == 8 * 4 * 5
    assert Conv3d(1, 1, 1).macs((1, 1, 1, 1, 1)) == 1
    assert Linear(6, 3).macs((2, 6)) == 36
    assert ReLU().macs((1, 1, 4, 4, 4)) == 0
