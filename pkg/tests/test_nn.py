import math

import numpy as np
import pytest

from ifc_grl import nn
from ifc_grl.nn import (Adam, AdamState, BatchNorm1d, BatchTooSmall, CheckpointError, LabelOutOfRange, Linear,
                        MaxPoolSet, ReLU, ShapeMismatch, adam_step, dense_stage, softmax, softmax_cross_entropy)

from oracles import check_layer, numeric_grad, rel_error, softmax_ce_reference


def test_linear_identity():
    layer = Linear(3, 3)
    layer.weight.value[...] = np.eye(3)
    x = np.random.default_rng(0).standard_normal((4, 3))
    assert np.array_equal(layer.forward(x), x)


def test_linear_hand_example():
    layer = Linear(2, 3)
    layer.weight.value[...] = [[1, 0], [0, 1], [1, 1]]
    layer.bias.value[...] = [0, 0, 1]
    assert layer.forward(np.array([[1.0, 2.0]])).tolist() == [[1.0, 2.0, 4.0]]


def test_linear_init_and_count():
    layer = Linear(6, 16, np.random.default_rng(1))
    assert layer.num_parameters() == 112
    assert np.abs(layer.weight.value).max() <= math.sqrt(1 / 6)
    assert not layer.bias.value.any()
    with pytest.raises(ShapeMismatch):
        layer.forward(np.zeros((2, 5)))


@pytest.mark.parametrize("seed", range(5))
def test_linear_gradients(seed):
    rng = np.random.default_rng(seed)
    layer = Linear(4, 5, rng)
    errors = check_layer(layer, rng.standard_normal((3, 4)), rng)
    assert max(errors.values()) < 1e-6


def test_batchnorm_identity_on_standardized_input():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((64, 3))
    x = (x - x.mean(0)) / x.std(0)
    bn = BatchNorm1d(3)
    y = bn.forward(x)
    # output is x / sqrt(1 + eps)
    assert np.abs(y - x).max() < 1e-4


def test_batchnorm_statistics():
    rng = np.random.default_rng(1)
    x = rng.standard_normal((50, 4)) * [1, 10, 0.1, 3] + [5, -2, 0, 1]
    bn = BatchNorm1d(4, eps=0.0)
    y = bn.forward(x)
    assert np.abs(y.mean(0)).max() < 1e-9
    assert np.abs(y.var(0) - 1).max() < 1e-6


def test_batchnorm_running_stats():
    rng = np.random.default_rng(2)
    x = rng.standard_normal((10, 2)) * 3 + 1
    bn = BatchNorm1d(2)
    bn.forward(x)
    assert np.allclose(bn.running_mean, 0.1 * x.mean(0))
    assert np.allclose(bn.running_var, 0.9 + 0.1 * x.var(0, ddof=1))
    bn.eval()
    before = (bn.running_mean.copy(), bn.running_var.copy())
    y = bn.forward(x)
    assert np.array_equal(bn.running_mean, before[0]) and np.array_equal(bn.running_var, before[1])
    assert np.allclose(y, (x - before[0]) / np.sqrt(before[1] + 1e-5))
    assert (bn.running_var >= 0).all()


def test_batchnorm_needs_two_samples():
    with pytest.raises(BatchTooSmall):
        BatchNorm1d(3).forward(np.zeros((1, 3)))
    bn = BatchNorm1d(3).eval()
    assert bn.forward(np.ones((1, 3))).shape == (1, 3)


@pytest.mark.parametrize("seed", range(5))
@pytest.mark.parametrize("training", [True, False])
def test_batchnorm_gradients(seed, training):
    rng = np.random.default_rng(seed)
    bn = BatchNorm1d(3)
    bn.gamma.value[...] = rng.uniform(0.5, 2, 3)
    bn.beta.value[...] = rng.standard_normal(3)
    bn.running_var[...] = rng.uniform(0.5, 2, 3)
    bn.train(training)
    errors = check_layer(bn, rng.standard_normal((6, 3)) * 2 + 1, rng)
    assert max(errors.values()) < 1e-5


def test_batchnorm_over_set_axis():
    rng = np.random.default_rng(3)
    x = rng.standard_normal((2, 5, 3))
    bn = BatchNorm1d(3)
    y = bn.forward(x)
    assert np.abs(y.reshape(-1, 3).mean(0)).max() < 1e-9
    assert max(check_layer(bn, x, rng).values()) < 1e-5


def test_relu():
    relu = ReLU()
    x = np.array([[-1.0, 0.0, 2.0]])
    assert relu.forward(x).tolist() == [[0.0, 0.0, 2.0]]
    assert relu.backward(np.ones((1, 3))).tolist() == [[0.0, 0.0, 1.0]]


def test_maxpool_first_index_tie():
    pool = MaxPoolSet()
    x = np.array([[[1.0, 5.0], [3.0, 5.0], [3.0, 0.0]]])
    assert pool.forward(x).tolist() == [[3.0, 5.0]]
    grad = pool.backward(np.array([[10.0, 20.0]]))
    assert grad.tolist() == [[[0.0, 20.0], [10.0, 0.0], [0.0, 0.0]]]


def test_maxpool_gradients():
    rng = np.random.default_rng(0)
    assert check_layer(MaxPoolSet(), rng.standard_normal((2, 7, 4)), rng)["input"] < 1e-6


def test_dense_stage_gradients():
    rng = np.random.default_rng(4)
    stage = dense_stage(3, 4, rng)
    x = rng.standard_normal((8, 3))
    assert max(check_layer(stage, x, rng).values()) < 1e-5


def test_softmax_ce_examples():
    loss, _ = softmax_cross_entropy(np.zeros((2, 11)), [0, 5])
    assert loss == pytest.approx(math.log(11), abs=1e-12)
    loss, _ = softmax_cross_entropy(np.array([[10.0, -10.0]]), [0])
    assert loss < 1e-8
    with pytest.raises(LabelOutOfRange):
        softmax_cross_entropy(np.zeros((1, 3)), [3])


@pytest.mark.parametrize("seed", range(5))
def test_softmax_ce_gradient(seed):
    rng = np.random.default_rng(seed)
    logits = rng.standard_normal((4, 6)) * 3
    labels = rng.integers(0, 6, 4)
    loss, grad = softmax_cross_entropy(logits, labels)
    assert loss == pytest.approx(softmax_ce_reference(logits, labels), rel=1e-12)
    numeric = numeric_grad(lambda: softmax_cross_entropy(logits, labels)[0], logits)
    assert rel_error(grad, numeric) < 1e-6


def test_softmax_extremes():
    rng = np.random.default_rng(0)
    logits = rng.uniform(-1e4, 1e4, (50, 11))
    p = softmax(logits)
    assert np.isfinite(p).all()
    assert np.abs(p.sum(axis=1) - 1).max() < 1e-12
    loss, grad = softmax_cross_entropy(logits, rng.integers(0, 11, 50))
    assert np.isfinite(loss) and np.isfinite(grad).all()


@pytest.mark.parametrize("g", [0.5, -3.0, 1e-3])
def test_adam_first_step(g):
    lr, eps = 0.01, 1e-8
    w = np.array([1.0])
    state = AdamState([(1,)], lr=lr, eps=eps)
    adam_step([w], [np.array([g])], state)
    # m_hat = g, v_hat = g^2 at t = 1
    expected = 1.0 - lr * g / (abs(g) + eps)
    assert w[0] == pytest.approx(expected, rel=1e-15)
    assert state.t == 1


def test_adam_zero_gradient():
    w = np.array([1.0, -2.0])
    state = AdamState([(2,)])
    for _ in range(50):
        adam_step([w], [np.zeros(2)], state)
    assert w.tolist() == [1.0, -2.0]
    assert state.t == 50


def test_adam_quadratic():
    w = np.array([0.0])
    state = AdamState([(1,)], lr=0.1)
    for _ in range(200):
        adam_step([w], [2 * (w - 3)], state)
        assert (state.v[0] >= 0).all()
    assert abs(w[0] - 3) < 0.05


def test_adam_weight_decay_and_class():
    layer = Linear(2, 1)
    opt = Adam(layer.parameters(), lr=0.1, weight_decay=1.0)
    before = layer.weight.value.copy()
    opt.zero_grad()
    opt.step()
    # gradient is zero, so the decay term alone shrinks the weights toward 0
    assert (np.abs(layer.weight.value) < np.abs(before)).all()


def test_state_dict_and_checkpoint(tmp_path):
    rng = np.random.default_rng(0)
    stage = dense_stage(3, 4, rng)
    stage.forward(rng.standard_normal((5, 3)))
    path = tmp_path / "w.ckpt"
    nn.save_checkpoint(stage.state_dict(), path)
    other = dense_stage(3, 4, np.random.default_rng(1))
    other.load_state_dict(nn.load_checkpoint(path))
    for (k1, v1), (k2, v2) in zip(stage.state_dict().items(), other.state_dict().items()):
        assert k1 == k2 and v1.tobytes() == v2.tobytes()
    data = path.read_bytes()
    path.write_bytes(data[:-8])
    with pytest.raises(CheckpointError):
        nn.load_checkpoint(path)
    with pytest.raises(CheckpointError):
        other.load_state_dict({"0.weight": np.zeros((4, 3))})
