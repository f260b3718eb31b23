import math

import numpy as np
import pytest

from zdcfast import nn
from zdcfast.errors import ShapeError, ValidationError
from zdcfast.nn import Tensor, ops


def t(arr, grad=False):
    return Tensor(np.asarray(arr, dtype=np.float32), requires_grad=grad)


def test_dense_identity_weights():
    x = t(np.random.default_rng(0).uniform(-1, 1, (4, 3)))
    y = ops.dense(x, t(np.eye(3)), t(np.zeros(3)))
    assert np.allclose(y.data, x.data)


def test_dense_zero_input_broadcasts_bias():
    b = np.array([1.0, -2.0, 3.0], dtype=np.float32)
    y = ops.dense(t(np.zeros((5, 4))), t(np.zeros((4, 3))), t(b))
    assert np.allclose(y.data, np.tile(b, (5, 1)))


def test_dense_shape_mismatch():
    with pytest.raises(ShapeError):
        ops.dense(t(np.zeros((2, 3))), t(np.zeros((4, 5))), t(np.zeros(5)))


CONV_SHAPE_TABLE = [
    # (h, k, stride, padding, expected)
    (44, 4, 2, "same", 22),
    (22, 4, 2, "same", 11),
    (11, 4, 2, "same", 6),
    (26, 3, 1, "valid", 24),
    (12, 4, 1, "same", 12),
    (24, 4, 1, "same", 24),
    (48, 4, 1, "same", 48),
    (48, 5, 1, "valid", 44),
    (48, 3, 1, "valid", 46),
    (46, 3, 1, "valid", 44),
    (26, 3, 1, "valid", 24),
]


@pytest.mark.parametrize("h,k,stride,padding,expected", CONV_SHAPE_TABLE)
def test_conv_output_shape_table(h, k, stride, padding, expected):
    x = t(np.zeros((1, 2, h, h)))
    y = ops.conv2d(x, t(np.zeros((3, 2, k, k))), t(np.zeros(3)),
                   stride=stride, padding=padding)
    assert y.shape == (1, 3, expected, expected)


def test_conv_forward_matches_sliding_window_oracle():
    rng = np.random.default_rng(5)
    x = rng.uniform(-1, 1, (1, 1, 5, 5)).astype(np.float32)
    k = rng.uniform(-1, 1, (1, 1, 3, 3)).astype(np.float32)
    y = ops.conv2d(t(x), t(k), t(np.zeros(1)), stride=1, padding="valid")
    expected = np.zeros((3, 3))
    for i in range(3):
        for j in range(3):
            expected[i, j] = np.sum(x[0, 0, i:i + 3, j:j + 3].astype(np.float64) * k[0, 0])
    assert np.allclose(y.data[0, 0], expected, atol=1e-5)


def test_conv_same_padding_asymmetry():
    # H=11, k=4, s=2: total pad 3 goes 1 on top, 2 on bottom.
    x = np.zeros((1, 1, 11, 11), dtype=np.float32)
    x[0, 0, 0, 0] = 1.0
    k = np.ones((1, 1, 4, 4), dtype=np.float32)
    y = ops.conv2d(t(x), t(k), t(np.zeros(1)), stride=2, padding="same")
    # first output cell covers padded rows [-1..2] so it still sees the corner
    assert y.shape == (1, 1, 6, 6)
    assert y.data[0, 0, 0, 0] == 1.0


@pytest.mark.parametrize("stride,padding", [(1, "valid"), (2, "same"), (1, "same")])
def test_conv_backend_paths_agree(stride, padding):
    pytest.importorskip("torch")
    rng = np.random.default_rng(9)
    x = rng.uniform(-1, 1, (2, 3, 9, 9)).astype(np.float32)
    k = rng.uniform(-1, 1, (4, 3, 4, 4)).astype(np.float32)
    b = rng.uniform(-1, 1, 4).astype(np.float32)
    g = None
    results = {}
    for backend in ("numpy", "torch"):
        ops.set_conv_backend(backend)
        try:
            xt, kt, bt = t(x, grad=True), t(k, grad=True), t(b, grad=True)
            y = ops.conv2d(xt, kt, bt, stride=stride, padding=padding)
            if g is None:
                g = np.random.default_rng(10).uniform(-1, 1, y.shape).astype(np.float32)
            y._backward_fn(g)
            results[backend] = (y.data, xt.grad, kt.grad, bt.grad)
        finally:
            ops.set_conv_backend(None)
    for a, b_ in zip(results["numpy"], results["torch"]):
        assert np.allclose(a, b_, atol=2e-4)


def test_conv_rejects_bad_configs():
    x = t(np.zeros((1, 1, 4, 4)))
    with pytest.raises(ShapeError):
        ops.conv2d(x, t(np.zeros((1, 2, 3, 3))), t(np.zeros(1)))  # channel mismatch
    with pytest.raises(ShapeError):
        ops.conv2d(x, t(np.zeros((1, 1, 5, 5))), t(np.zeros(1)), padding="valid")
    with pytest.raises(ShapeError):
        ops.conv2d(x, t(np.zeros((1, 1, 3, 3))), t(np.zeros(1)), stride=0)
    with pytest.raises(ShapeError):
        ops.conv2d(x, t(np.zeros((1, 1, 3, 3))), t(np.zeros(1)), padding="reflect")


def test_upsample_block_replication():
    y = ops.upsample_nearest2x(t([[[[1.0, 2.0], [3.0, 4.0]]]]))
    expected = [[1, 1, 2, 2], [1, 1, 2, 2], [3, 3, 4, 4], [3, 3, 4, 4]]
    assert np.array_equal(y.data[0, 0], np.array(expected, dtype=np.float32))


def test_upsample_shape_doubles():
    y = ops.upsample_nearest2x(t(np.zeros((2, 3, 6, 5))))
    assert y.shape == (2, 3, 12, 10)


def test_upsample_gradient_of_sum_is_four():
    x = t(np.random.default_rng(0).uniform(-1, 1, (1, 1, 3, 3)), grad=True)
    y = ops.upsample_nearest2x(x)
    y._backward_fn(np.ones(y.shape, dtype=np.float32))
    assert np.allclose(x.grad, 4.0)


def test_activation_values():
    assert ops.relu(t([-1.0, 2.0])).data.tolist() == [0.0, 2.0]
    assert np.allclose(ops.leaky_relu(t([-1.0, 2.0]), 0.2).data, [-0.2, 2.0])
    assert np.allclose(ops.sigmoid(t([0.0])).data, [0.5])


def test_sigmoid_extreme_values_stable():
    y = ops.sigmoid(t([-100.0, 100.0]))
    assert np.all(np.isfinite(y.data))
    assert y.data[0] >= 0.0 and y.data[1] <= 1.0


def test_batchnorm_train_normalizes():
    rng = np.random.default_rng(2)
    x = t(rng.normal(3.0, 2.0, (8, 3, 5, 5)))
    y = ops.batchnorm(x, t(np.ones(3)), t(np.zeros(3)),
                      np.zeros(3, np.float32), np.ones(3, np.float32), train=True)
    mean = y.data.mean(axis=(0, 2, 3))
    var = y.data.var(axis=(0, 2, 3))
    assert np.all(np.abs(mean) <= 1e-3)
    assert np.all(np.abs(var - 1.0) <= 1e-2)


def test_batchnorm_constant_input_zero_output():
    x = t(np.full((4, 2, 3, 3), 7.0))
    y = ops.batchnorm(x, t(np.ones(2)), t(np.zeros(2)),
                      np.zeros(2, np.float32), np.ones(2, np.float32), train=True)
    assert np.all(np.abs(y.data) <= 1e-3)


def test_batchnorm_updates_running_stats_and_infers():
    rng = np.random.default_rng(3)
    running_mean = np.zeros(2, np.float32)
    running_var = np.ones(2, np.float32)
    x = rng.normal(5.0, 1.0, (16, 2, 4, 4)).astype(np.float32)
    for _ in range(60):
        ops.batchnorm(t(x), t(np.ones(2)), t(np.zeros(2)),
                      running_mean, running_var, train=True)
    assert np.allclose(running_mean, 5.0, atol=0.2)
    y = ops.batchnorm(t(x), t(np.ones(2)), t(np.zeros(2)),
                      running_mean, running_var, train=False)
    assert abs(float(y.data.mean())) < 0.1


def test_batchnorm_rejects_single_element_batch():
    with pytest.raises(ShapeError):
        ops.batchnorm(t(np.zeros((1, 2, 1, 1))), t(np.ones(2)), t(np.zeros(2)),
                      np.zeros(2, np.float32), np.ones(2, np.float32), train=True)


def test_dropout_identity_cases():
    x = t(np.random.default_rng(0).uniform(-1, 1, (10, 10)))
    assert ops.dropout(x, 0.0, train=True, rng=np.random.default_rng(0)) is x
    assert ops.dropout(x, 0.5, train=False) is x


def test_dropout_survival_fraction():
    x = t(np.ones((1000, 1000)))
    y = ops.dropout(x, 0.2, train=True, rng=np.random.default_rng(8))
    survive = float(np.mean(y.data != 0))
    assert 0.79 <= survive <= 0.81
    kept = y.data[y.data != 0]
    assert np.allclose(kept, 1.0 / 0.8, atol=1e-5)


def test_dropout_requires_rng_in_train():
    with pytest.raises(ValidationError):
        ops.dropout(t(np.ones((2, 2))), 0.5, train=True)
    with pytest.raises(ValidationError):
        ops.dropout(t(np.ones((2, 2))), 1.0, train=True, rng=np.random.default_rng(0))


def test_concat_shapes_and_contents():
    a = t(np.arange(6).reshape(2, 3))
    b = t(np.arange(18).reshape(2, 9))
    y = ops.concat(a, b)
    assert y.shape == (2, 12)
    assert np.array_equal(y.data[:, :3], a.data)
    assert np.array_equal(y.data[:, 3:], b.data)
    with pytest.raises(ShapeError):
        ops.concat(a, t(np.zeros((3, 2))))


def test_reshape_model_shapes():
    x = t(np.arange(2 * 4608).reshape(2, 4608))
    y = ops.reshape(x, (2, 128, 6, 6))
    assert y.shape == (2, 128, 6, 6)
    assert np.array_equal(y.data.reshape(2, -1), x.data)
    z = ops.reshape(t(np.zeros((2, 21632))), (2, 128, 13, 13))
    assert z.shape == (2, 128, 13, 13)
    with pytest.raises(ShapeError):
        ops.reshape(x, (2, 100))


def test_loss_reference_values():
    assert math.isclose(ops.bce(t([[0.5]]), np.array([[1.0]], np.float32)).item(),
                        math.log(2.0), rel_tol=1e-5)
    x = np.random.default_rng(0).uniform(-1, 1, (4, 4)).astype(np.float32)
    assert ops.mse(t(x), x).item() == 0.0
    assert ops.kl_diag_gauss(t(np.zeros((3, 10))), t(np.zeros((3, 10)))).item() == 0.0


def test_losses_reject_nan():
    with pytest.raises(ValidationError):
        ops.bce(t([[np.nan]]), np.array([[1.0]], np.float32))
    with pytest.raises(ValidationError):
        ops.mse(t([[np.nan]]), np.array([[1.0]], np.float32))
    with pytest.raises(ValidationError):
        ops.kl_diag_gauss(t(np.full((2, 3), np.nan)), t(np.zeros((2, 3))))


def test_kl_nonnegative_property():
    rng = np.random.default_rng(4)
    for _ in range(50):
        mu = t(rng.normal(0, 2, (5, 10)))
        logvar = t(rng.normal(0, 1, (5, 10)))
        assert ops.kl_diag_gauss(mu, logvar).item() >= 0.0


def test_reparameterization_equals_mu_at_zero_noise():
    rng = np.random.default_rng(6)
    mu = t(rng.normal(0, 1, (4, 10)))
    logvar = t(rng.normal(0, 1, (4, 10)))
    z = mu + nn.exp(logvar * 0.5) * t(np.zeros((4, 10)))
    assert np.allclose(z.data, mu.data)


def test_no_grad_skips_graph():
    x = t(np.ones((2, 2)), grad=True)
    with nn.no_grad():
        y = ops.relu(x)
    assert y._backward_fn is None and not y.requires_grad


def test_backward_requires_scalar():
    x = t(np.ones((2, 2)), grad=True)
    y = ops.relu(x)
    with pytest.raises(ShapeError):
        y.backward()


def test_backward_accumulates_through_shared_node():
    x = t([2.0], grad=True)
    y = x * x  # dy/dx = 2x = 4
    y.backward()
    assert np.allclose(x.grad, [4.0])
