"""Kernel-level checks: finite-difference gradients for every op plus the
documented edge cases."""

import numpy as np
import pytest

from kpcast import nnkernel as nn
from kpcast.errors import ConfigError, DimensionError


def test_dense_identity_passthrough():
    x = np.array([[1.0, 2.0], [3.0, 4.0]])
    out = nn.dense(x, np.eye(2), np.zeros(2))
    assert np.array_equal(out.data, x)


def test_dense_scalar_case():
    out = nn.dense(np.array([[2.0]]), np.array([[3.0]]), np.array([1.0]))
    assert out.data[0, 0] == 7.0


def test_dense_shape_mismatch():
    with pytest.raises(DimensionError):
        nn.dense(np.ones((2, 3)), np.ones((4, 2)), np.zeros(2))


def test_dense_gradients():
    rng = np.random.default_rng(7)
    x, w, b = rng.standard_normal((4, 3)), rng.standard_normal((3, 2)), rng.standard_normal(2)
    err = nn.grad_check(
        lambda ts: nn.tsum(nn.mul(nn.dense(ts[0], ts[1], ts[2]), ts[3])),
        [x, w, b, rng.standard_normal((4, 2))],
    )
    assert err < 1e-6


def test_softmax_uniform_and_overflow():
    assert np.allclose(nn.softmax(np.array([0.0, 0.0])).data, [0.5, 0.5])
    big = nn.softmax(np.array([1000.0, 1000.0])).data
    assert np.all(np.isfinite(big)) and np.allclose(big, [0.5, 0.5])


def test_softmax_closed_form():
    out = nn.softmax(np.array([1.0, 2.0, 3.0])).data
    e = np.exp([1.0, 2.0, 3.0])
    assert np.allclose(out, e / e.sum(), atol=1e-12)
    assert np.allclose(out, [0.09003057, 0.24472847, 0.66524096], atol=1e-7)


def test_softmax_shift_invariance_and_row_sums():
    rng = np.random.default_rng(3)
    x = rng.standard_normal((5, 7))
    a = nn.softmax(x, axis=1).data
    b = nn.softmax(x + 123.456, axis=1).data
    assert np.allclose(a, b, atol=1e-12)
    assert np.allclose(a.sum(axis=1), 1.0, atol=1e-12)


def test_softmax_gradients():
    rng = np.random.default_rng(11)
    x = rng.standard_normal((3, 5))
    c = rng.standard_normal((3, 5))
    err = nn.grad_check(lambda ts: nn.tsum(nn.mul(nn.softmax(ts[0], axis=1), ts[1])), [x, c])
    assert err < 1e-6


def test_attention_single_token():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((1, 4))
    params = {k: rng.standard_normal((4, 4)) for k in ("Wq", "Wk", "Wv", "Wo")}
    out = nn.multi_head_attention(x, params, heads=2)
    expected = x @ params["Wv"] @ params["Wo"]
    assert np.allclose(out.data, expected, atol=1e-12)


def test_attention_identical_tokens_identical_outputs():
    rng = np.random.default_rng(1)
    token = rng.standard_normal(6)
    x = np.tile(token, (5, 1))
    params = {k: rng.standard_normal((6, 6)) for k in ("Wq", "Wk", "Wv", "Wo")}
    out = nn.multi_head_attention(x, params, heads=3).data
    assert np.allclose(out, out[0], atol=1e-12)


def test_attention_indivisible_heads():
    with pytest.raises(ConfigError):
        nn.multi_head_attention(np.ones((2, 5)), {k: np.eye(5) for k in ("Wq", "Wk", "Wv", "Wo")}, 2)


def test_attention_gradients():
    rng = np.random.default_rng(5)
    x = rng.standard_normal((3, 4))
    mats = [rng.standard_normal((4, 4)) for _ in range(4)]
    probe = rng.standard_normal((3, 4))

    def f(ts):
        params = dict(zip(("Wq", "Wk", "Wv", "Wo"), ts[1:5]))
        return nn.tsum(nn.mul(nn.multi_head_attention(ts[0], params, 2), ts[5]))

    err = nn.grad_check(f, [x] + mats + [probe])
    assert err < 1e-5


def test_conv_zero_kernels_identity():
    rng = np.random.default_rng(2)
    x = rng.standard_normal((6, 3))
    out = nn.conv1d_residual(x, np.zeros((3, 3, 3)), np.zeros(3))
    assert np.array_equal(out.data, x)


def test_conv_center_tap_doubles():
    x = np.random.default_rng(4).standard_normal((5, 1))
    kernels = np.zeros((3, 1, 1))
    kernels[1, 0, 0] = 1.0
    out = nn.conv1d_residual(x, kernels, np.zeros(1))
    assert np.allclose(out.data, 2.0 * x, atol=1e-12)


def test_conv_gradients():
    rng = np.random.default_rng(6)
    x = rng.standard_normal((5, 2))
    kernels = rng.standard_normal((3, 2, 2))
    bias = rng.standard_normal(2)
    probe = rng.standard_normal((5, 2))
    err = nn.grad_check(
        lambda ts: nn.tsum(nn.mul(nn.conv1d_residual(ts[0], ts[1], ts[2]), ts[3])),
        [x, kernels, bias, probe],
    )
    assert err < 1e-5


def test_pool_constant_and_pair():
    const = nn.global_avg_pool(np.full((4, 2), 3.5))
    assert np.allclose(const.data, [3.5, 3.5], atol=1e-15)
    assert np.allclose(nn.global_avg_pool(np.array([[1.0], [3.0]])).data, [2.0])


def test_pool_gradient_is_uniform():
    x = np.random.default_rng(8).standard_normal((4, 3))
    node = nn.Tensor(x)
    nn.backward(nn.tsum(nn.global_avg_pool(node)))
    assert np.allclose(node.grad, np.full((4, 3), 0.25), atol=1e-12)
    err = nn.grad_check(lambda ts: nn.tsum(nn.global_avg_pool(ts[0])), [x])
    assert err < 1e-7


def test_dropout_identity_cases():
    x = nn.Tensor(np.random.default_rng(9).standard_normal((3, 3)))
    assert nn.dropout(x, 0.0, "train", np.random.default_rng(0)) is x
    assert nn.dropout(x, 0.5, "infer") is x


def test_dropout_preserves_mean():
    rng = np.random.default_rng(10)
    x = np.full((100_000, 8), 2.0)
    out = nn.dropout(nn.Tensor(x), 0.5, "train", rng).data
    assert np.allclose(out.mean(axis=0), 2.0, rtol=0.01)


def test_dropout_gradient_with_fixed_mask():
    x = np.random.default_rng(12).standard_normal((4, 4))
    err = nn.grad_check(
        lambda ts: nn.tsum(nn.dropout(ts[0], 0.5, "train", np.random.default_rng(99))), [x]
    )
    assert err < 1e-7


def test_l2_penalty_values_and_gradient():
    assert nn.l2_penalty([np.zeros((3, 3))], 0.5).item() == 0.0
    assert nn.l2_penalty([np.array([[2.0]])], 0.5).item() == 2.0
    w = np.random.default_rng(13).standard_normal((3, 2))
    node = nn.Tensor(w)
    nn.backward(nn.l2_penalty([node], 0.7))
    assert np.allclose(node.grad, 2.0 * 0.7 * w, atol=1e-12)
    assert nn.grad_check(lambda ts: nn.l2_penalty(ts, 0.7), [w]) < 1e-6


def test_elementwise_op_gradients():
    rng = np.random.default_rng(14)
    x = rng.standard_normal((4, 5))
    checks = [
        lambda ts: nn.tsum(nn.tabs(ts[0])),
        lambda ts: nn.tsum(nn.cumsum(ts[0], axis=1)),
        lambda ts: nn.tsum(nn.mul(nn.cumsum(ts[0], axis=0), ts[0])),
        lambda ts: nn.tsum(nn.sigmoid(ts[0])),
        lambda ts: nn.tsum(nn.relu(ts[0])),
        lambda ts: nn.tsum(nn.tlog(nn.sigmoid(ts[0]))),
        lambda ts: nn.tmean(nn.mul(ts[0], ts[0])),
    ]
    for f in checks:
        assert nn.grad_check(f, [x]) < 1e-6


def test_gather_and_concat_gradients():
    rng = np.random.default_rng(15)
    a, b = rng.standard_normal((3, 4)), rng.standard_normal((2, 4))
    idx = np.array([0, 3, 1])
    assert nn.grad_check(lambda ts: nn.tsum(nn.gather_rows(ts[0], idx)), [a]) < 1e-7
    assert (
        nn.grad_check(
            lambda ts: nn.tsum(nn.mul(nn.concat(ts, axis=0), nn.concat(ts, axis=0))), [a, b]
        )
        < 1e-6
    )


def test_checkpoint_roundtrip(tmp_path):
    rng = np.random.default_rng(16)
    params = {"a.W": rng.standard_normal((3, 4)), "a.b": rng.standard_normal(4),
              "scalar": np.array(2.5)}
    path = tmp_path / "test.kpck"
    nn.save_checkpoint(params, path)
    loaded = nn.load_checkpoint(path)
    assert set(loaded) == set(params)
    for k in params:
        assert np.array_equal(loaded[k], params[k])
