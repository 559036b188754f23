import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from bwex.errors import ConfigError, ShapeError, UsageError
from bwex.nn import functional as F
from bwex.nn.checkpoint import load_checkpoint, read_checkpoint, save_checkpoint
from bwex.nn.gradcheck import grad_check
from bwex.nn.layers import BatchNorm1d, Conv1d, Linear
from bwex.nn.optim import adam_step, clip_grad_norm
from bwex.nn.tensor import ParamStore, Tensor

shapes3 = st.tuples(st.integers(1, 3), st.integers(1, 4), st.integers(1, 9))


def naive_conv(x, w, b, stride):
    n, c_in, d = x.shape
    c_out, _, k = w.shape
    pad = (k - 1) // 2
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad)))
    l_out = -(-d // stride)
    out = np.zeros((n, c_out, l_out))
    for i in range(n):
        for o in range(c_out):
            for t in range(l_out):
                out[i, o, t] = np.sum(xp[i, :, t * stride:t * stride + k] * w[o]) + b[o]
    return out


def test_conv_examples():
    x = np.array([[[1.0, 2.0, 3.0]]])
    out, _ = F.conv1d_forward(x, np.array([[[1.0, 0.0, -1.0]]]), np.zeros(1))
    np.testing.assert_array_equal(out, [[[-2.0, -2.0, 2.0]]])
    ident, _ = F.conv1d_forward(x, np.array([[[0.0, 1.0, 0.0]]]), np.zeros(1))
    np.testing.assert_array_equal(ident, x)
    out, _ = F.conv1d_forward(np.ones((1, 1, 6)), np.ones((1, 1, 3)), np.zeros(1), stride=2)
    assert out.shape == (1, 1, 3)


@given(shapes3, st.integers(1, 4), st.sampled_from([1, 3, 5, 9]), st.sampled_from([1, 2]), st.integers(0, 2**31))
def test_conv_matches_sliding_window_oracle(shape, c_out, k, stride, seed):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(shape)
    w = rng.standard_normal((c_out, shape[1], k))
    b = rng.standard_normal(c_out)
    out, _ = F.conv1d_forward(x, w, b, stride)
    np.testing.assert_allclose(out, naive_conv(x, w, b, stride), atol=1e-10)


def test_conv_wide_path_matches_oracle(rng):
    x = rng.standard_normal((2, 40, 33))
    w = rng.standard_normal((5, 40, 9))
    b = rng.standard_normal(5)
    for stride in (1, 2):
        out, _ = F.conv1d_forward(x, w, b, stride)
        np.testing.assert_allclose(out, naive_conv(x, w, b, stride), atol=1e-9)


def test_conv_backward_scalar_and_zero():
    x, w = np.array([[[2.5]]]), np.array([[[-1.5]]])
    out, cache = F.conv1d_forward(x, w, np.zeros(1))
    dx, dw, db = F.conv1d_backward(np.ones_like(out), cache)
    assert dx.item() == -1.5 and dw.item() == 2.5 and db.item() == 1.0
    out, cache = F.conv1d_forward(np.ones((2, 3, 5)), np.ones((2, 3, 3)), np.ones(2))
    for g in F.conv1d_backward(np.zeros_like(out), cache):
        assert not np.any(g)


def test_conv_shape_errors():
    with pytest.raises(ShapeError, match="channel"):
        F.conv1d_forward(np.ones((1, 2, 5)), np.ones((1, 3, 3)), np.zeros(1))
    with pytest.raises(ShapeError, match="bias"):
        F.conv1d_forward(np.ones((1, 3, 5)), np.ones((1, 3, 3)), np.zeros(2))
    store = ParamStore()
    conv = Conv1d(store, "c", 1, 1, 3)
    with pytest.raises(UsageError):
        conv.backward(np.ones((1, 1, 3)))


def test_batchnorm_train_statistics(rng):
    x = 3.0 + 2.0 * rng.standard_normal((4, 3, 50))
    out, _ = F.batchnorm_forward(x, np.ones(3), np.zeros(3))
    np.testing.assert_allclose(out.mean(axis=(0, 2)), 0, atol=1e-6)
    np.testing.assert_allclose(out.var(axis=(0, 2)), 1, atol=1e-5)
    const, _ = F.batchnorm_forward(np.full((2, 1, 4), 7.0), np.array([2.0]), np.array([0.3]))
    np.testing.assert_allclose(const, 0.3)


def test_batchnorm_running_stats_and_infer_guard(rng):
    store = ParamStore()
    bn = BatchNorm1d(store, "bn", 2, dtype=np.float64)
    bn.eval()
    with pytest.raises(UsageError):
        bn.forward(np.ones((1, 2, 3)))
    bn.train()
    x1, x2 = rng.standard_normal((2, 2, 8)), rng.standard_normal((2, 2, 8))
    bn.forward(x1)
    np.testing.assert_allclose(store.buffers["bn.running_mean"], x1.mean(axis=(0, 2)))
    bn.forward(x2)
    expect = 0.99 * x1.mean(axis=(0, 2)) + 0.01 * x2.mean(axis=(0, 2))
    np.testing.assert_allclose(store.buffers["bn.running_mean"], expect)
    bn.eval()
    out = bn.forward(x1)
    rm, rv = store.buffers["bn.running_mean"], store.buffers["bn.running_var"]
    np.testing.assert_allclose(out, (x1 - rm[None, :, None]) / np.sqrt(rv[None, :, None] + 1e-5))


def test_relu_examples():
    out, mask = F.relu_forward(np.array([-1.0, 0.0, 2.0]))
    np.testing.assert_array_equal(out, [0, 0, 2])
    np.testing.assert_array_equal(F.relu_backward(np.array([5.0, 5.0, 5.0]), mask), [0, 0, 5])


def test_subpixel_example_and_errors():
    x = np.array([[[1, 2, 3], [4, 5, 6]]])
    np.testing.assert_array_equal(F.subpixel_shuffle_1d(x), [[[1, 4, 2, 5, 3, 6]]])
    with pytest.raises(ShapeError):
        F.subpixel_shuffle_1d(np.ones((1, 3, 2)))


@given(st.tuples(st.integers(1, 3), st.integers(1, 4), st.integers(1, 7)), st.integers(0, 2**31))
def test_subpixel_is_bijection(shape, seed):
    n, half, d = shape
    x = np.random.default_rng(seed).standard_normal((n, 2 * half, d))
    y = F.subpixel_shuffle_1d(x)
    assert y.shape == (n, half, 2 * d)
    np.testing.assert_array_equal(F.subpixel_unshuffle_1d(y), x)
    np.testing.assert_array_equal(F.subpixel_shuffle_1d(F.subpixel_unshuffle_1d(y)), y)
    np.testing.assert_array_equal(np.sort(y, axis=None), np.sort(x, axis=None))
    for c in range(half):
        np.testing.assert_array_equal(y[:, c, 0::2], x[:, 2 * c])
        np.testing.assert_array_equal(y[:, c, 1::2], x[:, 2 * c + 1])


def test_concat_examples():
    a, b = np.array([[[1.0, 2.0]]]), np.array([[[3.0, 4.0]]])
    np.testing.assert_array_equal(F.concat_channels(a, b), [[[1, 2], [3, 4]]])
    np.testing.assert_array_equal(F.concat_channels(a, np.zeros((1, 0, 2))), a)
    ga, gb = F.split_channels(F.concat_channels(a, b), 1)
    np.testing.assert_array_equal(ga, a)
    np.testing.assert_array_equal(gb, b)
    with pytest.raises(ShapeError, match="length"):
        F.concat_channels(a, np.ones((1, 1, 3)))


def test_mse_examples():
    pred, target = np.array([[[3.0, 4.0]]]), np.zeros((1, 1, 2))
    assert F.mse_loss(pred, target)[0] == 12.5
    assert F.mse_loss(pred, target, "paper_eq1")[0] == 5.0
    for mode in ("mean_sq", "paper_eq1"):
        assert F.mse_loss(target, target, mode)[0] == 0.0
    with pytest.raises(ShapeError):
        F.mse_loss(pred, np.zeros((1, 1, 3)))


def test_adam_first_step_value():
    store = ParamStore()
    t = store.add("theta", np.zeros(1))
    t.grad = np.ones(1)
    adam_step(store, lr=0.1)
    assert t.data[0] == pytest.approx(-0.1 / (1 + 1e-8), abs=1e-15)
    assert t.grad is None and store.step == 1


def test_adam_zero_grad_and_independence():
    store = ParamStore()
    a, b, c = store.add("a", np.full(3, 2.0)), store.add("b", np.full(3, 2.0)), store.add("c", np.full(3, 5.0))
    for _ in range(5):
        a.grad, b.grad, c.grad = np.full(3, 0.3), np.full(3, 0.3), np.zeros(3)
        adam_step(store, lr=0.01)
    np.testing.assert_array_equal(a.data, b.data)
    np.testing.assert_array_equal(c.data, 5.0)


def test_adam_missing_grad_names_parameter():
    store = ParamStore()
    store.add("w", np.zeros(2)).grad = np.zeros(2)
    store.add("lonely", np.zeros(2))
    with pytest.raises(UsageError, match="lonely"):
        adam_step(store, 0.1)


def test_adam_decreases_least_squares(rng):
    a = rng.standard_normal((40, 3))
    y = a @ np.array([1.0, -2.0, 0.5])
    store = ParamStore()
    lin = Linear(store, "lin", 3, 1, rng=rng, dtype=np.float64)
    target = y[:, None]
    before, grad = F.mse_loss(lin.forward(a), target)
    lin.backward(grad)
    adam_step(store, 1e-3)
    after, _ = F.mse_loss(lin.forward(a), target)
    assert after < before


def test_clip_grad_norm():
    store = ParamStore()
    store.add("a", np.zeros(2)).grad = np.array([3.0, 4.0])
    assert clip_grad_norm(store, 1.0) == pytest.approx(5.0)
    np.testing.assert_allclose(store["a"].grad, [0.6, 0.8])


def test_tensor_and_store_invariants():
    with pytest.raises(ShapeError):
        Tensor(np.zeros((1, 1, 1, 1)))
    with pytest.raises(ShapeError):
        Tensor(np.zeros((1, 0, 2)))
    t = Tensor(np.zeros(3))
    with pytest.raises(ShapeError):
        t.accumulate(np.zeros(2))
    store = ParamStore()
    store.add("x", np.zeros(1))
    with pytest.raises(ConfigError):
        store.add("x", np.zeros(1))


def test_checkpoint_round_trip(tmp_path, rng):
    def build():
        store = ParamStore()
        Conv1d(store, "c", 2, 3, 5, rng=np.random.default_rng(0))
        BatchNorm1d(store, "bn", 3)
        return store

    src = build()
    for _, t in src:
        t.data[...] = rng.standard_normal(t.shape)
        t.grad = rng.standard_normal(t.shape).astype(np.float32)
    adam_step(src, 1e-3)
    src.buffers["bn.running_mean"][...] = [1, 2, 3]
    save_checkpoint(src, tmp_path / "x.bwex")
    assert (tmp_path / "x.bwex").read_bytes()[:4] == b"BWEX"
    dst = build()
    load_checkpoint(dst, tmp_path / "x.bwex")
    for k, t in src:
        np.testing.assert_array_equal(dst[k].data, t.data)
        np.testing.assert_array_equal(dst.m[k], src.m[k])
        np.testing.assert_array_equal(dst.v[k], src.v[k])
    np.testing.assert_array_equal(dst.buffers["bn.running_mean"], [1, 2, 3])
    assert dst.step == 1
    model, state = read_checkpoint(tmp_path / "x.bwex")
    assert list(model)[:2] == ["c.weight", "c.bias"] and "adam.step" in state

    other = ParamStore()
    Conv1d(other, "c", 2, 4, 5)
    BatchNorm1d(other, "bn", 4)
    with pytest.raises(ShapeError):
        load_checkpoint(other, tmp_path / "x.bwex")


def test_gradcheck_linear_is_exact():
    store = ParamStore()
    conv = Conv1d(store, "c", 2, 3, 1, rng=np.random.default_rng(0), dtype=np.float64)
    report = grad_check(conv, (2, 2, 5), dict(store.params), name="k1")
    assert report.max_error < 1e-9


def test_gradcheck_catches_corrupted_backward():
    class BrokenConv(Conv1d):
        def backward(self, grad_out):
            dx, dw, db = F.conv1d_backward(grad_out, self._cache)
            self.weight.accumulate(np.roll(dw, 1, axis=2))  # off-by-one tap
            self.bias.accumulate(db)
            return dx

    store = ParamStore()
    conv = BrokenConv(store, "c", 2, 2, 3, rng=np.random.default_rng(1), dtype=np.float64)
    report = grad_check(conv, (1, 2, 6), dict(store.params), name="broken")
    assert report.errors["c.weight"] > 1e-2 and not report.passed
