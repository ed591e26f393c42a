import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from ganaug import nn
from ganaug.errors import ChannelMismatch, OutputTooSmall, ShapeMismatch, SingleElementBatch
from ganaug.losses import cross_entropy
from ganaug.nn import NetworkSpec, functional as F, init_params
from ganaug.tensor import Rng, Tape, Tensor, backward, grad_check, precision
from oracles import conv2d_naive, conv_transpose2d_scatter


def t(arr, grad=False):
    return Tensor(np.asarray(arr, dtype=np.float32), requires_grad=grad)


def test_conv_sum_kernel():
    x = Rng(0).normal((1, 1, 3, 3))
    out = F.conv2d(t(x), t(np.ones((1, 1, 3, 3))))
    assert out.shape == (1, 1, 1, 1)
    assert abs(out.item() - x.sum()) < 1e-5


def test_conv_dcgan_downsample_size():
    out = F.conv2d(t(np.zeros((1, 2, 64, 64))), t(np.zeros((3, 2, 4, 4))), stride=2, padding=1)
    assert out.shape == (1, 3, 32, 32)


def test_conv_matches_naive_loop():
    rng = Rng(1)
    x, w, b = rng.normal((2, 3, 8, 8)), rng.normal((4, 3, 3, 3)), rng.normal((4,))
    out = F.conv2d(t(x), t(w), t(b), stride=1, padding=1).data
    assert np.max(np.abs(out - conv2d_naive(x, w, b, 1, 1))) < 1e-5


def test_conv_errors():
    with pytest.raises(ChannelMismatch):
        F.conv2d(t(np.zeros((1, 2, 5, 5))), t(np.zeros((1, 3, 3, 3))))
    with pytest.raises(OutputTooSmall):
        F.conv2d(t(np.zeros((1, 1, 2, 2))), t(np.zeros((1, 1, 3, 3))))
    with pytest.raises(ChannelMismatch):
        F.conv_transpose2d(t(np.zeros((1, 2, 2, 2))), t(np.zeros((3, 1, 4, 4))))


def test_conv_transpose_single_position():
    w = Rng(2).normal((1, 1, 4, 4))
    out = F.conv_transpose2d(t([[[[3.0]]]]), t(w), stride=1, padding=0)
    assert out.shape == (1, 1, 4, 4)
    assert np.allclose(out.data[0, 0], 3.0 * w[0, 0], atol=1e-6)


def test_conv_transpose_upsample_size():
    out = F.conv_transpose2d(t(np.zeros((1, 2, 32, 32))), t(np.zeros((2, 3, 4, 4))), stride=2, padding=1)
    assert out.shape == (1, 3, 64, 64)


def test_conv_transpose_matches_scatter():
    rng = Rng(3)
    x, w, b = rng.normal((2, 3, 5, 4)), rng.normal((3, 2, 4, 4)), rng.normal((2,))
    out = F.conv_transpose2d(t(x), t(w), t(b), stride=2, padding=1).data
    assert np.max(np.abs(out - conv_transpose2d_scatter(x, w, b, 2, 1))) < 1e-5


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 2), st.integers(1, 3), st.integers(1, 3), st.integers(1, 4),
       st.integers(1, 3), st.integers(0, 2), st.integers(1, 3), st.integers(0, 2**31 - 1))
def test_adjointness(n, ci, co, k, s, p, m, seed):
    # choose H so that conv then transposed conv returns to H exactly
    h = s * m + k - 2 * p
    assume(p < k and h >= 1)
    rng = Rng(seed)
    x = rng.normal((n, ci, h, h))
    w = rng.normal((co, ci, k, k))
    with precision(np.float64):
        cx = F.conv2d(Tensor(x), Tensor(w), stride=s, padding=p)
        y = rng.normal(cx.shape)
        ty = F.conv_transpose2d(Tensor(y), Tensor(w), stride=s, padding=p)
    assert ty.shape == x.shape
    lhs = float(np.sum(cx.data * y))
    rhs = float(np.sum(x * ty.data))
    assert abs(lhs - rhs) <= 1e-4 * max(1.0, abs(lhs))


def test_batchnorm_train_statistics():
    x = Rng(4).normal((8, 3, 4, 4), 5.0, 3.0)
    rm, rv = np.zeros(3, np.float32), np.ones(3, np.float32)
    y = F.batch_norm(t(x), t(np.ones(3)), t(np.zeros(3)), rm, rv, training=True).data
    assert np.allclose(y.mean(axis=(0, 2, 3)), 0, atol=1e-5)
    assert np.allclose(y.var(axis=(0, 2, 3)), 1, atol=1e-3)
    assert np.allclose(rm, 0.1 * x.mean(axis=(0, 2, 3)), atol=1e-5)
    m = 8 * 16
    assert np.allclose(rv, 0.9 + 0.1 * x.var(axis=(0, 2, 3)) * m / (m - 1), atol=1e-4)
    assert np.all(rv >= 0)


def test_batchnorm_affine():
    x = Rng(5).normal((16, 2, 3, 3))
    x = (x - x.mean(axis=(0, 2, 3), keepdims=True)) / x.std(axis=(0, 2, 3), keepdims=True)
    y = F.batch_norm(t(x), t([2.0, 2.0]), t([3.0, 3.0]), np.zeros(2, np.float32),
                     np.ones(2, np.float32), training=True).data
    assert np.allclose(y.mean(axis=(0, 2, 3)), 3, atol=1e-4)
    assert np.allclose(y.std(axis=(0, 2, 3)), 2, atol=1e-3)


def test_batchnorm_eval_is_pure():
    x = Rng(6).normal((4, 2, 3, 3))
    rm, rv = np.array([0.5, -1.0], np.float32), np.array([2.0, 0.5], np.float32)
    before = (rm.copy(), rv.copy())
    outs = [F.batch_norm(t(x), t([1.0, 1.0]), t([0.0, 0.0]), rm, rv, training=False).data
            for _ in range(3)]
    assert np.array_equal(rm, before[0]) and np.array_equal(rv, before[1])
    assert all(np.array_equal(outs[0], o) for o in outs)
    expected = (x - rm[None, :, None, None]) / np.sqrt(rv[None, :, None, None] + 1e-5)
    assert np.allclose(outs[0], expected, atol=1e-5)


def test_batchnorm_single_element_batch():
    with pytest.raises(SingleElementBatch):
        F.batch_norm(t(np.zeros((1, 2, 1, 1))), t([1.0, 1.0]), t([0.0, 0.0]),
                     np.zeros(2, np.float32), np.ones(2, np.float32), training=True)


def test_maxpool_examples():
    assert F.max_pool2d(t([[[[1.0, 2.0], [3.0, 4.0]]]]), 2).item() == 4.0
    x = t(np.full((1, 1, 4, 4), 7.0), grad=True)
    with Tape() as tape:
        backward(tape, F.max_pool2d(x, 2, 2).sum())
    expected = np.zeros((4, 4))
    expected[::2, ::2] = 1.0
    assert np.array_equal(x.grad[0, 0], expected)
    with pytest.raises(OutputTooSmall):
        F.max_pool2d(t(np.zeros((1, 1, 1, 1))), 2)


def test_maxpool_vgg_chain():
    x = t(np.zeros((1, 1, 224, 224)))
    sizes = []
    for _ in range(5):
        x = F.max_pool2d(x, 2, 2)
        sizes.append(x.shape[2])
    assert sizes == [112, 56, 28, 14, 7]


def test_dense_examples():
    x = Rng(7).normal((3, 4))
    assert np.array_equal(F.dense(t(x), t(np.eye(4)), t(np.zeros(4))).data, x.astype(np.float32))
    assert F.dense(t([[2.0, 5.0]]), t([[1.0, 1.0]]), t([1.0])).item() == 8.0
    with pytest.raises(ShapeMismatch):
        F.dense(t(np.zeros((1, 3))), t(np.zeros((2, 4))))


def test_softmax_examples():
    assert np.allclose(F.softmax(t([[0.0, 0.0, 0.0]])).data, 1 / 3, atol=1e-7)
    big = F.softmax(t([[1000.0, 0.0]])).data
    assert np.all(np.isfinite(big)) and np.allclose(big, [[1.0, 0.0]])
    x = Rng(8).normal((20, 5))
    p = F.softmax(t(x)).data
    assert np.all(np.abs(p.sum(axis=1) - 1) < 1e-6)
    assert np.array_equal(p.argmax(axis=1), x.argmax(axis=1))


def test_layer_grad_checks():
    rng = Rng(9)
    with precision(np.float64):
        w = Tensor(rng.normal((3, 2, 3, 3)))
        wt = Tensor(rng.normal((2, 3, 4, 4)))
        b = Tensor(rng.normal((3,)))
        x_conv = Tensor(rng.normal((1, 2, 4, 4)))
        probe5 = Tensor(rng.normal((2, 3, 5, 5)))
        probe2 = Tensor(rng.normal((2, 3, 2, 2)))
        probe_pool = Tensor(rng.normal((1, 2, 2, 2)))
        wd = Tensor(rng.normal((2, 4)))
        probe_dense = Tensor(rng.normal((3, 2)))
        probe_sm = Tensor(rng.normal((3, 4)))
        gamma, beta = Tensor([1.5, 0.5, 1.0]), Tensor([0.1, 0.0, -0.2])

        def bn(x):
            y = F.batch_norm(x, gamma, beta, np.zeros(3), np.ones(3), training=True)
            return (y * probe2).sum()

        checks = {
            "conv2d": grad_check(lambda x: (F.conv2d(x, w, b, 1, 1) * probe5).sum(),
                                 Tensor(rng.normal((2, 2, 5, 5))), 1e-6),
            "conv2d weight": grad_check(lambda ww: F.conv2d(x_conv, ww, None, 1, 0).sum(),
                                        Tensor(w.data), 1e-6),
            "conv_transpose2d": grad_check(lambda x: F.conv_transpose2d(x, wt, None, 2, 1).mean(),
                                           Tensor(rng.normal((1, 2, 3, 3))), 1e-6),
            "batchnorm": grad_check(bn, Tensor(rng.normal((2, 3, 2, 2))), 1e-6),
            "maxpool": grad_check(lambda x: (F.max_pool2d(x, 2) * probe_pool).sum(),
                                  Tensor(rng.permutation(32).reshape(1, 2, 4, 4).astype(np.float64)),
                                  1e-6),
            "dense": grad_check(lambda x: (F.dense(x, wd, Tensor(np.zeros(2))) * probe_dense).sum(),
                                Tensor(rng.normal((3, 4))), 1e-6),
            "softmax": grad_check(lambda x: (F.softmax(x) * probe_sm).sum(),
                                  Tensor(rng.normal((3, 4))), 1e-6),
        }
    assert max(checks.values()) < 5e-3, checks


def test_composite_net_grad_check():
    spec = NetworkSpec((2, 6, 6), [nn.conv(2, 3, 3, 1, 1), nn.act("relu"), nn.maxpool(2, 2),
                                   nn.flatten_layer(), nn.dense_layer(27, 3)])
    labels = [0, 2, 1, 2]
    with precision(np.float64):
        init_params(spec, Rng(10), "he")
        x = Rng(11).normal((4, 2, 6, 6))
        assert grad_check(lambda w: _ce_with(spec, "0.weight", w, x, labels), spec.params["0.weight"],
                          1e-6) < 5e-3


def _ce_with(spec, key, w, x, labels):
    spec.params[key] = w
    return cross_entropy(spec(Tensor(x)), labels)


def test_shape_chain_rejected_before_allocation():
    with pytest.raises(ShapeMismatch):
        NetworkSpec((3, 8, 8), [nn.conv(3, 4, 3, 1, 1), nn.conv(5, 4, 3, 1, 1)])
    with pytest.raises(ShapeMismatch):
        NetworkSpec((3, 8, 8), [nn.flatten_layer(), nn.dense_layer(100, 2)])


def test_init_params_properties():
    spec = NetworkSpec((100, 1, 1), [nn.conv_t(100, 100, 4, 1, 0), nn.batchnorm(100),
                                     nn.act("relu"), nn.conv_t(100, 3, 4, 2, 1, bias=True)])
    a = init_params(spec, Rng(0), "dcgan")
    state_a = {k: v.tobytes() for k, v in a.state().items()}
    b = init_params(NetworkSpec(spec.input_shape, spec.layers), Rng(0), "dcgan")
    assert state_a == {k: v.tobytes() for k, v in b.state().items()}
    w = a.params["0.weight"].data.astype(np.float64)
    assert w.size >= 10_000
    assert abs(w.mean()) < 3 * 0.02 / np.sqrt(w.size)
    assert abs(w.std() - 0.02) < 0.001
    assert np.all(a.params["3.bias"].data == 0)
    assert np.all(a.params["1.beta"].data == 0)
    assert abs(a.params["1.gamma"].data.mean() - 1) < 0.01


def test_he_init_scale():
    spec = init_params(NetworkSpec((200,), [nn.dense_layer(200, 300)]), Rng(1), "he")
    assert abs(spec.params["0.weight"].data.std() - np.sqrt(2 / 200)) < 0.005
