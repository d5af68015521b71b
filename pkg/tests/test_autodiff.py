"""Tensor-core tests: forward semantics, gradient oracles, error contracts."""

import numpy as np
import pytest

from dualdomain import autodiff as ad
from dualdomain.autodiff import (
    NonFiniteInputError,
    ShapeMismatchError,
    Tape,
    TapeConsumedError,
    Tensor,
    backward,
)


def brute_force_conv2d(x, w, b=None, stride=1, padding=0):
    """Oracle: plain-loop 2-D convolution with zero padding."""
    c, h, wd = x.shape
    o, _, kh, kw = w.shape
    xp = np.pad(x, ((0, 0), (padding, padding), (padding, padding)))
    ho = (xp.shape[1] - kh) // stride + 1
    wo = (xp.shape[2] - kw) // stride + 1
    out = np.zeros((o, ho, wo))
    for oc in range(o):
        for i in range(ho):
            for j in range(wo):
                acc = 0.0
                for ic in range(c):
                    for u in range(kh):
                        for v in range(kw):
                            acc += w[oc, ic, u, v] * xp[ic, i * stride + u, j * stride + v]
                out[oc, i, j] = acc + (b[oc] if b is not None else 0.0)
    return out


def finite_diff_grad(fn, x0, h=1e-6):
    """Central finite differences of a scalar function of a flat array."""
    x0 = x0.ravel().copy()
    g = np.zeros_like(x0)
    for k in range(x0.size):
        xp = x0.copy()
        xm = x0.copy()
        xp[k] += h
        xm[k] -= h
        g[k] = (fn(xp) - fn(xm)) / (2.0 * h)
    return g


def assert_grad_close(analytic, numeric, rtol=1e-4):
    scale = np.maximum(np.abs(numeric), 1e-3)
    assert np.all(np.abs(analytic.ravel() - numeric.ravel()) <= rtol * scale.ravel())


# -- forward semantics -------------------------------------------------------


def test_conv2d_identity_kernel():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(2, 5, 5))
    w = np.zeros((2, 2, 1, 1))
    w[0, 0, 0, 0] = 1.0
    w[1, 1, 0, 0] = 1.0
    out = ad.conv2d(Tensor(x), Tensor(w), stride=1, padding=0)
    np.testing.assert_array_equal(out.data, x)


def test_conv2d_box_filter_hand_values():
    # 3x3 all-ones image, 3x3 kernel of 1/9 each, zero pad 1:
    # centre sees all nine ones, a corner sees four.
    x = np.ones((1, 3, 3))
    w = np.full((1, 1, 3, 3), 1.0 / 9.0)
    out = ad.conv2d(Tensor(x), Tensor(w), stride=1, padding=1).data
    assert out[0, 1, 1] == pytest.approx(1.0, abs=1e-15)
    assert out[0, 0, 0] == pytest.approx(4.0 / 9.0, abs=1e-15)
    oracle = brute_force_conv2d(x, w, stride=1, padding=1)
    np.testing.assert_allclose(out, oracle, atol=1e-14)


@pytest.mark.parametrize("stride,padding", [(1, 0), (1, 1), (2, 1), (2, 0)])
def test_conv2d_matches_brute_force(stride, padding):
    rng = np.random.default_rng(7)
    x = rng.normal(size=(3, 8, 8))
    w = rng.normal(size=(4, 3, 3, 3))
    b = rng.normal(size=4)
    out = ad.conv2d(Tensor(x), Tensor(w), Tensor(b), stride=stride, padding=padding)
    oracle = brute_force_conv2d(x, w, b, stride=stride, padding=padding)
    np.testing.assert_allclose(out.data, oracle, atol=1e-12)


def test_upsample2x_replicates_blocks():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(3, 4, 4))
    out = ad.upsample2x(Tensor(x)).data
    assert out.shape == (3, 8, 8)
    for i in range(4):
        for j in range(4):
            block = out[:, 2 * i : 2 * i + 2, 2 * j : 2 * j + 2]
            assert np.all(block == x[:, i : i + 1, j : j + 1])


def test_forward_is_deterministic():
    rng = np.random.default_rng(5)
    x = rng.normal(size=(2, 6, 6))
    w = rng.normal(size=(3, 2, 3, 3))
    a = ad.conv2d(Tensor(x), Tensor(w), padding=1).data
    b = ad.conv2d(Tensor(x), Tensor(w), padding=1).data
    assert np.array_equal(a, b)


# -- backward: closed forms ---------------------------------------------------


def test_backward_sum_of_squares():
    rng = np.random.default_rng(2)
    tape = Tape()
    x = tape.leaf(rng.normal(size=(4, 4)))
    root = ad.tsum(ad.mul(x, x))
    grads = backward(root)
    np.testing.assert_allclose(grads[x], 2.0 * x.data, atol=1e-12)


def test_backward_mse_closed_form():
    rng = np.random.default_rng(3)
    c = rng.normal(size=(5,))
    tape = Tape()
    x = tape.leaf(rng.normal(size=(5,)))
    root = ad.msq(x - Tensor(c))
    grads = backward(root)
    np.testing.assert_allclose(grads[x], 2.0 * (x.data - c) / 5.0, atol=1e-12)


def test_unreachable_leaf_gets_zero_gradient():
    tape = Tape()
    x = tape.leaf(np.ones(3))
    y = tape.leaf(np.ones(3))
    root = ad.tsum(ad.mul(x, x))
    grads = backward(root)
    np.testing.assert_array_equal(grads[y], np.zeros(3))


def test_gradients_populated_for_every_node_on_path():
    tape = Tape()
    x = tape.leaf(np.array([1.0, 2.0]))
    squared = ad.mul(x, x)
    root = ad.tsum(squared)
    grads = backward(root)
    # the intermediate node sits on the x -> root path, so it has a gradient
    np.testing.assert_array_equal(grads[squared], np.ones(2))
    assert all(node.tape is tape for node in tape.nodes)
    assert tape.nodes.index(x) < tape.nodes.index(squared) < tape.nodes.index(root)


def test_backward_linearity():
    rng = np.random.default_rng(11)
    x0 = rng.normal(size=(3, 4))

    def grad_of(fn):
        tape = Tape()
        x = tape.leaf(x0)
        return backward(fn(x))[x]

    f = lambda x: ad.msq(x)
    g = lambda x: ad.tsum(ad.tanh(x))
    a, b = 0.7, -1.3
    combined = grad_of(lambda x: a * f(x) + b * g(x))
    separate = a * grad_of(f) + b * grad_of(g)
    np.testing.assert_allclose(combined, separate, atol=1e-10)


# -- backward: finite-difference oracle over every primitive ------------------


PRIMITIVE_CASES = [
    ("add", lambda x, aux: ad.tsum(ad.tanh(ad.add(x, Tensor(aux)))), (2, 3, 3)),
    ("mul", lambda x, aux: ad.tsum(ad.mul(x, Tensor(aux))), (2, 3, 3)),
    ("mul_self", lambda x, aux: ad.tsum(ad.mul(x, x)), (2, 3, 3)),
    ("scalar_broadcast", lambda x, aux: ad.tsum(ad.mul(ad.add(x, Tensor(0.3)), Tensor(aux))), (4,)),
    ("tanh", lambda x, aux: ad.msq(ad.tanh(x)), (2, 4, 4)),
    ("leaky_relu", lambda x, aux: ad.msq(ad.leaky_relu(x, 0.2)), (2, 4, 4)),
    ("sqrt", lambda x, aux: ad.tsum(ad.sqrt(ad.add(ad.mul(x, x), Tensor(0.5)))), (3, 3)),
    ("sum", lambda x, aux: ad.tsum(x), (2, 3)),
    ("mean", lambda x, aux: ad.mean(ad.mul(x, x)), (2, 3)),
    ("msq", lambda x, aux: ad.msq(x), (2, 3)),
    ("reshape", lambda x, aux: ad.msq(ad.reshape(x, (6,))), (2, 3)),
    ("upsample", lambda x, aux: ad.msq(ad.upsample2x(x)), (2, 3, 3)),
]


@pytest.mark.parametrize("name,build,shape", PRIMITIVE_CASES, ids=[c[0] for c in PRIMITIVE_CASES])
def test_primitive_gradients_match_finite_differences(name, build, shape):
    rng = np.random.default_rng(13)
    x0 = rng.normal(size=shape)
    aux = rng.normal(size=shape)

    tape = Tape()
    x = tape.leaf(x0)
    grads = backward(build(x, aux))
    analytic = grads[x]

    def scalar_fn(flat):
        t = Tape()
        xv = t.leaf(flat.reshape(shape))
        return build(xv, aux).item()

    numeric = finite_diff_grad(scalar_fn, x0).reshape(shape)
    assert_grad_close(analytic, numeric)


def test_conv2d_gradients_match_finite_differences():
    rng = np.random.default_rng(17)
    x0 = rng.normal(size=(2, 6, 6))
    w0 = rng.normal(size=(3, 2, 3, 3))
    b0 = rng.normal(size=3)

    for stride in (1, 2):
        tape = Tape()
        x = tape.leaf(x0)
        w = tape.leaf(w0)
        b = tape.leaf(b0)
        root = ad.msq(ad.conv2d(x, w, b, stride=stride, padding=1))
        grads = backward(root)

        for leaf, val in ((x, x0), (w, w0), (b, b0)):
            def scalar_fn(flat, leaf=leaf, val=val, stride=stride):
                parts = {x: x0, w: w0, b: b0}
                parts[leaf] = flat.reshape(val.shape)
                t = Tape()
                xv = t.leaf(parts[x])
                wv = t.leaf(parts[w])
                bv = t.leaf(parts[b])
                return ad.msq(ad.conv2d(xv, wv, bv, stride=stride, padding=1)).item()

            numeric = finite_diff_grad(scalar_fn, val).reshape(val.shape)
            assert_grad_close(grads[leaf], numeric)


def test_dense_gradients_match_finite_differences():
    rng = np.random.default_rng(19)
    w0 = rng.normal(size=(4, 6))
    x0 = rng.normal(size=6)
    b0 = rng.normal(size=4)

    tape = Tape()
    w = tape.leaf(w0)
    x = tape.leaf(x0)
    b = tape.leaf(b0)
    grads = backward(ad.msq(ad.tanh(ad.dense(w, x, b))))

    for leaf, val in ((w, w0), (x, x0), (b, b0)):
        def scalar_fn(flat, leaf=leaf, val=val):
            parts = {w: w0, x: x0, b: b0}
            parts[leaf] = flat.reshape(val.shape)
            t = Tape()
            wv = t.leaf(parts[w])
            xv = t.leaf(parts[x])
            bv = t.leaf(parts[b])
            return ad.msq(ad.tanh(ad.dense(wv, xv, bv))).item()

        numeric = finite_diff_grad(scalar_fn, val).reshape(val.shape)
        assert_grad_close(grads[leaf], numeric)


def test_stack_gradients_match_finite_differences():
    rng = np.random.default_rng(23)
    parts0 = [rng.normal(size=(3, 3)) for _ in range(3)]

    tape = Tape()
    leaves = [tape.leaf(p) for p in parts0]
    grads = backward(ad.msq(ad.tanh(ad.stack(leaves))))

    for k in range(3):
        def scalar_fn(flat, k=k):
            vals = [p.copy() for p in parts0]
            vals[k] = flat.reshape(3, 3)
            t = Tape()
            ls = [t.leaf(v) for v in vals]
            return ad.msq(ad.tanh(ad.stack(ls))).item()

        numeric = finite_diff_grad(scalar_fn, parts0[k]).reshape(3, 3)
        assert_grad_close(grads[leaves[k]], numeric)


def random_graph(tape, x, depth, rng):
    """Compose random primitives up to `depth` on shapes <= (4, 8, 8)."""
    cur = x
    for _ in range(depth):
        pick = rng.integers(0, 5)
        if pick == 0:
            cur = ad.tanh(cur)
        elif pick == 1:
            cur = ad.leaky_relu(cur, 0.2)
        elif pick == 2:
            cur = ad.add(cur, ad.mul(cur, 0.5))
        elif pick == 3:
            cur = ad.mul(cur, ad.tanh(cur))
        else:
            cur = ad.add(cur, Tensor(rng.normal(size=cur.shape)))
    return ad.msq(cur)


@pytest.mark.parametrize("depth", [1, 2, 3, 4, 5, 6])
def test_random_composed_graphs_match_finite_differences(depth):
    rng = np.random.default_rng(100 + depth)
    x0 = rng.normal(size=(4, 8, 8)) * 0.5
    aux_rng = np.random.default_rng(200 + depth)

    tape = Tape()
    x = tape.leaf(x0)
    grads = backward(random_graph(tape, x, depth, aux_rng))

    def scalar_fn(flat):
        t = Tape()
        xv = t.leaf(flat.reshape(4, 8, 8))
        return random_graph(t, xv, depth, np.random.default_rng(200 + depth)).item()

    numeric = finite_diff_grad(scalar_fn, x0).reshape(4, 8, 8)
    assert_grad_close(grads[x], numeric)


# -- error contracts ----------------------------------------------------------


def test_shape_mismatch_names_both_shapes():
    with pytest.raises(ShapeMismatchError) as err:
        ad.add(Tensor(np.ones((2, 3))), Tensor(np.ones((3, 2))))
    assert "(2, 3)" in str(err.value) and "(3, 2)" in str(err.value)


def test_non_finite_leaf_rejected():
    with pytest.raises(NonFiniteInputError):
        Tensor(np.array([1.0, np.nan]))
    with pytest.raises(NonFiniteInputError):
        Tape().leaf(np.array([np.inf]))


def test_backward_requires_scalar_root():
    tape = Tape()
    x = tape.leaf(np.ones((2, 2)))
    y = ad.mul(x, x)
    with pytest.raises(ValueError, match="scalar"):
        backward(y)


def test_tape_cannot_be_consumed_twice():
    tape = Tape()
    x = tape.leaf(np.ones(3))
    root = ad.msq(x)
    backward(root)
    with pytest.raises(TapeConsumedError):
        backward(root)


def test_operands_from_different_tapes_rejected():
    t1, t2 = Tape(), Tape()
    a = t1.leaf(np.ones(3))
    b = t2.leaf(np.ones(3))
    with pytest.raises(ValueError, match="tapes"):
        ad.add(a, b)


def test_conv2d_channel_mismatch_rejected():
    x = Tensor(np.ones((3, 4, 4)))
    w = Tensor(np.ones((2, 4, 3, 3)))
    with pytest.raises(ShapeMismatchError):
        ad.conv2d(x, w)
