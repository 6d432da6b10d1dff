import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fusionseg import numerics as nx
from fusionseg.numerics import ConvLayer

from oracles import naive_conv2d, numeric_gradient, rel_error


def _layer(w, b=None, **kw):
    w = np.asarray(w)
    if b is None:
        b = np.zeros(w.shape[0], dtype=w.dtype)
    return ConvLayer(w, np.asarray(b), **kw)


# --- conv2d -----------------------------------------------------------------


def test_conv_identity_kernel():
    x = np.ones((1, 1, 3, 3), dtype=np.float32)
    out = nx.conv2d(x, _layer(np.ones((1, 1, 1, 1), dtype=np.float32)))
    np.testing.assert_array_equal(out, x)


def test_dilated_receptive_field_taps():
    x = np.zeros((1, 1, 5, 5), dtype=np.float32)
    x[0, 0, 2, 2] = 1
    out = nx.conv2d(x, _layer(np.ones((1, 1, 3, 3), dtype=np.float32), dilation=2, padding=2))
    expected = np.zeros((5, 5))
    for r in (0, 2, 4):
        for c in (0, 2, 4):
            expected[r, c] = 1
    np.testing.assert_array_equal(out[0, 0], expected)


def test_conv_matches_loop_oracle_random():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((2, 3, 8, 8)).astype(np.float32)
    w = rng.standard_normal((4, 3, 3, 3)).astype(np.float32)
    b = rng.standard_normal(4).astype(np.float32)
    out = nx.conv2d(x, _layer(w, b))
    np.testing.assert_allclose(out, naive_conv2d(x, w, b), atol=1e-5)


def test_conv_shape_mismatch_names_both_shapes():
    x = np.zeros((1, 2, 4, 4), dtype=np.float32)
    w = np.zeros((1, 3, 3, 3), dtype=np.float32)
    with pytest.raises(nx.ShapeError, match=r"\(1, 2, 4, 4\).*\(1, 3, 3, 3\)"):
        nx.conv2d(x, _layer(w))


def test_conv_output_too_small_rejected():
    with pytest.raises(nx.ShapeError):
        nx.conv2d(np.zeros((1, 1, 2, 2)), _layer(np.zeros((1, 1, 3, 3))))


@settings(max_examples=40, deadline=None)
@given(
    h=st.integers(1, 9),
    w=st.integers(1, 9),
    k=st.integers(1, 3),
    stride=st.integers(1, 3),
    dilation=st.integers(1, 3),
    padding=st.integers(0, 3),
)
def test_conv_output_shape_formula(h, w, k, stride, dilation, padding):
    layer = _layer(np.zeros((2, 1, k, k)), stride=stride, dilation=dilation, padding=padding)
    oh = (h + 2 * padding - dilation * (k - 1) - 1) // stride + 1
    ow = (w + 2 * padding - dilation * (k - 1) - 1) // stride + 1
    if oh < 1 or ow < 1:
        with pytest.raises(nx.ShapeError):
            nx.conv2d(np.zeros((1, 1, h, w)), layer)
    else:
        assert nx.conv2d(np.zeros((1, 1, h, w)), layer).shape == (1, 2, oh, ow)
        assert layer.param_count == 2 * 1 * k * k + 2


# --- conv2d_backward ----------------------------------------------------------


def test_conv_backward_zero_grad():
    rng = np.random.default_rng(1)
    x = rng.standard_normal((2, 3, 5, 5))
    layer = _layer(rng.standard_normal((2, 3, 3, 3)), padding=1)
    gx, gw, gb = nx.conv2d_backward(x, layer, np.zeros((2, 2, 5, 5)))
    assert not gx.any() and not gw.any() and not gb.any()


def test_conv_backward_bias_is_channel_sum():
    rng = np.random.default_rng(2)
    x = rng.standard_normal((2, 3, 5, 5))
    layer = _layer(rng.standard_normal((4, 3, 3, 3)), padding=1)
    g = rng.standard_normal((2, 4, 5, 5))
    _, _, gb = nx.conv2d_backward(x, layer, g)
    np.testing.assert_allclose(gb, g.sum(axis=(0, 2, 3)))


def test_conv_backward_grad_out_shape_checked():
    layer = _layer(np.zeros((2, 1, 3, 3)))
    with pytest.raises(nx.ShapeError):
        nx.conv2d_backward(np.zeros((1, 1, 5, 5)), layer, np.zeros((1, 2, 5, 5)))


def _conv_gradcheck(x, w, b, stride, dilation, padding, seed=0):
    rng = np.random.default_rng(seed)
    layer = _layer(w, b, stride=stride, dilation=dilation, padding=padding)
    out_shape = nx.conv2d(x, layer).shape
    proj = rng.standard_normal(out_shape)

    def f():
        return float((nx.conv2d(x, layer) * proj).sum())

    gx, gw, gb = nx.conv2d_backward(x, layer, proj)
    return (
        rel_error(gw, numeric_gradient(f, w)),
        rel_error(gx, numeric_gradient(f, x)),
        rel_error(gb, numeric_gradient(f, b)),
    )


def test_conv_1x1_gradcheck():
    rng = np.random.default_rng(3)
    errs = _conv_gradcheck(
        rng.standard_normal((2, 3, 4, 4)), rng.standard_normal((2, 3, 1, 1)), rng.standard_normal(2), 1, 1, 0
    )
    assert max(errs) < 1e-3


@pytest.mark.parametrize("stride,dilation,padding", [(1, 1, 1), (2, 1, 1), (1, 2, 2), (2, 3, 1)])
def test_conv_gradcheck_geometries(stride, dilation, padding):
    rng = np.random.default_rng(stride * 10 + dilation)
    errs = _conv_gradcheck(
        rng.standard_normal((2, 2, 7, 7)),
        rng.standard_normal((3, 2, 3, 3)),
        rng.standard_normal(3),
        stride,
        dilation,
        padding,
    )
    assert max(errs) < 1e-3


def test_conv_float32_path_returns_float32():
    x = np.ones((1, 1, 4, 4), dtype=np.float32)
    layer = _layer(np.ones((1, 1, 3, 3), dtype=np.float32), padding=1)
    assert nx.conv2d(x, layer).dtype == np.float32
    assert all(a.dtype == np.float32 for a in nx.conv2d_backward(x, layer, np.ones((1, 1, 4, 4), np.float32)))


# --- relu / mul / max -----------------------------------------------------------


def test_relu_values():
    x = np.array([-1.0, 0.0, 2.0]).reshape(1, 1, 1, 3)
    np.testing.assert_array_equal(nx.relu(x).ravel(), [0, 0, 2])
    assert not nx.relu(-np.abs(np.random.default_rng(0).standard_normal((1, 2, 3, 3))) - 0.1).any()


def _away_from_zero(rng, shape, margin=0.05):
    x = rng.standard_normal(shape)
    return np.where(np.abs(x) < margin, x + np.sign(x + 1e-9) * margin, x)


def test_relu_gradcheck():
    rng = np.random.default_rng(4)
    x = _away_from_zero(rng, (2, 3, 4, 4))
    proj = rng.standard_normal(x.shape)
    f = lambda: float((nx.relu(x) * proj).sum())
    assert rel_error(nx.relu_backward(x, proj), numeric_gradient(f, x)) < 1e-3


def test_mul_max_identities():
    rng = np.random.default_rng(5)
    x = rng.standard_normal((1, 2, 3, 3))
    np.testing.assert_array_equal(nx.elementwise_mul(x, np.ones_like(x)), x)
    np.testing.assert_array_equal(nx.elementwise_max(x, x), x)
    a = np.array([1.0, 5.0]).reshape(1, 1, 1, 2)
    b = np.array([3.0, 2.0]).reshape(1, 1, 1, 2)
    np.testing.assert_array_equal(nx.elementwise_max(a, b).ravel(), [3, 5])


def test_max_tie_routes_to_first():
    a = np.ones((1, 1, 1, 3))
    ga, gb = nx.elementwise_max_backward(a, a.copy(), np.full(a.shape, 2.0))
    assert (ga == 2).all() and not gb.any()


def test_mul_max_shape_mismatch():
    with pytest.raises(nx.ShapeError):
        nx.elementwise_mul(np.zeros((1, 1, 2, 2)), np.zeros((1, 1, 2, 3)))
    with pytest.raises(nx.ShapeError):
        nx.elementwise_max(np.zeros((1, 1, 2, 2)), np.zeros((1, 2, 2, 2)))


def test_max_of_mul_composite_gradcheck():
    rng = np.random.default_rng(6)
    a = rng.standard_normal((2, 2, 4, 4))
    b = rng.standard_normal((2, 2, 4, 4))
    c = rng.standard_normal((2, 2, 4, 4))
    # keep the max away from ties so finite differences don't straddle a switch
    prod = a * b
    c = np.where(np.abs(prod - c) < 0.1, c + 0.3, c)
    proj = rng.standard_normal(a.shape)

    def f():
        return float((nx.elementwise_max(nx.elementwise_mul(a, b), c) * proj).sum())

    m = nx.elementwise_mul(a, b)
    gm, gc = nx.elementwise_max_backward(m, c, proj)
    ga, gb = nx.elementwise_mul_backward(a, b, gm)
    for analytic, arr in ((ga, a), (gb, b), (gc, c)):
        assert rel_error(analytic, numeric_gradient(f, arr)) < 1e-3


def test_affine_gradcheck():
    rng = np.random.default_rng(7)
    x = rng.standard_normal((2, 3, 4, 4))
    scale = rng.standard_normal(3)
    shift = rng.standard_normal(3)
    proj = rng.standard_normal(x.shape)
    f = lambda: float((nx.channel_affine(x, scale, shift) * proj).sum())
    gx, gs, gt = nx.channel_affine_backward(x, scale, proj)
    assert rel_error(gx, numeric_gradient(f, x)) < 1e-3
    assert rel_error(gs, numeric_gradient(f, scale)) < 1e-3
    assert rel_error(gt, numeric_gradient(f, shift)) < 1e-3


# --- upsampling -------------------------------------------------------------------


def test_upsample_factor_one_is_identity():
    x = np.random.default_rng(8).standard_normal((1, 2, 3, 4)).astype(np.float32)
    np.testing.assert_array_equal(nx.bilinear_upsample(x, 1), x)


@pytest.mark.parametrize("factor", [2, 3, 4, 8])
def test_upsample_constant(factor):
    x = np.full((1, 2, 3, 5), 1.25, dtype=np.float32)
    out = nx.bilinear_upsample(x, factor)
    assert out.shape == (1, 2, 3 * factor, 5 * factor)
    np.testing.assert_allclose(out, 1.25, rtol=0, atol=1e-6)


def test_upsample_hand_computed_2x2():
    x = np.array([[0.0, 1.0], [2.0, 3.0]]).reshape(1, 1, 2, 2)
    # source coords for outputs 0..3: clamp(-0.25)=0, 0.25, 0.75, clamp(1.25)=1
    expected = np.array(
        [
            [0.0, 0.25, 0.75, 1.0],
            [0.5, 0.75, 1.25, 1.5],
            [1.5, 1.75, 2.25, 2.5],
            [2.0, 2.25, 2.75, 3.0],
        ]
    )
    np.testing.assert_allclose(nx.bilinear_upsample(x, 2)[0, 0], expected, atol=1e-12)


def test_upsample_gradcheck():
    rng = np.random.default_rng(9)
    x = rng.standard_normal((2, 2, 3, 4))
    proj = rng.standard_normal((2, 2, 12, 16))
    f = lambda: float((nx.bilinear_upsample(x, 4) * proj).sum())
    assert rel_error(nx.bilinear_upsample_backward(proj, 4), numeric_gradient(f, x)) < 1e-3


# --- cross-entropy ----------------------------------------------------------------


def test_cross_entropy_uniform_logits():
    logits = np.full((1, 2, 4, 5), 0.3)
    target = np.random.default_rng(0).integers(0, 2, (4, 5))
    loss, _ = nx.pixel_cross_entropy(logits, target)
    assert loss == pytest.approx(20 * np.log(2), rel=1e-12)


def test_cross_entropy_saturated():
    target = np.random.default_rng(1).integers(0, 2, (1, 6, 6))
    logits = np.zeros((1, 2, 6, 6))
    logits[:, 1] = np.where(target == 1, 20.0, -20.0) / 2
    logits[:, 0] = -logits[:, 1]
    loss, _ = nx.pixel_cross_entropy(logits, target)
    assert loss < 1e-6


def test_cross_entropy_gradcheck():
    rng = np.random.default_rng(2)
    logits = rng.standard_normal((2, 2, 4, 4))
    target = rng.integers(0, 2, (2, 4, 4))
    _, grad = nx.pixel_cross_entropy(logits, target)
    f = lambda: nx.pixel_cross_entropy(logits, target)[0]
    assert rel_error(grad, numeric_gradient(f, logits)) < 1e-3


def test_cross_entropy_rejects_non_binary_target():
    with pytest.raises(ValueError, match="0 and 1"):
        nx.pixel_cross_entropy(np.zeros((1, 2, 2, 2)), np.array([[0, 2], [1, 0]]))


def test_cross_entropy_size_mismatch():
    with pytest.raises(nx.ShapeError):
        nx.pixel_cross_entropy(np.zeros((1, 2, 2, 2)), np.zeros((3, 3), dtype=int))


# --- determinism / finiteness ----------------------------------------------------


def test_ops_bit_deterministic():
    rng = np.random.default_rng(11)
    x = rng.standard_normal((2, 3, 8, 8)).astype(np.float32)
    layer = _layer(rng.standard_normal((4, 3, 3, 3)).astype(np.float32), padding=2, dilation=2)
    a = nx.conv2d(x, layer)
    b = nx.conv2d(x.copy(), layer)
    assert a.tobytes() == b.tobytes()
    g = rng.standard_normal(a.shape).astype(np.float32)
    for u, v in zip(nx.conv2d_backward(x, layer, g), nx.conv2d_backward(x, layer, g)):
        assert u.tobytes() == v.tobytes()


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_outputs_finite_on_finite_inputs(seed):
    rng = np.random.default_rng(seed)
    x = (rng.standard_normal((1, 2, 6, 6)) * 100).astype(np.float32)
    layer = _layer((rng.standard_normal((2, 2, 3, 3)) * 10).astype(np.float32), padding=1)
    out = nx.conv2d(x, layer)
    assert np.isfinite(out).all()
    loss, grad = nx.pixel_cross_entropy(out, rng.integers(0, 2, (6, 6)))
    assert np.isfinite(loss) and np.isfinite(grad).all()
    assert all(np.isfinite(g).all() for g in nx.conv2d_backward(x, layer, grad))


# --- checkpoint format --------------------------------------------------------------


def test_checkpoint_layout():
    data = nx.save_checkpoint({"w": np.array([1.5], dtype=np.float32)})
    assert data[:4] == b"FSKT"
    assert data[4:8] == (1).to_bytes(4, "little")
    assert data[8:12] == (1).to_bytes(4, "little")
    assert data[12:13] == b"w"
    assert data[13:29] == b"".join(n.to_bytes(4, "little") for n in (1, 1, 1, 1))
    assert data[29:] == np.float32(1.5).tobytes()


arrays = st.builds(
    lambda shape, seed: np.random.default_rng(seed).standard_normal(shape).astype(np.float32),
    st.lists(st.integers(1, 4), min_size=1, max_size=4).map(tuple),
    st.integers(0, 2**32 - 1),
)


@settings(max_examples=50, deadline=None)
@given(st.dictionaries(st.text(min_size=1, max_size=12), arrays, max_size=5))
def test_checkpoint_round_trip(params):
    data = nx.save_checkpoint(params)
    loaded = nx.load_checkpoint(data)
    assert list(loaded) == list(params)
    for k in params:
        assert loaded[k].tobytes() == params[k].tobytes()
    assert nx.save_checkpoint(loaded) == data


def test_checkpoint_rejects_bad_magic_and_truncation():
    data = nx.save_checkpoint({"a": np.ones((2, 2), np.float32)})
    with pytest.raises(ValueError, match="magic"):
        nx.load_checkpoint(b"XXXX" + data[4:])
    with pytest.raises(ValueError, match="truncated"):
        nx.load_checkpoint(data[:-3])
