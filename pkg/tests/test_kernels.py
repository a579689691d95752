"""Backend agreement and kernel correctness against naive per-element oracles."""

import numpy as np
import pytest

from modelspace.kernels import reference

try:
    from modelspace.kernels import _core as compiled
except ImportError:
    compiled = None

BACKENDS = [reference] + ([compiled] if compiled is not None else [])


def naive_conv2d(x, w, b, stride, padding):
    """Direct realization of the convolution sum, one output element at a time."""
    kw, kh, cin, cout = w.shape
    iw, ih, _ = x.shape
    ow = (iw + 2 * padding - kw) // stride + 1
    oh = (ih + 2 * padding - kh) // stride + 1
    out = np.zeros((ow, oh, cout))
    for ox in range(ow):
        for oy in range(oh):
            for co in range(cout):
                acc = b[co]
                for dx in range(kw):
                    for dy in range(kh):
                        px = ox * stride + dx - padding
                        py = oy * stride + dy - padding
                        if 0 <= px < iw and 0 <= py < ih:
                            for ci in range(cin):
                                acc += w[dx, dy, ci, co] * x[px, py, ci]
                out[ox, oy, co] = acc
    return out


def _contig(*arrays):
    return tuple(np.ascontiguousarray(a, dtype=np.float64) for a in arrays)


@pytest.mark.parametrize("impl", BACKENDS, ids=lambda m: m.__name__.rsplit(".", 1)[-1])
@pytest.mark.parametrize("stride,padding", [(1, 0), (1, 1), (2, 0), (2, 1), (1, 2)])
def test_conv_forward_matches_naive_oracle(impl, stride, padding):
    rng = np.random.default_rng(3)
    x, w, b = _contig(
        rng.standard_normal((7, 6, 3)),
        rng.standard_normal((3, 3, 3, 4)),
        rng.standard_normal(4),
    )
    got = impl.conv2d_forward(x, w, b, stride, padding)
    want = naive_conv2d(x, w, b, stride, padding)
    assert got.shape == want.shape
    np.testing.assert_allclose(got, want, rtol=1e-12, atol=1e-14)


@pytest.mark.parametrize("stride,padding", [(1, 0), (1, 1), (2, 1)])
def test_conv_backward_adjoint_identity(stride, padding):
    # <conv(x), g> must equal <x, conv_backward(g)> for every backend
    rng = np.random.default_rng(4)
    x, w, b = _contig(
        rng.standard_normal((8, 8, 2)),
        rng.standard_normal((3, 3, 2, 5)),
        np.zeros(5),
    )
    for impl in BACKENDS:
        out = impl.conv2d_forward(x, w, b, stride, padding)
        g = np.ascontiguousarray(np.random.default_rng(5).standard_normal(out.shape))
        gi = impl.conv2d_backward_input(g, w, stride, padding, x.shape)
        lhs = float((out * g).sum())
        rhs = float((x * gi).sum())
        assert abs(lhs - rhs) <= 1e-10 * max(abs(lhs), 1.0)


@pytest.mark.skipif(compiled is None, reason="compiled kernels not built")
def test_backends_agree():
    rng = np.random.default_rng(9)
    x, w, b = _contig(
        rng.standard_normal((9, 7, 3)),
        rng.standard_normal((3, 2, 3, 4)),
        rng.standard_normal(4),
    )
    for stride in (1, 2):
        for padding in (0, 1):
            a = reference.conv2d_forward(x, w, b, stride, padding)
            c = compiled.conv2d_forward(x, w, b, stride, padding)
            np.testing.assert_allclose(a, c, rtol=1e-12, atol=1e-14)
            (g,) = _contig(rng.standard_normal(a.shape))
            np.testing.assert_allclose(
                reference.conv2d_backward_input(g, w, stride, padding, x.shape),
                compiled.conv2d_backward_input(g, w, stride, padding, x.shape),
                rtol=1e-12,
                atol=1e-14,
            )

    for padding in (0, 1):
        oa, ia = reference.maxpool_forward(x, 2, 2, padding)
        oc, ic = compiled.maxpool_forward(x, 2, 2, padding)
        assert np.array_equal(oa, oc)
        assert np.array_equal(ia, ic)
        (g,) = _contig(rng.standard_normal(oa.shape))
        assert np.array_equal(
            reference.maxpool_backward(g, ia, x.shape),
            compiled.maxpool_backward(g, ia, x.shape),
        )
        np.testing.assert_allclose(
            reference.avgpool_forward(x, 2, 2, padding),
            compiled.avgpool_forward(x, 2, 2, padding),
            rtol=1e-13,
        )
        np.testing.assert_allclose(
            reference.avgpool_backward(g, 2, 2, padding, x.shape),
            compiled.avgpool_backward(g, 2, 2, padding, x.shape),
            rtol=1e-13,
        )


@pytest.mark.parametrize("impl", BACKENDS, ids=lambda m: m.__name__.rsplit(".", 1)[-1])
def test_maxpool_tie_takes_first_in_scan_order(impl):
    # all-equal window: the winner must be the (dx=0, dy=0) cell
    x = np.ones((4, 4, 1))
    out, idx = impl.maxpool_forward(np.ascontiguousarray(x), 2, 2, 0)
    assert np.array_equal(out, np.ones((2, 2, 1)))
    # flat index of the top-left cell of each window into (4,4,1)
    expected = np.array([[[0], [2]], [[8], [10]]], dtype=np.int64)
    assert np.array_equal(idx, expected)


@pytest.mark.parametrize("impl", BACKENDS, ids=lambda m: m.__name__.rsplit(".", 1)[-1])
def test_avgpool_padding_counts_zeros(impl):
    # 1x1 input, window 2, padding 1: every window holds one real cell + 3 zeros
    x = np.full((1, 1, 1), 8.0)
    out = impl.avgpool_forward(np.ascontiguousarray(x), 2, 1, 1)
    np.testing.assert_allclose(out, np.full((2, 2, 1), 2.0))


@pytest.mark.parametrize("impl", BACKENDS, ids=lambda m: m.__name__.rsplit(".", 1)[-1])
def test_maxpool_padding_never_selects_padding(impl):
    x = np.ascontiguousarray(-np.ones((2, 2, 1)))
    out, idx = impl.maxpool_forward(x, 2, 1, 1)
    assert out.shape == (3, 3, 1)
    assert (out == -1.0).all()
    assert idx.min() >= 0 and idx.max() < 4
