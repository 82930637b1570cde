import numpy as np
import pytest

from plediff.kernels import _numpy, available_backends


def _weights(rng, c, w, e, n_blocks):
    return {
        "win": 0.3 * rng.standard_normal((w, 3 * c)),
        "bin": 0.1 * rng.standard_normal(w),
        "wout": 0.3 * rng.standard_normal((c, 3 * w)),
        "bout": 0.1 * rng.standard_normal(c),
        "wf": [0.3 * rng.standard_normal((2 * w, e)) for _ in range(n_blocks)],
        "bf": [0.1 * rng.standard_normal(2 * w) for _ in range(n_blocks)],
        "wc1": [0.2 * rng.standard_normal((w, 3 * w)) for _ in range(n_blocks)],
        "bc1": [0.1 * rng.standard_normal(w) for _ in range(n_blocks)],
        "wc2": [0.2 * rng.standard_normal((w, 3 * w)) for _ in range(n_blocks)],
        "bc2": [0.1 * rng.standard_normal(w) for _ in range(n_blocks)],
    }


def test_im2col_col2im_adjoint(rng):
    # <im2col(a), d> == <a, col2im(d)> for random a, d
    a = rng.standard_normal((3, 6, 5))
    d = rng.standard_normal((3, 6, 15))
    lhs = float((_numpy.im2col(a) * d).sum())
    rhs = float((a * _numpy.col2im(d)).sum())
    assert lhs == pytest.approx(rhs, rel=1e-12)


@pytest.mark.skipif("compiled" not in available_backends(), reason="compiled kernels unavailable")
@pytest.mark.parametrize("dims", [(2, 4, 3, 8, 10, 1), (5, 16, 4, 24, 20, 2), (1, 7, 2, 5, 6, 3)])
def test_backends_agree(rng, dims):
    from plediff.kernels import _speedups

    b, h, c, w, e, n_blocks = dims
    weights = _weights(rng, c, w, e, n_blocks)
    x = rng.standard_normal((b, h, c))
    ev = rng.standard_normal((b, e))
    d = rng.standard_normal((b, h, c))

    eps_np, cache_np = _numpy.forward_batch(weights, x, ev)
    eps_cy, cache_cy = _speedups.forward_batch(weights, x, ev)
    np.testing.assert_allclose(eps_cy, eps_np, rtol=1e-10, atol=1e-12)

    g_np, de_np = _numpy.backward_batch(weights, cache_np, d)
    g_cy, de_cy = _speedups.backward_batch(weights, cache_cy, d)
    np.testing.assert_allclose(de_cy, de_np, rtol=1e-10, atol=1e-12)
    for key in ("win", "bin", "wout", "bout"):
        np.testing.assert_allclose(g_cy[key], g_np[key], rtol=1e-10, atol=1e-12)
    for key in ("wf", "bf", "wc1", "bc1", "wc2", "bc2"):
        for a_, b_ in zip(g_cy[key], g_np[key]):
            np.testing.assert_allclose(a_, b_, rtol=1e-10, atol=1e-12)


@pytest.mark.skipif("compiled" not in available_backends(), reason="compiled kernels unavailable")
def test_caches_are_interchangeable(rng):
    from plediff.kernels import _speedups

    weights = _weights(rng, 4, 12, 10, 1)
    x = rng.standard_normal((3, 8, 4))
    ev = rng.standard_normal((3, 10))
    d = rng.standard_normal((3, 8, 4))
    _, cache_np = _numpy.forward_batch(weights, x, ev)
    g_cy, de_cy = _speedups.backward_batch(weights, cache_np, d)
    g_np, de_np = _numpy.backward_batch(weights, cache_np, d)
    np.testing.assert_allclose(de_cy, de_np, rtol=1e-10, atol=1e-12)
    np.testing.assert_allclose(g_cy["win"], g_np["win"], rtol=1e-10, atol=1e-12)
