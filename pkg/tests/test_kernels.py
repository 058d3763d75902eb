"""Compiled and NumPy kernels must agree."""
import numpy as np
import pytest
from hypothesis import given, strategies as st

from sscunet import kernels

py = kernels.get_backend("python")
try:
    cy = kernels.get_backend("cython")
except ImportError:  # extension not built
    cy = None

needs_cython = pytest.mark.skipif(cy is None, reason="compiled kernels not built")


def test_backend_selected():
    assert kernels.BACKEND in ("python", "cython")
    with pytest.raises(ValueError):
        kernels.get_backend("fortran")


shapes = st.tuples(st.integers(1, 3), st.integers(1, 4), st.integers(1, 4), st.integers(1, 5),
                   st.integers(0, 12), st.integers(0, 2 ** 31))


@needs_cython
@given(shapes)
def test_conv1d_backends_agree(s):
    B, C_in, C_out, k, extra, seed = s
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(B, C_in, k + extra))
    w = rng.normal(size=(C_out, C_in, k))
    g = rng.normal(size=(B, C_out, extra + 1))
    np.testing.assert_allclose(cy.conv1d_forward(x, w), py.conv1d_forward(x, w), atol=1e-12)
    for a, b in zip(cy.conv1d_backward(g, x, w), py.conv1d_backward(g, x, w)):
        np.testing.assert_allclose(a, b, atol=1e-12)


@needs_cython
@given(st.integers(1, 3), st.integers(1, 3), st.integers(2, 15), st.integers(0, 2 ** 31),
       st.booleans())
def test_maxpool_backends_agree(B, C, L, seed, ties):
    rng = np.random.default_rng(seed)
    x = rng.integers(0, 3, size=(B, C, L)).astype(float) if ties else rng.normal(size=(B, C, L))
    o1, i1 = py.maxpool1d_forward(x)
    o2, i2 = cy.maxpool1d_forward(x)
    assert np.array_equal(o1, o2) and np.array_equal(i1, i2)
    g = rng.normal(size=o1.shape)
    assert np.array_equal(py.maxpool1d_backward(g, i1, L), cy.maxpool1d_backward(g, i2, L))


@needs_cython
@given(st.integers(3, 20), st.integers(3, 20), st.integers(1, 9), st.floats(2, 6),
       st.floats(0, 10), st.integers(0, 2 ** 31))
def test_slic_assign_backends_agree(H, W, K, S, m, seed):
    rng = np.random.default_rng(seed)
    feat = rng.dirichlet(np.ones(3), size=(H, W))
    cfeat = rng.dirichlet(np.ones(3), size=K)
    cpos = np.column_stack([rng.uniform(0, H - 1, K), rng.uniform(0, W - 1, K)])
    init = rng.integers(0, K, size=(H, W))
    out = []
    for mod in (py, cy):
        labels, dist = init.copy(), np.empty((H, W))
        mod.slic_assign(feat, cfeat, cpos, S, m, labels, dist)
        out.append((labels, dist))
    assert np.array_equal(out[0][0], out[1][0])
    np.testing.assert_allclose(out[0][1], out[1][1], rtol=1e-12)


def test_slic_assign_brute_force(rng):
    """Windowed assignment equals an exhaustive search over in-window seeds."""
    H, W, S, m = 12, 14, 3.0, 0.5
    feat = rng.dirichlet(np.ones(3), size=(H, W))
    K = 6
    cfeat = rng.dirichlet(np.ones(3), size=K)
    cpos = np.column_stack([rng.uniform(0, H - 1, K), rng.uniform(0, W - 1, K)])
    labels = np.full((H, W), -1, dtype=np.int64)
    dist = np.empty((H, W))
    kernels.slic_assign(feat, cfeat, cpos, S, m, labels, dist)
    for i in range(H):
        for j in range(W):
            best, arg = np.inf, -1
            for k in range(K):
                if abs(i - cpos[k, 0]) <= S and abs(j - cpos[k, 1]) <= S:
                    d_abu = np.sum((feat[i, j] - cfeat[k]) ** 2)
                    d2 = d_abu ** 2 + ((i - cpos[k, 0]) ** 2 + (j - cpos[k, 1]) ** 2) / S ** 2 * m ** 2
                    if d2 < best:
                        best, arg = d2, k
            assert labels[i, j] == arg
