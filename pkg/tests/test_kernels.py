import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ldpstream import kernels

needs_compiled = pytest.mark.skipif(kernels.compiled_backend is None,
                                    reason="compiled kernels not built")


@needs_compiled
@settings(max_examples=50, deadline=None)
@given(st.integers(2, 12), st.integers(0, 300), st.integers(0, 2**32 - 1), st.floats(0.05, 6))
def test_krr_backends_identical(d, n, seed, eps):
    rng = np.random.default_rng(seed)
    values = rng.integers(0, d, n)
    u = rng.random(n)
    e = np.exp(eps)
    p, q = e / (e + d - 1), 1 / (e + d - 1)
    a = kernels.krr_perturb(values, u, p, q, d, backend="python")
    b = kernels.krr_perturb(values, u, p, q, d, backend="cython")
    np.testing.assert_array_equal(a, b)
    assert np.all((a >= 0) & (a < d))


@needs_compiled
@settings(max_examples=30, deadline=None)
@given(st.integers(2, 10), st.integers(0, 200), st.integers(0, 2**32 - 1))
def test_oue_backends_identical(d, n, seed):
    rng = np.random.default_rng(seed)
    values = rng.integers(0, d, n)
    u = rng.random((n, d))
    a = kernels.oue_perturb(values, u, 0.5, 0.2, backend="python")
    b = kernels.oue_perturb(values, u, 0.5, 0.2, backend="cython")
    np.testing.assert_array_equal(a, b)


@needs_compiled
@settings(max_examples=30, deadline=None)
@given(st.integers(2, 40), st.integers(1, 5), st.integers(0, 2**32 - 1), st.booleans())
def test_iforest_backends_identical(n, dim, seed, ties):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, dim))
    if ties:
        X = np.round(X)
    psi = min(16, n)
    limit = int(np.ceil(np.log2(psi))) if psi > 1 else 1
    trees = 10
    samples = np.stack([rng.choice(n, psi, replace=False) for _ in range(trees)])
    u = rng.random((trees, 2 * (2**limit - 1)))
    a = kernels.iforest_path_lengths(X, samples, u, limit, backend="python")
    b = kernels.iforest_path_lengths(X, samples, u, limit, backend="cython")
    np.testing.assert_allclose(a, b, rtol=0, atol=1e-12)


def test_krr_uniform_mapping_exhaustive():
    # with p=0.5 and q=1/6 the three "other" items split [0.5, 1) evenly
    u = np.array([0.1, 0.49, 0.5, 0.6, 0.67, 0.8, 0.99])
    out = kernels.krr_perturb(np.full(7, 1), u, 0.5, 1 / 6, 4, backend="python")
    np.testing.assert_array_equal(out, [1, 1, 0, 0, 2, 2, 3])


def test_average_path_length_values():
    assert kernels.average_path_length(1) == 0
    assert kernels.average_path_length(2) == 1
    c256 = 2 * (np.log(255) + 0.5772156649015329) - 2 * 255 / 256
    assert kernels.average_path_length(256) == pytest.approx(c256)


def test_unknown_backend():
    with pytest.raises(ValueError):
        kernels.krr_perturb([0], [0.1], 0.5, 0.5, 2, backend="fortran")
