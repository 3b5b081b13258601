import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from deepmf.errors import DimensionError, NumericalError
from deepmf.numerics import (
    as_matrix,
    frob_err_sq,
    logdet_and_inverse,
    make_rng,
    matmul,
    spectral_norm_sq,
)

finite = st.floats(-10, 10, allow_nan=False, allow_infinity=False)


def test_matmul_examples(rng):
    a = rng.standard_normal((3, 4))
    np.testing.assert_array_equal(matmul(np.eye(3), a), a)
    np.testing.assert_array_equal(matmul(a, np.zeros((4, 2))), np.zeros((3, 2)))
    np.testing.assert_array_equal(matmul(np.array([[1.0, 2], [3, 4]]), np.array([[1.0], [1]])),
                                  [[3.0], [7.0]])


def test_matmul_dimension_mismatch():
    with pytest.raises(DimensionError):
        matmul(np.ones((2, 3)), np.ones((2, 3)))


def test_matmul_associative(rng):
    for _ in range(20):
        a, b, c = (rng.standard_normal(s) for s in [(4, 5), (5, 3), (3, 6)])
        lhs, rhs = matmul(matmul(a, b), c), matmul(a, matmul(b, c))
        assert np.linalg.norm(lhs - rhs) <= 1e-10 * np.linalg.norm(lhs)


def test_frob_err_sq_examples():
    a = np.arange(6.0).reshape(2, 3)
    assert frob_err_sq(a, a) == 0
    assert frob_err_sq(np.array([[1.0, 0]]), np.array([[0.0, 1]])) == 2
    assert frob_err_sq(np.array([[3.0]]), np.array([[1.0]])) == 4
    with pytest.raises(DimensionError):
        frob_err_sq(np.ones((1, 2)), np.ones((2, 1)))


eighths = st.integers(-80, 80).map(lambda k: k / 8)  # exact squares, no underflow


@given(arrays(float, (3, 2), elements=eighths), arrays(float, (3, 2), elements=eighths))
def test_frob_err_sq_symmetric_nonnegative(a, b):
    d = frob_err_sq(a, b)
    assert d == frob_err_sq(b, a) >= 0
    assert (d == 0) == np.array_equal(a, b)


def test_spectral_norm_examples(rng):
    assert spectral_norm_sq(np.eye(3)) == pytest.approx(1.0, rel=1e-12)
    assert spectral_norm_sq(np.diag([1.0, 2.0])) == pytest.approx(4.0, rel=1e-9)
    assert spectral_norm_sq(np.zeros((3, 2))) == 0.0
    a = rng.standard_normal((4, 3))
    expected = np.linalg.svd(a, compute_uv=False)[0] ** 2
    assert spectral_norm_sq(a) == pytest.approx(expected, rel=1e-6)


def test_spectral_norm_start_vector_not_degenerate():
    # ones() lies in the null space here
    assert spectral_norm_sq(np.array([[1.0, -1.0]])) == pytest.approx(2.0, rel=1e-9)


@settings(max_examples=50)
@given(arrays(float, (4, 3), elements=finite))
def test_spectral_norm_bounds(a):
    fro = frob_err_sq(a, np.zeros_like(a))
    s = spectral_norm_sq(a)
    assert s <= fro * (1 + 1e-9) + 1e-12
    assert s >= fro / min(a.shape) * (1 - 1e-6) - 1e-12


def test_logdet_examples(rng):
    ld, inv = logdet_and_inverse(np.zeros((2, 2)), 1.0)
    assert ld == pytest.approx(0.0, abs=1e-15)
    np.testing.assert_allclose(inv, np.eye(2))
    ld, inv = logdet_and_inverse(np.eye(2), 1.0)
    assert ld == pytest.approx(2 * np.log(2))
    np.testing.assert_allclose(inv, 0.5 * np.eye(2))
    w = rng.random((5, 4))
    g = w.T @ w
    ld, inv = logdet_and_inverse(g, 0.1)
    np.testing.assert_allclose(inv @ (g + 0.1 * np.eye(4)), np.eye(4), atol=1e-8)
    assert ld == pytest.approx(np.linalg.slogdet(g + 0.1 * np.eye(4))[1], rel=1e-12)


def test_logdet_not_pd_reports_condition():
    with pytest.raises(NumericalError, match="eigenvalues"):
        logdet_and_inverse(-5 * np.eye(2), 1.0)


def test_as_matrix_rejects_nonfinite():
    with pytest.raises(NumericalError):
        as_matrix([[1.0, np.nan]])
    assert as_matrix([1.0, 2.0]).shape == (2, 1)


def test_rng_reproducible():
    a = make_rng(7).random(5)
    b = make_rng(7).random(5)
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, make_rng(8).random(5))


def test_rng_across_processes():
    import subprocess
    import sys

    code = "from deepmf.numerics import make_rng; print(make_rng(2**63 + 5).random(4).tobytes().hex())"
    outs = {subprocess.run([sys.executable, "-c", code], capture_output=True, text=True, check=True).stdout
            for _ in range(2)}
    assert len(outs) == 1
