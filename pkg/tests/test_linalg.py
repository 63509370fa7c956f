import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from polyfwd.linalg import (
    InvalidInputError,
    NotPSDError,
    cholesky_psd,
    expm_and_integral,
    expm_generic,
    structural_matrices,
    unvec,
    vec,
    vech,
)
from polyfwd.model import generator_matrix

from oracles import simpson_expm_integral, taylor_expm


def _admissible(rng, n=6, scale=1.0):
    A = np.zeros((n, n))
    A[0, 1:] = rng.normal(size=n - 1) * scale
    C = np.triu(rng.normal(size=(n - 1, n - 1))) * scale
    d = rng.uniform(0.05, 1.0, n - 1) * rng.choice([-1, 1], n - 1)
    np.fill_diagonal(C, d)
    A[1:, 1:] = C
    return A


def test_expm_generic_matches_taylor(rng):
    for _ in range(20):
        A = rng.normal(size=(5, 5))
        np.testing.assert_allclose(expm_generic(A, 0.7), taylor_expm(A, 0.7), rtol=1e-11, atol=1e-12)


def test_closed_form_used_for_generators(ref_params):
    G = generator_matrix(ref_params[0])
    res = expm_and_integral(G, 3.0)
    assert res.method == "closed_form"
    np.testing.assert_allclose(res.exp, expm_generic(G, 3.0), rtol=1e-12, atol=1e-13)


def test_integral_against_simpson(ref_params):
    G = generator_matrix(ref_params[0])
    res = expm_and_integral(G, 1.0)
    np.testing.assert_allclose(res.integral, simpson_expm_integral(G, 1.0), rtol=1e-10, atol=1e-12)


def test_time_zero_is_identity():
    A = np.triu(np.ones((4, 4)))
    A[:, 0] = 0
    res = expm_and_integral(A, 0.0)
    np.testing.assert_array_equal(res.exp, np.eye(4))
    np.testing.assert_array_equal(res.integral, np.zeros((4, 4)))


def test_zero_matrix_integral_is_t_identity():
    res = expm_and_integral(np.zeros((3, 3)), 2.5)
    assert res.method == "augmented_generic"
    np.testing.assert_allclose(res.integral, 2.5 * np.eye(3), atol=1e-15)


def test_small_diagonal_falls_back_to_augmented(rng):
    A = _admissible(rng, 4)
    A[2, 2] = 1e-9
    res = expm_and_integral(A, 2.0)
    assert res.method == "augmented_generic"
    np.testing.assert_allclose(res.exp, taylor_expm(A, 2.0), rtol=1e-10, atol=1e-12)


def test_non_triangular_uses_augmented(rng):
    A = rng.normal(size=(4, 4))
    res = expm_and_integral(A, 1.0)
    assert res.method == "augmented_generic"
    np.testing.assert_allclose(res.integral, simpson_expm_integral(A, 1.0), rtol=1e-9, atol=1e-11)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.01, 10.0))
def test_closed_form_equals_augmented_property(seed, t):
    rng = np.random.default_rng(seed)
    A = _admissible(rng, 6, 0.5)
    cf = expm_and_integral(A, t)
    assert cf.method == "closed_form"
    aug = expm_and_integral(A, t, closed_form_tol=np.inf)
    assert aug.method == "augmented_generic"
    np.testing.assert_allclose(cf.exp, aug.exp, rtol=1e-10, atol=1e-10 * max(1, np.abs(aug.exp).max()))
    np.testing.assert_allclose(cf.integral, aug.integral, rtol=1e-10,
                               atol=1e-10 * max(1, np.abs(aug.integral).max()))


@pytest.mark.parametrize("bad", [np.ones((2, 3)), np.array([[np.nan]]), np.zeros((0, 0))])
def test_invalid_inputs(bad):
    with pytest.raises(InvalidInputError):
        expm_and_integral(bad, 1.0)


def test_negative_time_rejected():
    with pytest.raises(InvalidInputError):
        expm_and_integral(np.zeros((2, 2)), -1.0)


def test_vec_vech_examples():
    M = np.array([[1.0, 2.0], [3.0, 4.0]])
    np.testing.assert_array_equal(vec(M), [1, 3, 2, 4])
    np.testing.assert_array_equal(unvec(vec(M), 2), M)
    S = np.array([[1.0, 2.0], [2.0, 5.0]])
    np.testing.assert_array_equal(vech(S), [1, 2, 5])
    with pytest.raises(InvalidInputError):
        vech(M)


@pytest.mark.parametrize("d", [1, 2, 3, 4])
def test_structural_identities(d, rng):
    G, H, L = structural_matrices(d)
    A = rng.normal(size=(d, d))
    S = A + A.T
    np.testing.assert_array_equal(G @ vech(S), vec(S))
    np.testing.assert_array_equal(H @ vec(S), vech(S))
    np.testing.assert_array_equal(L @ vec(A), vec(A.T))
    np.testing.assert_array_equal(H @ G, np.eye(d * (d + 1) // 2))
    assert not G.flags.writeable


def test_cholesky_psd_exact_and_repair(rng):
    A = rng.normal(size=(5, 5))
    S = A @ A.T
    np.testing.assert_allclose(cholesky_psd(S), np.linalg.cholesky(S))
    v = rng.normal(size=5)
    R = np.outer(v, v)  # rank one, singular
    R[0, 0] -= 1e-12
    L = cholesky_psd(R)
    assert np.all(np.isfinite(L))
    assert np.abs(L @ L.T - R).max() <= 1e-8 * np.linalg.norm(R, 2)


def test_cholesky_psd_rejects_indefinite():
    with pytest.raises(NotPSDError) as exc:
        cholesky_psd(np.diag([1.0, -0.5]))
    assert exc.value.eigenvalue == pytest.approx(-0.5)
