import numpy as np
import pytest

from polyfwd.model import (
    BASIS_THREE_FACTOR,
    BASIS_TWO_FACTOR,
    REFERENCE_PARAMS,
    MarketPriceOfRisk,
    ThreeFactorParams,
    TwoFactorParams,
    UnsupportedMeasureError,
    basis_eval,
    diffusion_matrix,
    generator_matrix,
    params_from_dict,
    params_to_dict,
    sigma_H,
    sigma_H_jacobian,
    spot_coordinates,
    spot_price,
    validate_params,
)

from oracles import euler_step_samples


def simple2(**kw):
    base = dict(c=1.0, alpha=2.0, beta=3.0, kappa_Z=0.5, kappa_Y=0.8, sigma_Z=1.0, sigma_Y=1.0, rho=0.0)
    base.update(kw)
    return TwoFactorParams(**base)


def test_basis_examples(three_factor):
    p = simple2()
    np.testing.assert_array_equal(basis_eval(p, [0, 0]), [1, 0, 0, 0, 0, 0])
    np.testing.assert_array_equal(basis_eval(p, [2, 3]), [1, 2, 3, 4, 6, 9])
    np.testing.assert_array_equal(basis_eval(three_factor, [1, 1, 0.5]), [1, 1, 1, 0.5, 1, 1, 1])
    assert len(BASIS_TWO_FACTOR) == 6 and len(BASIS_THREE_FACTOR) == 7
    with pytest.raises(ValueError):
        basis_eval(p, [1, 2, 3])


def test_generator_reference(ref_params):
    p, mpr = ref_params
    G = generator_matrix(p, "Q")
    assert G[1, 1] == -0.010022
    assert G[5, 5] == pytest.approx(-0.800414, abs=1e-15)
    Gl = generator_matrix(p, "P", mpr)
    assert Gl[1, 1] == pytest.approx(0.079968, abs=1e-15)
    for M in (G, Gl):
        assert np.all(M[:, 0] == 0)
        assert np.all(np.tril(M, -1) == 0)


def test_generator_zero_vol_row():
    G = generator_matrix(simple2(sigma_Z=1e-300, sigma_Y=1e-300))
    np.testing.assert_allclose(G[0, 3:], 0, atol=1e-300)


def test_generator_three_factor(three_factor):
    G = generator_matrix(three_factor)
    assert G[0, 3] == pytest.approx(three_factor.kappa_R * three_factor.theta_R)
    assert G[3, 5] == pytest.approx(three_factor.sigma_Y * three_factor.sigma_Z)
    assert G[0, 5] == 0.0
    assert np.all(G[:, 0] == 0)
    with pytest.raises(UnsupportedMeasureError):
        generator_matrix(three_factor, "P", MarketPriceOfRisk())


def test_spot_coordinates(ref_params):
    np.testing.assert_array_equal(spot_coordinates(simple2()), [1, 0, 0, 3, 0, 2])
    p3 = ThreeFactorParams(1, 2, 3, 0.1, 0.2, 1, 1, 1, 0, 0.5)
    np.testing.assert_array_equal(spot_coordinates(p3), [1, 0, 0, 0, 3, 0, 2])
    np.testing.assert_array_equal(spot_coordinates(ref_params[0]), [0.239614, 0, 0, 0.176807, 0, 10.250035])


def test_spot_price(ref_params):
    p = simple2()
    assert spot_price(p, [1, 1]) == 6
    assert spot_price(p, [0, 0]) == p.c
    q, _ = ref_params
    z, y = q.z0, q.y0
    assert spot_price(q, [z, y]) == pytest.approx(q.c + q.alpha * y * y + q.beta * z * z, rel=1e-15)


def test_spot_price_at_least_c(ref_params, rng):
    p, _ = ref_params
    x = rng.normal(scale=5, size=(1000, 2))
    assert np.all(spot_price(p, x) >= p.c)


def test_diffusion_examples(three_factor):
    np.testing.assert_array_equal(diffusion_matrix(simple2(), [0.3, 0.1]), np.eye(2))
    a = diffusion_matrix(three_factor, [1.0, 2.0, 0.0])
    np.testing.assert_allclose(a, np.diag([0.16, 0.64, 0.25]))
    for r in (-1.0, 1.0):
        assert diffusion_matrix(three_factor, [0.0, 0.0, r])[2, 2] == 0.0


def test_sigma_at_origin(ref_params):
    p, _ = ref_params
    S = sigma_H(p, [0.0, 0.0])
    a = diffusion_matrix(p, [0.0, 0.0])
    np.testing.assert_allclose(S[1:3, 1:3], a)
    S2 = S.copy()
    S2[1:3, 1:3] = 0
    assert np.all(S2 == 0)


def test_sigma_three_factor_r_row(three_factor, rng):
    x = np.array([0.7, -0.3, 0.45])
    S = sigma_H(three_factor, x)
    assert S[3, 3] == pytest.approx(three_factor.sigma_R**2 * (1 - 0.45**2))
    assert np.all(np.delete(S[3], 3) == 0)


@pytest.mark.parametrize("which", ["two", "three"])
def test_sigma_matches_jacobian_and_psd(which, ref_params, three_factor, rng):
    p = ref_params[0] if which == "two" else three_factor
    x = rng.normal(scale=3, size=(1000, p.dim))
    if p.dim == 3:
        x[:, 2] = rng.uniform(-1, 1, 1000)
    A = sigma_H(p, x)
    B = sigma_H_jacobian(p, x)
    assert np.abs(A - B).max() <= 1e-12 * max(1.0, np.abs(B).max())
    assert np.linalg.eigvalsh(A).min() >= -1e-10 * max(1.0, np.abs(A).max())


def test_validate_params(ref_params):
    p, mpr = ref_params
    assert validate_params(p, mpr) == []
    bad = ThreeFactorParams(0.1, 1, 1, 0.1, 0.2, 1, 1, kappa_R=1, theta_R=0.5, sigma_R=1.3)
    msgs = validate_params(bad, calibration=False)
    assert any("kappa_R(1-theta_R)" in m for m in msgs)
    assert any("rho" in m for m in validate_params(simple2(rho=1.0)))
    assert validate_params(simple2(kappa_Z=0.9, kappa_Y=0.5), calibration=True)
    assert validate_params(simple2(kappa_Z=0.9, kappa_Y=0.5), calibration=False) == []
    assert validate_params(simple2(c=float("nan")))


def test_params_roundtrip(three_factor):
    p, mpr = params_from_dict(REFERENCE_PARAMS)
    assert params_from_dict(params_to_dict(p, mpr)) == (p, mpr)
    assert params_from_dict(params_to_dict(three_factor))[0] == three_factor
    with pytest.raises(KeyError):
        params_from_dict({"c": 1.0})
    with pytest.raises(KeyError):
        params_from_dict({**REFERENCE_PARAMS, "bogus": 1})


@pytest.mark.parametrize("which", ["two", "three"])
def test_generator_matches_simulated_drift(which, ref_params, three_factor):
    """E[p(X_h)] - p(x) ~ h (G p)(x) for every basis monomial (one Euler step)."""
    p = ref_params[0] if which == "two" else three_factor
    x = np.array([1.2, -0.7]) if p.dim == 2 else np.array([1.2, -0.7, 0.35])
    h = 1e-4
    n = 1_000_000
    rng = np.random.default_rng(11)
    X = euler_step_samples(p, x, h, n, rng)
    G = generator_matrix(p)
    Hx = basis_eval(p, x)
    HX = basis_eval(p, X)
    for i in range(1, p.n_basis):
        inc = (HX[:, i] - Hx[i]) / h
        se = inc.std(ddof=1) / np.sqrt(n)
        expected = Hx @ G[:, i]
        assert abs(inc.mean() - expected) <= 4 * se, (i, inc.mean(), expected, se)
