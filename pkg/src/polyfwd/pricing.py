"""Conditional moments, forward prices, covariations and risk premia.

Every price is a matrix-exponential sandwich on the monomial basis:
``E[p(X_T) | X_t = x] = H(x)^T exp((T - t) G) p``. The ODE route for
quadratic polynomials is kept as an independent check of that identity and
is not used for pricing.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .linalg import expm_and_integral, expm_generic
from .model import (
    MarketPriceOfRisk,
    Params,
    UnsupportedMeasureError,
    basis_eval,
    diffusion_coefficients,
    drift_coefficients,
    generator_matrix,
    sigma_H,
    spot_coordinates,
)

__all__ = [
    "PricingError",
    "DegenerateVarianceError",
    "QuadraticPolynomial",
    "moment",
    "moment_ode",
    "weight_vector",
    "unit_weight",
    "forward_instant",
    "forward_period",
    "period_loading",
    "inst_covariance",
    "inst_correlation",
    "correlation_matrix",
    "risk_premium",
    "forward_curve",
]


class PricingError(ValueError):
    """Raised for mis-ordered times or incompatible inputs."""


class DegenerateVarianceError(ArithmeticError):
    """Raised when a correlation or hedge ratio has a zero-variance leg."""


@dataclass(frozen=True)
class QuadraticPolynomial:
    """``q(x) = q0 + q_lin^T x + x^T Q_mat x`` with ``Q_mat`` symmetric."""

    q0: float
    q_lin: NDArray
    Q_mat: NDArray

    def __post_init__(self):
        q_lin = np.asarray(self.q_lin, dtype=float)
        Q = np.asarray(self.Q_mat, dtype=float)
        if Q.shape != (q_lin.size, q_lin.size):
            raise PricingError("Q_mat must be square with the length of q_lin")
        if not np.allclose(Q, Q.T, rtol=0, atol=1e-12 * max(1.0, np.abs(Q).max())):
            raise PricingError("Q_mat must be symmetric")
        object.__setattr__(self, "q_lin", q_lin)
        object.__setattr__(self, "Q_mat", 0.5 * (Q + Q.T))

    def __call__(self, x: ArrayLike) -> NDArray | float:
        x = np.asarray(x, dtype=float)
        out = self.q0 + x @ self.q_lin + np.einsum("...i,ij,...j->...", x, self.Q_mat, x)
        return float(out) if np.ndim(out) == 0 else out

    def coordinates(self, params: Params) -> NDArray:
        """Coordinates on the model basis; fails if a monomial is not spanned."""
        d = params.dim
        if self.q_lin.size != d:
            raise PricingError(f"polynomial has dimension {self.q_lin.size}, model has {d}")
        Q = self.Q_mat
        if d == 3 and (Q[2, 2] != 0 or Q[0, 2] != 0 or Q[1, 2] != 0):
            raise PricingError("quadratic terms in r are not in the three-factor basis")
        off = 1 if d == 3 else 0
        p = np.zeros(params.n_basis)
        p[0] = self.q0
        p[1 : 1 + d] = self.q_lin
        p[3 + off] = Q[0, 0]
        p[4 + off] = 2 * Q[0, 1]
        p[5 + off] = Q[1, 1]
        return p


def _check_order(*times: float) -> None:
    for a, b in zip(times, times[1:]):
        if not (math.isfinite(a) and math.isfinite(b)):
            raise PricingError("times must be finite")
        if a > b:
            raise PricingError(f"times out of order: {a} > {b}")


def _gen(params: Params, measure: str, mpr: MarketPriceOfRisk | None) -> NDArray:
    return generator_matrix(params, measure, mpr)


def moment(params: Params, measure: str, p: ArrayLike, t: float, T: float,
           x: ArrayLike, mpr: MarketPriceOfRisk | None = None) -> NDArray | float:
    """``E[p(X_T) | X_t = x]`` for ``p`` given in basis coordinates."""
    _check_order(t, T)
    p = np.asarray(p, dtype=float)
    if p.shape != (params.n_basis,):
        raise PricingError(f"coordinate vector must have length {params.n_basis}")
    v = expm_generic(_gen(params, measure, mpr), T - t) @ p
    out = basis_eval(params, x) @ v
    return float(out) if np.ndim(out) == 0 else out


def moment_ode(params: Params, q: QuadraticPolynomial, t: float, T: float, x: ArrayLike,
               measure: str = "Q", mpr: MarketPriceOfRisk | None = None,
               max_step: float = 1e-3) -> float:
    """``E[q(X_T) | X_t = x]`` by RK4 integration of the Riccati-free linear ODE.

    With drift ``m0 - M x`` and ``tr(pi a(x)) = a0(pi) + a1(pi)^T x + x^T a2(pi) x``::

        phi' = psi^T m0 + a0(pi)
        psi' = -M^T psi + 2 pi m0 + a1(pi)
        pi'  = -pi M - M^T pi + a2(pi)
    """
    _check_order(t, T)
    x = np.asarray(x, dtype=float)
    m0, M = drift_coefficients(params, measure, mpr)
    A0, A1, A2 = diffusion_coefficients(params)

    def rhs(phi, psi, pi):
        a0 = np.sum(pi * A0)
        a1 = np.einsum("kl,ikl->i", pi, A1)
        a2 = np.einsum("kl,ijkl->ij", pi, A2)
        a2 = 0.5 * (a2 + a2.T)
        return (psi @ m0 + a0,
                -M.T @ psi + 2 * pi @ m0 + a1,
                -pi @ M - M.T @ pi + a2)

    phi, psi, pi = float(q.q0), q.q_lin.copy(), q.Q_mat.copy()
    tau = T - t
    n = max(1, math.ceil(tau / max_step - 1e-9))
    h = tau / n if tau > 0 else 0.0
    for _ in range(n if tau > 0 else 0):
        k1 = rhs(phi, psi, pi)
        k2 = rhs(phi + 0.5 * h * k1[0], psi + 0.5 * h * k1[1], pi + 0.5 * h * k1[2])
        k3 = rhs(phi + 0.5 * h * k2[0], psi + 0.5 * h * k2[1], pi + 0.5 * h * k2[2])
        k4 = rhs(phi + h * k3[0], psi + h * k3[1], pi + h * k3[2])
        phi = phi + h / 6 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
        psi = psi + h / 6 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
        pi = pi + h / 6 * (k1[2] + 2 * k2[2] + 2 * k3[2] + k4[2])
    return float(phi + psi @ x + x @ pi @ x)


def weight_vector(params: Params, measure: str, Ti: float, Tj: float,
                  mpr: MarketPriceOfRisk | None = None) -> NDArray:
    """``int_{Ti}^{Tj} exp(u G) du p_S = exp(Ti G) int_0^{Tj-Ti} exp(u G) du p_S``."""
    _check_order(Ti, Tj)
    G = _gen(params, measure, mpr)
    integral = expm_and_integral(G, Tj - Ti).integral @ spot_coordinates(params)
    return expm_generic(G, Ti) @ integral if Ti != 0 else integral


def unit_weight(params: Params, measure: str = "Q", mpr: MarketPriceOfRisk | None = None,
                length: float = 1.0) -> NDArray:
    """``int_0^length exp(u G) du p_S``; with ``length=1`` this is ``w_01``."""
    return weight_vector(params, measure, 0.0, length, mpr)


def forward_instant(params: Params, measure: str, t: float, T: float, x: ArrayLike,
                    mpr: MarketPriceOfRisk | None = None) -> NDArray | float:
    """Forward with instantaneous delivery at ``T``."""
    return moment(params, measure, spot_coordinates(params), t, T, x, mpr)


def period_loading(params: Params, measure: str, t: float, T1: float, T2: float,
                   mpr: MarketPriceOfRisk | None = None) -> NDArray:
    """Vector ``l`` with ``F(t, T1, T2, x) = H(x)^T l``."""
    _check_order(t, T1)
    if not T1 < T2:
        raise PricingError(f"delivery period requires T1 < T2 (got {T1}, {T2})")
    G = _gen(params, measure, mpr)
    w = expm_and_integral(G, T2 - T1).integral @ spot_coordinates(params)
    return expm_generic(G, T1 - t) @ w / (T2 - T1)


def forward_period(params: Params, measure: str, t: float, T1: float, T2: float,
                   x: ArrayLike, mpr: MarketPriceOfRisk | None = None) -> NDArray | float:
    """Forward with delivery period ``[T1, T2)``."""
    out = basis_eval(params, x) @ period_loading(params, measure, t, T1, T2, mpr)
    return float(out) if np.ndim(out) == 0 else out


def _leg_loading(params: Params, t: float, leg) -> NDArray:
    """Basis loading of a leg given as ``T`` (instantaneous) or ``(T1, T2)``."""
    if np.ndim(leg) == 0:
        T = float(leg)
        _check_order(t, T)
        return expm_generic(_gen(params, "Q", None), T - t) @ spot_coordinates(params)
    T1, T2 = leg
    return period_loading(params, "Q", t, float(T1), float(T2))


def inst_covariance(params: Params, t: float, leg1, leg2, x: ArrayLike) -> float:
    """Instantaneous covariation rate of two forwards under the pricing measure.

    Each leg is either a maturity ``T`` or a delivery period ``(T1, T2)``.
    For periods the loading is ``exp((T1 - t) G) w_{0, T2-T1} / (T2 - T1)``,
    i.e. the gradient of the quoted forward price itself.
    """
    u = _leg_loading(params, t, leg1)
    v = _leg_loading(params, t, leg2)
    return float(u @ sigma_H(params, x) @ v)


def inst_correlation(params: Params, t: float, leg1, leg2, x: ArrayLike,
                     tol: float = 1e-14) -> float:
    u = _leg_loading(params, t, leg1)
    v = _leg_loading(params, t, leg2)
    S = sigma_H(params, x)
    vu, vv = float(u @ S @ u), float(v @ S @ v)
    if vu <= tol or vv <= tol:
        raise DegenerateVarianceError(f"zero instantaneous variance (legs: {vu:.3e}, {vv:.3e})")
    return float(u @ S @ v) / math.sqrt(vu * vv)


def correlation_matrix(params: Params, t: float, legs: Sequence, x: ArrayLike,
                       tol: float = 1e-14) -> NDArray:
    """Pairwise instantaneous correlations for a list of legs."""
    L = np.array([_leg_loading(params, t, leg) for leg in legs])
    C = L @ sigma_H(params, x) @ L.T
    var = np.diag(C).copy()
    if np.any(var <= tol):
        raise DegenerateVarianceError("zero instantaneous variance in at least one leg")
    s = np.sqrt(var)
    R = C / np.outer(s, s)
    np.fill_diagonal(R, 1.0)
    return R


def risk_premium(params: Params, mpr: MarketPriceOfRisk, t: float, T1: float,
                 T2: float | None, x: ArrayLike) -> NDArray | float:
    """Forward risk premium: Q-forward minus P-expected (averaged) spot."""
    if params.dim != 2:
        raise UnsupportedMeasureError("risk premia need real-world dynamics (two-factor only)")
    GQ = _gen(params, "Q", None)
    GP = _gen(params, "P", mpr)
    pS = spot_coordinates(params)
    if T2 is None:
        _check_order(t, T1)
        diff = (expm_generic(GQ, T1 - t) - expm_generic(GP, T1 - t)) @ pS
    else:
        _check_order(t, T1)
        if not T1 < T2:
            raise PricingError(f"delivery period requires T1 < T2 (got {T1}, {T2})")
        length = T2 - T1
        wQ = expm_and_integral(GQ, length).integral @ pS
        wP = expm_and_integral(GP, length).integral @ pS
        diff = (expm_generic(GQ, T1 - t) @ wQ - expm_generic(GP, T1 - t) @ wP) / length
    out = basis_eval(params, x) @ diff
    return float(out) if np.ndim(out) == 0 else out


def forward_curve(params: Params, measure: str, t: float, x: ArrayLike,
                  maturities: Sequence[tuple[float, float]],
                  mpr: MarketPriceOfRisk | None = None) -> NDArray:
    """Period forwards for a list of ``(T1, T2)``; one integral per distinct length."""
    G = _gen(params, measure, mpr)
    pS = spot_coordinates(params)
    H = basis_eval(params, x)
    cache: dict[float, NDArray] = {}
    out = np.empty(len(maturities))
    for i, (T1, T2) in enumerate(maturities):
        _check_order(t, T1)
        if not T1 < T2:
            raise PricingError(f"delivery period requires T1 < T2 (got {T1}, {T2})")
        length = T2 - T1
        if length not in cache:
            cache[length] = expm_and_integral(G, length).integral @ pS
        out[i] = H @ (expm_generic(G, T1 - t) @ cache[length] / length)
    return out
