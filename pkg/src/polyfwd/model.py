"""Model definitions for the two- and three-factor polynomial specifications.

The spot price is ``S = c + alpha * Y**2 + beta * Z**2`` where the factors
follow linear-drift diffusions whose squared volatility is at most quadratic
in the state. Everything downstream works in the monomial basis exported as
``BASIS_TWO_FACTOR`` / ``BASIS_THREE_FACTOR``; no other module re-declares
the ordering.
"""

from __future__ import annotations

import math
from dataclasses import MISSING, asdict, dataclass, fields
from typing import Union

import numpy as np
from numpy.typing import ArrayLike, NDArray

__all__ = [
    "BASIS_TWO_FACTOR",
    "BASIS_THREE_FACTOR",
    "TwoFactorParams",
    "ThreeFactorParams",
    "MarketPriceOfRisk",
    "UnsupportedMeasureError",
    "basis_names",
    "basis_eval",
    "basis_jacobian",
    "generator_matrix",
    "spot_coordinates",
    "spot_price",
    "diffusion_matrix",
    "diffusion_coefficients",
    "drift_coefficients",
    "sigma_H",
    "sigma_H_jacobian",
    "validate_params",
    "params_from_dict",
    "params_to_dict",
    "REFERENCE_PARAMS",
]

BASIS_TWO_FACTOR = ("1", "z", "y", "z^2", "yz", "y^2")
BASIS_THREE_FACTOR = ("1", "z", "y", "r", "z^2", "yz", "y^2")


class UnsupportedMeasureError(ValueError):
    """Raised when the real-world measure is requested for a model without one."""


@dataclass(frozen=True)
class TwoFactorParams:
    c: float
    alpha: float
    beta: float
    kappa_Z: float
    kappa_Y: float
    sigma_Z: float
    sigma_Y: float
    rho: float
    z0: float = 0.0
    y0: float = 0.0

    spec = "two_factor"
    dim = 2
    n_basis = 6

    @property
    def x0(self) -> NDArray:
        return np.array([self.z0, self.y0])


@dataclass(frozen=True)
class ThreeFactorParams:
    c: float
    alpha: float
    beta: float
    kappa_Z: float
    kappa_Y: float
    sigma_Z: float
    sigma_Y: float
    kappa_R: float
    theta_R: float
    sigma_R: float
    z0: float = 0.0
    y0: float = 0.0
    r0: float = 0.0

    spec = "three_factor"
    dim = 3
    n_basis = 7

    @property
    def x0(self) -> NDArray:
        return np.array([self.z0, self.y0, self.r0])


@dataclass(frozen=True)
class MarketPriceOfRisk:
    lambda_Z: float = 0.0
    lambda_Y: float = 0.0
    gamma_Z: float = 0.0
    gamma_Y: float = 0.0

    @property
    def is_zero(self) -> bool:
        return self.lambda_Z == self.lambda_Y == self.gamma_Z == self.gamma_Y == 0.0


Params = Union[TwoFactorParams, ThreeFactorParams]

# Estimated parameters of the two-factor specification (German Cal base data).
REFERENCE_PARAMS = {
    "c": 0.239614,
    "alpha": 10.250035,
    "beta": 0.176807,
    "kappa_Z": 0.010022,
    "kappa_Y": 0.400207,
    "sigma_Z": 0.406479,
    "sigma_Y": 0.889130,
    "rho": 0.112439,
    "lambda_Z": 0.089990,
    "lambda_Y": 0.111842,
    "gamma_Z": 0.086791,
    "gamma_Y": 0.127365,
    "z0": 2.358048,
    "y0": 2.007557,
}


def basis_names(params: Params) -> tuple[str, ...]:
    return BASIS_TWO_FACTOR if params.dim == 2 else BASIS_THREE_FACTOR


def _state(params: Params, x: ArrayLike) -> NDArray:
    x = np.asarray(x, dtype=float)
    if x.shape[-1:] != (params.dim,):
        raise ValueError(f"state must have trailing dimension {params.dim}, got shape {x.shape}")
    return x


def basis_eval(params: Params, x: ArrayLike) -> NDArray:
    """Evaluate ``H(x)``; vectorised over leading axes of ``x``."""
    x = _state(params, x)
    z, y = x[..., 0], x[..., 1]
    one = np.ones_like(z)
    if params.dim == 2:
        cols = (one, z, y, z * z, y * z, y * y)
    else:
        r = x[..., 2]
        cols = (one, z, y, r, z * z, y * z, y * y)
    return np.stack(cols, axis=-1)


def basis_jacobian(params: Params, x: ArrayLike) -> NDArray:
    """Jacobian ``dH/dx`` with shape ``(..., n_basis, dim)``."""
    x = _state(params, x)
    z, y = x[..., 0], x[..., 1]
    J = np.zeros(x.shape[:-1] + (params.n_basis, params.dim))
    J[..., 1, 0] = 1.0
    J[..., 2, 1] = 1.0
    off = 0
    if params.dim == 3:
        J[..., 3, 2] = 1.0
        off = 1
    J[..., 3 + off, 0] = 2 * z
    J[..., 4 + off, 0] = y
    J[..., 4 + off, 1] = z
    J[..., 5 + off, 1] = 2 * y
    return J


def drift_coefficients(params: Params, measure: str = "Q",
                       mpr: MarketPriceOfRisk | None = None) -> tuple[NDArray, NDArray]:
    """Return ``(m0, M)`` with drift ``mu(x) = m0 - M x``.

    Under Q this is ``(kappa theta, kappa)``; under P (two-factor only) it is
    ``(gamma, kappa - Lambda)``.
    """
    measure = _measure(params, measure, mpr)
    kZ, kY = params.kappa_Z, params.kappa_Y
    if params.dim == 2:
        kappa = np.array([[kZ, 0.0], [-kY, kY]])
        if measure == "Q":
            return np.zeros(2), kappa
        mpr = mpr or MarketPriceOfRisk()
        return (np.array([mpr.gamma_Z, mpr.gamma_Y]),
                kappa - np.diag([mpr.lambda_Z, mpr.lambda_Y]))
    kappa = np.array([[kZ, 0.0, 0.0], [-kY, kY, 0.0], [0.0, 0.0, params.kappa_R]])
    return np.array([0.0, 0.0, params.kappa_R * params.theta_R]), kappa


def _measure(params: Params, measure: str, mpr: MarketPriceOfRisk | None) -> str:
    measure = measure.upper()
    if measure not in ("Q", "P"):
        raise ValueError(f"measure must be 'Q' or 'P', got {measure!r}")
    if measure == "P" and params.dim != 2:
        raise UnsupportedMeasureError("real-world dynamics are only defined for the two-factor model")
    return measure


def generator_matrix(params: Params, measure: str = "Q",
                     mpr: MarketPriceOfRisk | None = None) -> NDArray:
    """Matrix ``G`` of the generator on the monomial basis: ``G p(x) = H(x)^T G p``."""
    measure = _measure(params, measure, mpr)
    kZ, kY = params.kappa_Z, params.kappa_Y
    sZ, sY = params.sigma_Z, params.sigma_Y
    if params.dim == 2:
        sZY = params.rho * sY * sZ
        if measure == "P":
            m = mpr or MarketPriceOfRisk()
            lZ, lY, gZ, gY = m.lambda_Z, m.lambda_Y, m.gamma_Z, m.gamma_Y
        else:
            lZ = lY = gZ = gY = 0.0
        return np.array([
            [0.0, gZ, gY, sZ**2, sZY, sY**2],
            [0.0, lZ - kZ, kY, 2 * gZ, gY, 0.0],
            [0.0, 0.0, lY - kY, 0.0, gZ, 2 * gY],
            [0.0, 0.0, 0.0, 2 * (lZ - kZ), kY, 0.0],
            [0.0, 0.0, 0.0, 0.0, (lZ + lY) - (kZ + kY), 2 * kY],
            [0.0, 0.0, 0.0, 0.0, 0.0, 2 * (lY - kY)],
        ])
    kR, thR = params.kappa_R, params.theta_R
    return np.array([
        [0.0, 0.0, 0.0, kR * thR, sZ**2, 0.0, sY**2],
        [0.0, -kZ, kY, 0.0, 0.0, 0.0, 0.0],
        [0.0, 0.0, -kY, 0.0, 0.0, 0.0, 0.0],
        [0.0, 0.0, 0.0, -kR, 0.0, sY * sZ, 0.0],
        [0.0, 0.0, 0.0, 0.0, -2 * kZ, kY, 0.0],
        [0.0, 0.0, 0.0, 0.0, 0.0, -kZ - kY, 2 * kY],
        [0.0, 0.0, 0.0, 0.0, 0.0, 0.0, -2 * kY],
    ])


def spot_coordinates(params: Params) -> NDArray:
    if params.dim == 2:
        return np.array([params.c, 0.0, 0.0, params.beta, 0.0, params.alpha])
    return np.array([params.c, 0.0, 0.0, 0.0, params.beta, 0.0, params.alpha])


def spot_price(params: Params, x: ArrayLike) -> NDArray | float:
    out = basis_eval(params, x) @ spot_coordinates(params)
    return float(out) if np.ndim(out) == 0 else out


def diffusion_matrix(params: Params, x: ArrayLike) -> NDArray:
    """``a(x) = sigma(x) sigma(x)^T``; vectorised over leading axes."""
    x = _state(params, x)
    sZ, sY = params.sigma_Z, params.sigma_Y
    a = np.zeros(x.shape[:-1] + (params.dim, params.dim))
    a[..., 0, 0] = sZ**2
    a[..., 1, 1] = sY**2
    if params.dim == 2:
        a[..., 0, 1] = a[..., 1, 0] = params.rho * sY * sZ
    else:
        r = x[..., 2]
        a[..., 0, 1] = a[..., 1, 0] = r * sY * sZ
        a[..., 2, 2] = params.sigma_R**2 * (1.0 - r * r)
    return a


def diffusion_coefficients(params: Params) -> tuple[NDArray, NDArray, NDArray]:
    """Coefficients of ``a(x) = A0 + sum_i x_i A1[i] + sum_ij x_i x_j A2[i, j]``."""
    d = params.dim
    A0 = diffusion_matrix(params, np.zeros(d))
    A1 = np.zeros((d, d, d))
    A2 = np.zeros((d, d, d, d))
    if d == 3:
        sZY = params.sigma_Y * params.sigma_Z
        A0[0, 1] = A0[1, 0] = 0.0
        A1[2, 0, 1] = A1[2, 1, 0] = sZY
        A2[2, 2, 2, 2] = -params.sigma_R**2
    return A0, A1, A2


def sigma_H(params: Params, x: ArrayLike) -> NDArray:
    """Instantaneous covariation matrix of ``H(X)``; vectorised over leading axes."""
    x = _state(params, x)
    z, y = x[..., 0], x[..., 1]
    sZ2, sY2 = params.sigma_Z**2, params.sigma_Y**2
    n = params.n_basis
    S = np.zeros(x.shape[:-1] + (n, n))
    if params.dim == 2:
        q = params.rho * params.sigma_Y * params.sigma_Z
        rows = {
            (1, 1): sZ2 + 0 * z,
            (1, 2): q + 0 * z,
            (1, 3): 2 * sZ2 * z,
            (1, 4): sZ2 * y + q * z,
            (1, 5): 2 * q * y,
            (2, 2): sY2 + 0 * z,
            (2, 3): 2 * q * z,
            (2, 4): sY2 * z + q * y,
            (2, 5): 2 * sY2 * y,
            (3, 3): 4 * sZ2 * z * z,
            (3, 4): 2 * sZ2 * y * z + 2 * q * z * z,
            (3, 5): 4 * q * y * z,
            (4, 4): sZ2 * y * y + sY2 * z * z + 2 * q * y * z,
            (4, 5): 2 * q * y * y + 2 * sY2 * y * z,
            (5, 5): 4 * sY2 * y * y,
        }
    else:
        r = x[..., 2]
        q = params.sigma_Y * params.sigma_Z * r
        rows = {
            (1, 1): sZ2 + 0 * z,
            (1, 2): q,
            (1, 4): 2 * sZ2 * z,
            (1, 5): sZ2 * y + q * z,
            (1, 6): 2 * q * y,
            (2, 2): sY2 + 0 * z,
            (2, 4): 2 * q * z,
            (2, 5): sY2 * z + q * y,
            (2, 6): 2 * sY2 * y,
            (3, 3): params.sigma_R**2 * (1.0 - r * r),
            (4, 4): 4 * sZ2 * z * z,
            (4, 5): 2 * sZ2 * y * z + 2 * q * z * z,
            (4, 6): 4 * q * y * z,
            (5, 5): sZ2 * y * y + sY2 * z * z + 2 * q * y * z,
            (5, 6): 2 * q * y * y + 2 * sY2 * y * z,
            (6, 6): 4 * sY2 * y * y,
        }
    for (i, j), v in rows.items():
        S[..., i, j] = v
        S[..., j, i] = v
    return S


def sigma_H_jacobian(params: Params, x: ArrayLike) -> NDArray:
    """``J_H(x) a(x) J_H(x)^T``; the slow reference form of :func:`sigma_H`."""
    J = basis_jacobian(params, x)
    a = diffusion_matrix(params, x)
    return J @ a @ np.swapaxes(J, -1, -2)


def validate_params(params: Params, mpr: MarketPriceOfRisk | None = None,
                    calibration: bool = True) -> list[str]:
    """List every violated constraint; an empty list means the parameters are admissible.

    With ``calibration=True`` the ordering ``1 >= kappa_Y >= kappa_Z >= 0`` is
    also enforced. Never raises.
    """
    out: list[str] = []
    values = asdict(params)
    if mpr is not None:
        values.update(asdict(mpr))
    for name, v in values.items():
        if not math.isfinite(v):
            out.append(f"{name} must be finite (got {v})")
    if out:
        return out

    for name in ("c", "alpha", "beta"):
        if values[name] < 0:
            out.append(f"{name} >= 0 violated ({values[name]})")
    for name in ("sigma_Z", "sigma_Y"):
        if values[name] <= 0:
            out.append(f"{name} > 0 violated ({values[name]})")
    if params.dim == 2:
        if not -1.0 < params.rho < 1.0:
            out.append(f"rho in (-1, 1) violated ({params.rho})")
    else:
        kR, thR, sR = params.kappa_R, params.theta_R, params.sigma_R
        if kR <= 0:
            out.append(f"kappa_R > 0 violated ({kR})")
        if sR <= 0:
            out.append(f"sigma_R > 0 violated ({sR})")
        if not -1.0 < thR < 1.0:
            out.append(f"theta_R in (-1, 1) violated ({thR})")
        if not -1.0 < params.r0 < 1.0:
            out.append(f"r0 in (-1, 1) violated ({params.r0})")
        if kR * (1 + thR) < sR**2:
            out.append(f"kappa_R(1+theta_R) >= sigma_R^2 violated ({kR * (1 + thR)} < {sR**2})")
        if kR * (1 - thR) < sR**2:
            out.append(f"kappa_R(1-theta_R) >= sigma_R^2 violated ({kR * (1 - thR)} < {sR**2})")
    if calibration:
        kZ, kY = params.kappa_Z, params.kappa_Y
        if kY > 1:
            out.append(f"kappa_Y <= 1 violated ({kY})")
        if kY < kZ:
            out.append(f"kappa_Y >= kappa_Z violated ({kY} < {kZ})")
        if kZ < 0:
            out.append(f"kappa_Z >= 0 violated ({kZ})")
    return out


_MPR_KEYS = tuple(f.name for f in fields(MarketPriceOfRisk))


def params_from_dict(d: dict) -> tuple[Params, MarketPriceOfRisk | None]:
    """Build parameters from a flat mapping keyed by parameter name.

    The model is three-factor when any of ``kappa_R``, ``theta_R``,
    ``sigma_R`` is present (or ``spec == "three_factor"``).
    """
    d = dict(d)
    spec = d.pop("spec", None)
    three = spec == "three_factor" or any(k in d for k in ("kappa_R", "theta_R", "sigma_R"))
    cls = ThreeFactorParams if three else TwoFactorParams
    names = {f.name for f in fields(cls)}
    unknown = set(d) - names - set(_MPR_KEYS)
    if unknown:
        raise KeyError(f"unknown parameter names: {sorted(unknown)}")
    missing = {f.name for f in fields(cls) if f.default is MISSING and f.name not in d}
    if missing:
        raise KeyError(f"missing parameters: {sorted(missing)}")
    params = cls(**{k: float(v) for k, v in d.items() if k in names})
    mpr = None
    if any(k in d for k in _MPR_KEYS):
        if three:
            raise UnsupportedMeasureError("market price of risk is only supported for the two-factor model")
        mpr = MarketPriceOfRisk(**{k: float(d.get(k, 0.0)) for k in _MPR_KEYS})
    return params, mpr


def params_to_dict(params: Params, mpr: MarketPriceOfRisk | None = None) -> dict:
    out = asdict(params)
    if mpr is not None:
        out.update(asdict(mpr))
    if params.dim == 3:
        out["spec"] = "three_factor"
    return out
