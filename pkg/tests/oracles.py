"""Independent reference computations used only by the tests.

Nothing here calls the package's matrix exponential or pricing code: the
exponential is a scaled Taylor series, integrals are composite Simpson sums,
and Monte Carlo samplers propagate the Euler chain directly.
"""

from __future__ import annotations

import math

import numpy as np


def taylor_expm(A, t=1.0, terms=40):
    """exp(A t) by scaling-and-squaring around a truncated Taylor series."""
    A = np.asarray(A, dtype=float) * t
    norm = np.abs(A).sum(axis=1).max()
    s = max(0, int(math.ceil(math.log2(norm / 0.25))) if norm > 0.25 else 0)
    B = A / 2**s
    n = A.shape[0]
    E = np.eye(n)
    term = np.eye(n)
    for k in range(1, terms + 1):
        term = term @ B / k
        E = E + term
    for _ in range(s):
        E = E @ E
    return E


def simpson(f, a, b, panels=10_000):
    """Composite Simpson rule for vector-valued ``f`` on ``[a, b]``."""
    if panels % 2:
        panels += 1
    x = np.linspace(a, b, panels + 1)
    vals = np.array([f(xi) for xi in x])
    w = np.ones(panels + 1)
    w[1:-1:2] = 4
    w[2:-1:2] = 2
    return (b - a) / (3 * panels) * np.tensordot(w, vals, axes=1)


def simpson_expm_integral(A, t, panels=2000):
    """int_0^t exp(u A) du using Taylor exponentials on a Simpson grid.

    Uses the semigroup on a uniform grid so only one Taylor exponential is needed.
    """
    if panels % 2:
        panels += 1
    h = t / panels
    step = taylor_expm(A, h)
    E = np.eye(A.shape[0])
    acc = np.zeros_like(E)
    for i in range(panels + 1):
        w = 1 if i in (0, panels) else (4 if i % 2 else 2)
        acc += w * E
        E = E @ step
    return acc * h / 3


def two_factor_euler_law(params, m, dt, lam=(0.0, 0.0), gam=(0.0, 0.0)):
    """Mean map and covariance of ``m`` Euler steps: ``X_m = c + D^m X_0 + N(0, S)``."""
    kZ, kY, sZ, sY, rho = params.kappa_Z, params.kappa_Y, params.sigma_Z, params.sigma_Y, params.rho
    D = np.array([[1 - (kZ - lam[0]) * dt, 0.0], [kY * dt, 1 - (kY - lam[1]) * dt]])
    b = np.array([gam[0] * dt, gam[1] * dt])
    K = np.array([[sZ * math.sqrt(dt), 0.0], [rho * sY * math.sqrt(dt), sY * math.sqrt((1 - rho**2) * dt)]])
    Dm = np.eye(2)
    c = np.zeros(2)
    S = np.zeros((2, 2))
    Q = K @ K.T
    for _ in range(m):
        c = c + Dm @ b
        S = S + Dm @ Q @ Dm.T
        Dm = D @ Dm
    return c, Dm, S


def two_factor_spot(params, X):
    return params.c + params.alpha * X[..., 1] ** 2 + params.beta * X[..., 0] ** 2


def euler_step_samples(params, x, h, n, rng, mu=None):
    """One Euler step of size ``h`` from ``x`` under the pricing measure (``n`` samples)."""
    x = np.asarray(x, dtype=float)
    d = x.size
    if d == 2:
        kZ, kY = params.kappa_Z, params.kappa_Y
        drift = np.array([-kZ * x[0], kY * (x[0] - x[1])])
        a = np.array([[params.sigma_Z**2, params.rho * params.sigma_Y * params.sigma_Z],
                      [params.rho * params.sigma_Y * params.sigma_Z, params.sigma_Y**2]])
    else:
        kZ, kY, kR = params.kappa_Z, params.kappa_Y, params.kappa_R
        r = x[2]
        drift = np.array([-kZ * x[0], kY * (x[0] - x[1]), kR * (params.theta_R - r)])
        sz, sy = params.sigma_Z, params.sigma_Y
        a = np.array([[sz**2, r * sz * sy, 0.0], [r * sz * sy, sy**2, 0.0],
                      [0.0, 0.0, params.sigma_R**2 * (1 - r * r)]])
    L = np.linalg.cholesky(a + 1e-300 * np.eye(d))
    eps = rng.standard_normal((n, d))
    return x + drift * h + math.sqrt(h) * eps @ L.T


def brute_noise_levels(prices, spreads):
    """Noise standard deviations by explicit loops."""
    K, J = prices.shape
    all_s = [spreads[k, j] for k in range(K) for j in range(J)
             if not math.isnan(prices[k, j]) and not math.isnan(spreads[k, j])]
    overall = sum(all_s) / len(all_s)
    out = np.full((K, J), np.nan)
    for j in range(J):
        col = [spreads[k, j] for k in range(K) if not math.isnan(prices[k, j]) and not math.isnan(spreads[k, j])]
        dj = sum(col) / len(col) if col else overall
        for k in range(K):
            if math.isnan(prices[k, j]):
                continue
            s = spreads[k, j] if not math.isnan(spreads[k, j]) else dj
            out[k, j] = math.sqrt((s + dj + overall) / 3)
    return out


def sample_skew(x):
    x = np.asarray(x, dtype=float)
    d = x - x.mean()
    return float(np.mean(d**3) / np.mean(d**2) ** 1.5)


def lag1_autocorr(x):
    x = np.asarray(x, dtype=float)
    x = x[~np.isnan(x)]
    d = x - x.mean()
    return float(d[1:] @ d[:-1] / (d @ d))
