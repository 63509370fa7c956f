"""Quadratic Kalman filter for nearby calendar-year forward quotes.

The two-factor state is augmented with its second-order monomials,
``X~ = (Z, Y, Z^2, YZ, Y^2)``, so that the quadratic forward map becomes
affine and an ordinary Kalman recursion applies. The transition uses the
Euler discretisation of the real-world dynamics; the measurement uses the
pricing-measure generator.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .linalg import NotPSDError, cholesky_psd, expm_and_integral, expm_generic, structural_matrices
from .model import MarketPriceOfRisk, TwoFactorParams, generator_matrix, spot_coordinates

__all__ = [
    "QuoteSeries",
    "NoiseConfigError",
    "SingularInnovationError",
    "Discretization",
    "FilterState",
    "FilterOutput",
    "noise_levels",
    "discretize",
    "augment_dynamics",
    "augment_state",
    "MeasurementMaps",
    "measurement_map",
    "qkf_step",
    "run_filter",
]

LOG_2PI = math.log(2 * math.pi)


class NoiseConfigError(ValueError):
    """Raised when no spread information is available to build the noise model."""


class SingularInnovationError(np.linalg.LinAlgError):
    def __init__(self, date_index: int, message: str = ""):
        self.date_index = date_index
        super().__init__(f"innovation covariance not invertible at date index {date_index}"
                         + (f": {message}" if message else ""))


@dataclass(frozen=True)
class QuoteSeries:
    """Nearby-forward quotes on a sequence of dates.

    Parameters
    ----------
    times : (K,) array
        Quote times in years from the anchor, strictly increasing.
    year_fracs : (K,) array
        Position of each quote date within its calendar year, in ``[0, 1)``.
        The ``j``-th nearby delivers from ``j - year_frac`` years ahead.
    prices : (K, J) array
        Consensus prices; ``NaN`` where the contract was not quoted.
    spreads : (K, J) array
        Price spreads; ``NaN`` where unknown.
    labels : sequence of str, optional
        Date labels for reporting.
    """

    times: NDArray
    year_fracs: NDArray
    prices: NDArray
    spreads: NDArray
    labels: tuple = ()

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        fracs = np.asarray(self.year_fracs, dtype=float)
        prices = np.atleast_2d(np.asarray(self.prices, dtype=float))
        spreads = np.atleast_2d(np.asarray(self.spreads, dtype=float))
        K = times.size
        if K == 0:
            raise ValueError("quote series is empty")
        if fracs.shape != (K,) or prices.shape[0] != K or spreads.shape != prices.shape:
            raise ValueError("quote series arrays have inconsistent shapes")
        if np.any(np.diff(times) <= 0):
            raise ValueError("quote times must be strictly increasing")
        if np.any((fracs < 0) | (fracs >= 1)):
            raise ValueError("year fractions must lie in [0, 1)")
        present = ~np.isnan(prices)
        if np.any(prices[present] <= 0):
            raise ValueError("quoted prices must be positive")
        if np.any(spreads[~np.isnan(spreads)] < 0):
            raise ValueError("spreads must be nonnegative")
        if self.labels and len(self.labels) != K:
            raise ValueError("labels must match the number of dates")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "year_fracs", fracs)
        object.__setattr__(self, "prices", prices)
        object.__setattr__(self, "spreads", spreads)
        object.__setattr__(self, "labels", tuple(self.labels))

    @property
    def n_dates(self) -> int:
        return self.times.size

    @property
    def n_contracts(self) -> int:
        return self.prices.shape[1]

    @property
    def present(self) -> NDArray:
        return ~np.isnan(self.prices)


def noise_levels(quotes: QuoteSeries) -> NDArray:
    """Measurement noise standard deviations ``N[k, j]``.

    ``N^2 = (delta_kj + delta_j + delta) / 3`` with ``delta_j`` the time-series
    mean spread of contract ``j`` and ``delta`` the mean of all spreads. A quote
    with a missing spread uses ``delta_j``; a contract without any spread uses
    ``delta``. ``NaN`` where there is no quote.
    """
    s = np.where(quotes.present, quotes.spreads, np.nan)
    if np.all(np.isnan(s)):
        raise NoiseConfigError("no spreads available; supply spreads or a noise floor")
    overall = float(np.nanmean(s))
    per_contract = np.full(s.shape[1], overall)
    for j in range(s.shape[1]):
        col = s[:, j]
        if np.any(~np.isnan(col)):
            per_contract[j] = float(np.mean(col[~np.isnan(col)]))
    s_filled = np.where(np.isnan(s), per_contract[None, :], s)
    N2 = (s_filled + per_contract[None, :] + overall) / 3.0
    N = np.sqrt(N2)
    N[~quotes.present] = np.nan
    return N


class Discretization(NamedTuple):
    b: NDArray
    D: NDArray
    K: NDArray
    negative_diagonal: bool


def discretize(params: TwoFactorParams, mpr: MarketPriceOfRisk | None, dt: float) -> Discretization:
    """Euler step ``X' = b + D X + K eps`` of the real-world two-factor dynamics."""
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    m = mpr or MarketPriceOfRisk()
    kZ, kY = params.kappa_Z, params.kappa_Y
    sZ, sY, rho = params.sigma_Z, params.sigma_Y, params.rho
    b = np.array([m.gamma_Z * dt, m.gamma_Y * dt])
    D = np.array([[1.0 - (kZ - m.lambda_Z) * dt, 0.0],
                  [kY * dt, 1.0 - (kY - m.lambda_Y) * dt]])
    sq = math.sqrt(dt)
    K = np.array([[sZ * sq, 0.0],
                  [rho * sY * sq, sY * math.sqrt((1.0 - rho * rho) * dt)]])
    neg = bool(D[0, 0] < 0 or D[1, 1] < 0)
    if neg:
        warnings.warn(f"dt={dt} gives a negative diagonal in the Euler transition", RuntimeWarning)
    return Discretization(b, D, K, neg)


def augment_state(x: ArrayLike) -> NDArray:
    """``(z, y, z^2, yz, y^2)``."""
    z, y = np.asarray(x, dtype=float)[:2]
    return np.array([z, y, z * z, y * z, y * y])


def augment_dynamics(b: NDArray, D: NDArray, K: NDArray,
                     x_prev: ArrayLike) -> tuple[NDArray, NDArray, NDArray]:
    """Affine transition ``(b~, D~, Sigma~)`` of the augmented state.

    The second-order block propagates ``vech(X X^T)`` exactly for Gaussian
    increments, using the duplication (``G2``), selection (``H2``) and
    commutation (``L2``) matrices.
    """
    G2, H2, L2 = structural_matrices(2)
    x = np.asarray(x_prev, dtype=float)[:2]
    S = K @ K.T
    I2 = np.eye(2)

    b_t = np.concatenate([b, H2 @ (np.outer(b, b) + S).reshape(-1, order="F")])

    bc = b[:, None]
    D_t = np.zeros((5, 5))
    D_t[:2, :2] = D
    D_t[2:, :2] = H2 @ (np.kron(bc, D) + np.kron(D, bc))
    D_t[2:, 2:] = H2 @ np.kron(D, D) @ G2

    m = (b + D @ x)[:, None]
    Gam = np.kron(I2, m) + np.kron(m, I2)
    HG = H2 @ Gam
    S_t = np.zeros((5, 5))
    S_t[:2, :2] = S
    S_t[:2, 2:] = S @ HG.T
    S_t[2:, :2] = HG @ S
    S_t[2:, 2:] = HG @ S @ HG.T + H2 @ (np.eye(4) + L2) @ np.kron(S, S) @ H2.T
    return b_t, D_t, S_t


class MeasurementMaps:
    """Cached affine measurement maps ``F^j = a^j + B~^j . X~``.

    ``(a^j, B~^j) = exp((j - frac) G) w_01`` under the pricing measure.
    """

    def __init__(self, params: TwoFactorParams, n_contracts: int):
        G = generator_matrix(params, "Q")
        self.w01 = expm_and_integral(G, 1.0).integral @ spot_coordinates(params)
        self.E1 = expm_generic(G, 1.0)
        self.G = G
        self.n_contracts = n_contracts
        self._cache: dict[float, NDArray] = {}

    def full(self, frac: float) -> NDArray:
        """``(J, 6)`` array of stacked ``(a^j, B~^j)`` for ``j = 1..J``."""
        frac = float(frac)
        V = self._cache.get(frac)
        if V is None:
            V = np.empty((self.n_contracts, self.G.shape[0]))
            v = expm_generic(self.G, 1.0 - frac) @ self.w01
            for j in range(self.n_contracts):
                V[j] = v
                v = self.E1 @ v
            self._cache[frac] = V
        return V

    def rows(self, frac: float, present_js: Sequence[int]) -> tuple[NDArray, NDArray]:
        V = self.full(frac)[np.asarray(present_js, dtype=int) - 1]
        return V[:, 0].copy(), V[:, 1:].copy()


def measurement_map(params: TwoFactorParams, mpr: MarketPriceOfRisk | None, quote_date_frac: float,
                    present_js: Sequence[int]) -> tuple[NDArray, NDArray]:
    """Intercepts ``a`` and loadings ``B~`` of the present nearby contracts (1-based ``j``)."""
    if len(present_js) == 0:
        raise ValueError("present_js must be nonempty")
    G = generator_matrix(params, "Q")
    w01 = expm_and_integral(G, 1.0).integral @ spot_coordinates(params)
    V = np.array([expm_generic(G, j - quote_date_frac) @ w01 for j in present_js])
    return V[:, 0], V[:, 1:]


@dataclass
class FilterState:
    x_filt: NDArray
    V_filt: NDArray
    x_pred: NDArray
    V_pred: NDArray
    innovation: NDArray
    innovation_cov: NDArray
    gain: NDArray
    present_js: NDArray
    model_prices: NDArray
    pred_prices: NDArray
    log_lik: float = 0.0
    min_eig_before_repair: float = 0.0
    repaired: bool = False
    V_filt_alt: NDArray | None = field(default=None, repr=False)


def _repair_psd(V: NDArray, scale: float, tol: float = 1e-8) -> tuple[NDArray, float, bool]:
    """Symmetrise and, if slightly indefinite, shift by the smallest power of ten.

    Indefiniteness is judged against ``scale`` (the norm of the predicted
    covariance) since cancellation error in the update is proportional to it.
    """
    V = 0.5 * (V + V.T)
    lam = float(np.linalg.eigvalsh(V)[0])
    if lam >= 0:
        return V, lam, False
    if lam < -tol * scale:
        raise NotPSDError(lam)
    shift = 10.0 ** math.ceil(math.log10(-lam))
    return V + shift * np.eye(V.shape[0]), lam, True


def qkf_step(x_prev: NDArray, V_prev: NDArray, dyn: tuple[NDArray, NDArray, NDArray] | None,
             a: NDArray, B: NDArray, obs: NDArray, noise: NDArray, date_index: int = 0,
             present_js: ArrayLike = (), keep_alt: bool = False) -> FilterState:
    """One prediction/update cycle.

    ``dyn`` is ``(b~, D~, Sigma~)`` evaluated at the previous filtered state,
    or ``None`` to skip prediction (the anchored first date). An empty ``obs``
    yields a prediction-only step.
    """
    if dyn is None:
        x_pred, V_pred = x_prev.copy(), V_prev.copy()
    else:
        b_t, D_t, S_t = dyn
        x_pred = b_t + D_t @ x_prev
        V_pred = D_t @ V_prev @ D_t.T + S_t
        V_pred = 0.5 * (V_pred + V_pred.T)

    n = obs.size
    if n == 0:
        return FilterState(x_pred, V_pred, x_pred, V_pred, np.zeros(0), np.zeros((0, 0)),
                           np.zeros((5, 0)), np.zeros(0, dtype=int), np.zeros(0), np.zeros(0))

    F_pred = a + B @ x_pred
    innov = obs - F_pred
    M = B @ V_pred @ B.T + np.diag(noise * noise)
    M = 0.5 * (M + M.T)
    try:
        L = np.linalg.cholesky(M)
    except np.linalg.LinAlgError:
        try:
            L = cholesky_psd(M)
        except NotPSDError as exc:
            raise SingularInnovationError(date_index, str(exc)) from exc
    if not np.all(np.isfinite(L)) or np.min(np.diag(L)) <= 0:
        raise SingularInnovationError(date_index)
    # K = V B^T M^{-1} via two triangular solves
    PBt = V_pred @ B.T
    gain = np.linalg.solve(L.T, np.linalg.solve(L, PBt.T)).T
    x_filt = x_pred + gain @ innov
    V_filt = V_pred - gain @ M @ gain.T
    V_alt = (np.eye(5) - gain @ B) @ V_pred if keep_alt else None
    V_filt, lam, repaired = _repair_psd(V_filt, float(np.linalg.norm(V_pred, 2)))

    z = np.linalg.solve(L, innov)
    ll = -0.5 * (2.0 * np.sum(np.log(np.diag(L))) + z @ z + n * LOG_2PI)
    return FilterState(x_filt, V_filt, x_pred, V_pred, innov, M, gain,
                       np.asarray(present_js, dtype=int), a + B @ x_filt, F_pred,
                       float(ll), lam, repaired, V_alt)


@dataclass
class FilterOutput:
    """Results of one filtering pass.

    ``model_prices`` are the updated ``(k|k)`` fits, ``pred_prices`` the
    one-step predictions; both are ``NaN`` where nothing was quoted.
    """

    states: list
    model_prices: NDArray
    pred_prices: NDArray
    innovations: NDArray
    log_likelihood: float
    ls_error: float
    ls_error_weighted: float
    relative_errors: NDArray
    relative_errors_pred: NDArray
    min_eigenvalue: float
    n_repairs: int

    @property
    def overall_relative_error(self) -> float:
        return float(np.nanmean(self.relative_errors))

    def to_dict(self, include_states: bool = False) -> dict:
        def arr(a):
            return [[None if np.isnan(v) else float(v) for v in row] for row in a]

        out = {
            "log_likelihood": self.log_likelihood,
            "ls_error": self.ls_error,
            "ls_error_weighted": self.ls_error_weighted,
            "overall_relative_error": self.overall_relative_error,
            "min_eigenvalue": self.min_eigenvalue,
            "n_repairs": self.n_repairs,
            "model_prices": arr(self.model_prices),
            "pred_prices": arr(self.pred_prices),
            "relative_errors": arr(self.relative_errors),
        }
        if include_states:
            out["filtered_states"] = [s.x_filt.tolist() for s in self.states]
        return out


def run_filter(params: TwoFactorParams, mpr: MarketPriceOfRisk | None, quotes: QuoteSeries,
               noise: NDArray | None = None, keep_alt: bool = False) -> FilterOutput:
    """Filter the whole series, anchored at ``(z0, y0)``.

    The first date is updated against its quotes from the anchor
    ``X~ = H~(x0)``, ``V~ = Sigma~(x0)``; later dates predict over the actual
    time gap first.
    """
    if quotes.n_dates == 0:
        raise ValueError("quote series is empty")
    if noise is None:
        noise = noise_levels(quotes)
    Kd, J = quotes.prices.shape
    maps = MeasurementMaps(params, J)
    present = quotes.present

    x0 = np.array([params.z0, params.y0])
    disc_cache: dict[float, Discretization] = {}

    def disc(dt: float) -> Discretization:
        d = disc_cache.get(dt)
        if d is None:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                d = discretize(params, mpr, dt)
            disc_cache[dt] = d
        return d

    model = np.full((Kd, J), np.nan)
    pred = np.full((Kd, J), np.nan)
    innovations = np.full((Kd, J), np.nan)
    states = []
    ll = 0.0
    ls = 0.0
    ls_w = 0.0
    min_eig = math.inf
    n_rep = 0

    x_prev = augment_state(x0)
    d0 = disc(quotes.times[1] - quotes.times[0] if Kd > 1 else 1.0 / 12.0)
    V_prev = augment_dynamics(d0.b, d0.D, d0.K, x0)[2]
    for k in range(Kd):
        if k == 0:
            dyn = None
        else:
            d = disc(float(quotes.times[k] - quotes.times[k - 1]))
            dyn = augment_dynamics(d.b, d.D, d.K, x_prev[:2])
        js = np.flatnonzero(present[k]) + 1
        a, B = maps.rows(quotes.year_fracs[k], js)
        obs = quotes.prices[k, js - 1]
        st = qkf_step(x_prev, V_prev, dyn, a, B, obs, noise[k, js - 1], k, js, keep_alt)
        states.append(st)
        if js.size:
            model[k, js - 1] = st.model_prices
            pred[k, js - 1] = st.pred_prices
            innovations[k, js - 1] = st.innovation
            ll += st.log_lik
            ls += float(st.innovation @ st.innovation)
            ls_w += float(np.sum((st.innovation / noise[k, js - 1]) ** 2))
            min_eig = min(min_eig, st.min_eig_before_repair)
            n_rep += int(st.repaired)
        x_prev, V_prev = st.x_filt, st.V_filt

    rel = np.abs(model - quotes.prices) / quotes.prices
    rel_pred = np.abs(pred - quotes.prices) / quotes.prices
    return FilterOutput(states, model, pred, innovations, float(ll), float(ls), float(ls_w),
                        rel, rel_pred, float(min_eig), n_rep)
