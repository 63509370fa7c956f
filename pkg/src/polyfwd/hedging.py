"""Locally risk-minimising rolling hedge of a long-dated calendar forward.

The claim is the calendar contract delivering over ``[T, T + 1)``. Only the
first nearby contract is traded: during ``[k - 1, k)`` the hedger holds
``xi`` units of the contract delivering over ``[k, k + 1)`` and rolls into
the next one at each year end. The ratio ``xi`` is the instantaneous
covariation of claim and instrument over the instrument's variance, both
under the pricing measure; paths may evolve under the real-world measure.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .linalg import expm_generic
from .model import MarketPriceOfRisk, TwoFactorParams, basis_eval, generator_matrix, sigma_H
from .pricing import DegenerateVarianceError, unit_weight
from .simulation import SimConfig, SimResult, simulate_paths

__all__ = [
    "VARIANCE_FLOOR",
    "hedge_ratio",
    "HedgeRecord",
    "run_rolling_hedge",
    "ExposureStats",
    "exposure_stats",
    "hedge_experiment",
]

VARIANCE_FLOOR = 1e-14


def _ratio(u: NDArray, v: NDArray, S: NDArray) -> NDArray:
    num = np.einsum("i,...ij,j->...", u, S, v)
    den = np.einsum("i,...ij,j->...", v, S, v)
    if np.any(den < VARIANCE_FLOOR):
        raise DegenerateVarianceError(f"instrument variance below {VARIANCE_FLOOR} (min {den.min():.3e})")
    return num / den


def hedge_ratio(params: TwoFactorParams, t: float, x: ArrayLike, k: int, T_claim: int) -> NDArray | float:
    """Units of the contract delivering over ``[k, k+1)`` held at ``t`` in ``[k-1, k)``.

    Exactly ``1`` when ``k == T_claim``: the instrument is then the claim.
    Vectorised over leading axes of ``x``.
    """
    if not (k - 1 <= t < k) or k > T_claim:
        raise ValueError(f"need t in [k-1, k) and k <= T_claim (t={t}, k={k}, T={T_claim})")
    x = np.asarray(x, dtype=float)
    if k == T_claim:
        out = np.ones(x.shape[:-1])
        return float(out) if out.ndim == 0 else out
    G = generator_matrix(params, "Q")
    w01 = unit_weight(params, "Q")
    u = expm_generic(G, T_claim - t) @ w01
    v = expm_generic(G, k - t) @ w01
    out = _ratio(u, v, sigma_H(params, x))
    return float(out) if np.ndim(out) == 0 else out


@dataclass
class HedgeRecord:
    """Ledger of one hedge run across all paths.

    Arrays indexed ``[i, m]`` refer to rebalancing date ``i`` and path ``m``;
    ``times[i]`` opens the interval ``[times[i], times[i+1])`` held in
    contract ``contract[i]``. ``claim_values`` and ``cost`` include the
    terminal date as a last row.
    """

    horizon: int
    times: NDArray
    contract: NDArray
    xi: NDArray
    price_open: NDArray
    price_close: NDArray
    gains: NDArray
    claim_values: NDArray
    cumulative_gain: NDArray
    cost: NDArray
    F0: float
    F_terminal: NDArray
    hedged: NDArray = field(init=False)
    unhedged: NDArray = field(init=False)

    def __post_init__(self):
        self.unhedged = (self.F_terminal - self.F0) / self.F0
        self.hedged = (self.F_terminal - self.F0 - self.cumulative_gain) / self.F0

    def xi_support_ok(self) -> bool:
        """Holdings only ever sit in the contract expiring at the end of the current year."""
        return bool(np.all(self.contract == np.floor(self.times + 1e-12).astype(int) + 1))


def run_rolling_hedge(sim: SimResult, params: TwoFactorParams, T_claim: int, steps_per_year: int,
                      rebalance: str = "monthly") -> HedgeRecord:
    """Discrete rolling hedge along simulated paths.

    At each rebalancing date ``t`` in ``[k-1, k)`` the ratio is recomputed from
    the path state and the gain ``xi_t (P^k_{t'} - P^k_t)`` accrues until the
    next date ``t'``. Contract ``k`` is closed at ``t' = k`` and the position
    reopened in contract ``k + 1``.
    """
    if rebalance == "monthly":
        if steps_per_year % 12:
            raise ValueError("monthly rebalancing needs steps_per_year divisible by 12")
        stride = steps_per_year // 12
    elif rebalance == "every_step":
        stride = 1
    else:
        raise ValueError("rebalance must be 'monthly' or 'every_step'")
    end = T_claim * steps_per_year
    wanted = np.arange(0, end + 1, stride)
    pos = {int(s): i for i, s in enumerate(sim.steps)}
    missing = [int(s) for s in wanted if int(s) not in pos]
    if missing:
        raise ValueError(f"simulation does not record the rebalancing steps (e.g. step {missing[0]})")

    G = generator_matrix(params, "Q")
    w01 = unit_weight(params, "Q")
    x0 = np.asarray(params.x0, dtype=float)
    F0 = float(basis_eval(params, x0) @ expm_generic(G, float(T_claim)) @ w01)

    n = wanted.size - 1
    M = sim.states.shape[1]
    times = wanted[:-1] / steps_per_year
    contract = wanted[:-1] // steps_per_year + 1
    xi = np.empty((n, M))
    p_open = np.empty((n, M))
    p_close = np.empty((n, M))
    claim = np.empty((n + 1, M))
    for i in range(n):
        s0, s1 = int(wanted[i]), int(wanted[i + 1])
        k = int(contract[i])
        t0, t1 = s0 / steps_per_year, s1 / steps_per_year
        X0 = sim.states[pos[s0]]
        X1 = sim.states[pos[s1]]
        H0 = basis_eval(params, X0)
        H1 = basis_eval(params, X1)
        u = expm_generic(G, T_claim - t0) @ w01
        v0 = expm_generic(G, k - t0) @ w01
        v1 = expm_generic(G, k - t1) @ w01 if s1 < k * steps_per_year else w01
        xi[i] = 1.0 if k == T_claim else _ratio(u, v0, sigma_H(params, X0))
        p_open[i] = H0 @ v0
        p_close[i] = H1 @ v1
        claim[i] = H0 @ u
    F_T = basis_eval(params, sim.states[pos[end]]) @ w01
    claim[n] = F_T
    gains = xi * (p_close - p_open)
    cum = np.vstack([np.zeros(M), np.cumsum(gains, axis=0)])
    cost = claim - cum
    return HedgeRecord(T_claim, times, contract, xi, p_open, p_close, gains, claim,
                       cum[-1], cost, F0, F_T)


@dataclass
class ExposureStats:
    horizon: int
    n: int
    hedged_std: float
    hedged_skew: float
    unhedged_std: float
    unhedged_skew: float
    degenerate: bool
    hist_edges: NDArray = field(repr=False)
    hedged_density: NDArray = field(repr=False)
    unhedged_density: NDArray = field(repr=False)


def _std_skew(x: NDArray) -> tuple[float, float, bool]:
    d = x - x.mean()
    m2 = float(np.mean(d * d))
    std = float(x.std(ddof=1))
    if m2 <= 0.0 or m2 <= 1e-30 * max(1.0, float(np.mean(x * x))):
        return 0.0, 0.0, True
    return std, float(np.mean(d**3) / m2**1.5), False


def exposure_stats(record: HedgeRecord, bins: int = 100) -> ExposureStats:
    """Sample std (``n-1``) and skewness ``m3 / m2^1.5`` of both exposures.

    Densities share one set of ``bins`` equal-width bins spanning both samples.
    """
    h, u = record.hedged, record.unhedged
    if h.size < 2:
        raise ValueError("exposure statistics need at least two paths")
    hs, hk, hd = _std_skew(h)
    us, uk, ud = _std_skew(u)
    lo = float(min(h.min(), u.min()))
    hi = float(max(h.max(), u.max()))
    if hi <= lo:
        hi = lo + 1.0
    edges = np.linspace(lo, hi, bins + 1)
    hden, _ = np.histogram(h, edges, density=True)
    uden, _ = np.histogram(u, edges, density=True)
    return ExposureStats(record.horizon, h.size, hs, hk, us, uk, hd or ud, edges, hden, uden)


def hedge_experiment(params: TwoFactorParams, mpr: MarketPriceOfRisk | None, horizons,
                     config: SimConfig, rebalance: str = "monthly") -> tuple[list, list]:
    """Simulate once to the longest horizon and hedge every claim on the same paths."""
    horizons = sorted(int(h) for h in horizons)
    stride = config.steps_per_year // 12 if rebalance == "monthly" else 1
    cfg = SimConfig(horizon=max(horizons), steps_per_year=config.steps_per_year,
                    n_paths=config.n_paths, seed=config.seed, measure=config.measure,
                    nearby_count=config.nearby_count, record_stride=stride,
                    block_size=config.block_size, workers=config.workers)
    sim = simulate_paths(params, mpr, cfg)
    records = [run_rolling_hedge(sim, params, h, cfg.steps_per_year, rebalance) for h in horizons]
    return records, [exposure_stats(r) for r in records]
