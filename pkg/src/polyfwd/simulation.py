"""Monte Carlo simulation of factor paths and nearby forward surfaces.

Every path draws from its own generator seeded by ``(seed, path_index)``, so
any subset of paths, any block size and any number of threads reproduce the
same numbers.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray

from .linalg import expm_generic
from .model import MarketPriceOfRisk, Params, basis_eval, generator_matrix
from .pricing import unit_weight

__all__ = [
    "R_CLAMP",
    "SimConfig",
    "SimResult",
    "PathSurface",
    "path_normals",
    "simulate_paths",
    "nearby_loadings",
    "forward_surface",
]

R_CLAMP = 1.0 - 1e-10


@dataclass(frozen=True)
class SimConfig:
    """Simulation settings.

    ``measure="P"`` uses the market price of risk passed to
    :func:`simulate_paths`; ``"Q"`` ignores it. ``record_stride`` keeps every
    n-th grid point (``0`` keeps only the initial and final states).
    """

    horizon: int = 10
    steps_per_year: int = 120
    n_paths: int = 5000
    seed: int = 0
    measure: str = "P"
    nearby_count: int = 10
    record_stride: int = 1
    block_size: int = 1000
    workers: int = 1

    def __post_init__(self):
        if int(self.horizon) != self.horizon or self.horizon < 1:
            raise ValueError("horizon must be a whole number of years >= 1")
        if self.steps_per_year < 12:
            raise ValueError("steps_per_year must be at least 12")
        if self.n_paths < 1:
            raise ValueError("n_paths must be >= 1")
        if self.measure.upper() not in ("P", "Q"):
            raise ValueError("measure must be 'P' or 'Q'")
        if self.record_stride < 0 or self.block_size < 1 or self.nearby_count < 1:
            raise ValueError("record_stride >= 0, block_size >= 1 and nearby_count >= 1 required")

    @property
    def n_steps(self) -> int:
        return int(self.horizon) * self.steps_per_year

    @property
    def dt(self) -> float:
        return 1.0 / self.steps_per_year

    def record_indices(self) -> NDArray:
        if self.record_stride == 0:
            return np.array([0, self.n_steps])
        idx = np.arange(0, self.n_steps + 1, self.record_stride)
        if idx[-1] != self.n_steps:
            idx = np.append(idx, self.n_steps)
        return idx


@dataclass
class SimResult:
    """Recorded states ``(n_rec, M, d)`` on the step indices ``steps``."""

    steps: NDArray
    times: NDArray
    states: NDArray
    clamp_events: int
    n_step_evaluations: int

    @property
    def clamp_rate(self) -> float:
        return self.clamp_events / self.n_step_evaluations if self.n_step_evaluations else 0.0


def path_normals(seed: int, path_index: int, n_steps: int, dim: int) -> NDArray:
    """Standard normals of one path, ``(n_steps, dim)``."""
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), int(path_index)]))
    return rng.standard_normal((n_steps, dim))


def _drift_terms(params: Params, mpr: MarketPriceOfRisk | None, measure: str):
    m = mpr if (measure == "P" and mpr is not None) else MarketPriceOfRisk()
    return m


def _simulate_block(params: Params, mpr: MarketPriceOfRisk | None, cfg: SimConfig,
                    start: int, stop: int, rec: NDArray) -> tuple[NDArray, int]:
    d = params.dim
    B = stop - start
    N = cfg.n_steps
    eps = np.empty((N, d, B))
    for p in range(B):
        eps[:, :, p] = path_normals(cfg.seed, start + p, N, d)
    dt = cfg.dt
    sq = math.sqrt(dt)
    out = np.empty((rec.size, B, d))
    x = np.broadcast_to(params.x0, (B, d)).T.copy()
    ri = 0
    if rec[0] == 0:
        out[0] = x.T
        ri = 1
    clamps = 0
    kZ, kY, sZ, sY = params.kappa_Z, params.kappa_Y, params.sigma_Z, params.sigma_Y
    if d == 2:
        m = _drift_terms(params, mpr, cfg.measure.upper())
        rho = params.rho
        rc = math.sqrt(1.0 - rho * rho)
        a_z, a_y = 1.0 - (kZ - m.lambda_Z) * dt, 1.0 - (kY - m.lambda_Y) * dt
        g_z, g_y = m.gamma_Z * dt, m.gamma_Y * dt
        for j in range(1, N + 1):
            ez, ey = eps[j - 1]
            z, y = x
            z_new = g_z + a_z * z + sZ * sq * ez
            y_new = g_y + kY * dt * z + a_y * y + sY * sq * (rho * ez + rc * ey)
            x[0], x[1] = z_new, y_new
            if ri < rec.size and rec[ri] == j:
                out[ri] = x.T
                ri += 1
    else:
        kR, thR, sR = params.kappa_R, params.theta_R, params.sigma_R
        for j in range(1, N + 1):
            e1, e2, e3 = eps[j - 1]
            z, y, r = x
            outside = np.abs(r) > R_CLAMP
            if outside.any():
                clamps += int(outside.sum())
                r = np.clip(r, -R_CLAMP, R_CLAMP)
            s = np.sqrt(1.0 - r * r)
            z_new = z - kZ * z * dt + sZ * sq * e1
            y_new = y + kY * (z - y) * dt + sY * sq * (r * e1 + s * e2)
            r_new = r + kR * (thR - r) * dt + sR * s * sq * e3
            x[0], x[1], x[2] = z_new, y_new, r_new
            if ri < rec.size and rec[ri] == j:
                out[ri] = x.T
                ri += 1
    return out, clamps


def simulate_paths(params: Params, mpr: MarketPriceOfRisk | None, config: SimConfig) -> SimResult:
    """Euler paths of the factor process on a uniform grid.

    Two-factor paths follow the real-world recursion
    ``Z' = gZ dt + (1 - (kZ - lZ) dt) Z + sZ sqrt(dt) e1`` and its ``Y``
    analogue (pricing-measure when ``measure="Q"``). Three-factor paths are
    pricing-measure only; ``R`` is clamped to ``[-1 + 1e-10, 1 - 1e-10]``
    before each square-root evaluation and every clamp is counted.
    """
    if params.dim == 3 and config.measure.upper() == "P":
        from .model import UnsupportedMeasureError
        raise UnsupportedMeasureError("three-factor paths are simulated under Q only")
    rec = config.record_indices()
    M = config.n_paths
    blocks = [(s, min(s + config.block_size, M)) for s in range(0, M, config.block_size)]
    states = np.empty((rec.size, M, params.dim))

    def run(bounds):
        return _simulate_block(params, mpr, config, bounds[0], bounds[1], rec)

    if config.workers > 1 and len(blocks) > 1:
        with ThreadPoolExecutor(max_workers=config.workers) as ex:
            results = list(ex.map(run, blocks))
    else:
        results = [run(b) for b in blocks]
    clamps = 0
    for (s, e), (out, c) in zip(blocks, results):
        states[:, s:e] = out
        clamps += c
    n_eval = M * config.n_steps if params.dim == 3 else 0
    return SimResult(rec, rec * config.dt, states, clamps, n_eval)


@dataclass
class PathSurface:
    """Nearby forward prices ``(n_rec, M, L)`` along simulated paths."""

    times: NDArray
    prices: NDArray
    initial: NDArray


def nearby_loadings(params: Params, steps_per_year: int, nearby_count: int) -> NDArray:
    """``V[i, l-1] = exp((l - i / steps_per_year) G) w_01`` for ``i`` in one year.

    The ``l``-th nearby at grid time ``t`` delivers over the ``l``-th next
    calendar year, so its loading depends only on ``t mod 1``.
    """
    G = generator_matrix(params, "Q")
    w01 = unit_weight(params, "Q")
    E1 = expm_generic(G, 1.0)
    V = np.empty((steps_per_year, nearby_count, G.shape[0]))
    for i in range(steps_per_year):
        v = expm_generic(G, 1.0 - i / steps_per_year) @ w01
        for l in range(nearby_count):
            V[i, l] = v
            v = E1 @ v
    return V


def forward_surface(sim: SimResult, params: Params, config: SimConfig) -> PathSurface:
    """Prices of the ``L`` nearby calendar contracts at every recorded grid point."""
    V = nearby_loadings(params, config.steps_per_year, config.nearby_count)
    phase = sim.steps % config.steps_per_year
    H = basis_eval(params, sim.states)
    prices = np.einsum("tmb,tlb->tml", H, V[phase])
    x0 = np.asarray(params.x0, dtype=float)
    initial = V[0] @ basis_eval(params, x0)
    return PathSurface(sim.times, prices, initial)
