"""Differential-evolution calibration of the two-factor model to quote series.

Stage one minimises the least-squares innovation error, stage two restarts
the population around the stage-one optimum and minimises the negative
Gaussian log-likelihood. Constraint violations are penalised, not rejected.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from numpy.typing import NDArray

from .linalg import NotPSDError
from .model import MarketPriceOfRisk, TwoFactorParams
from .qkf import FilterOutput, QuoteSeries, SingularInnovationError, noise_levels, run_filter

__all__ = [
    "PARAM_NAMES",
    "DEFAULT_BOUNDS",
    "PENALTY",
    "InfeasibleStartError",
    "CalibrationConfig",
    "CalibrationResult",
    "DEResult",
    "differential_evolution",
    "constraint_violation",
    "constraint_penalty",
    "vector_to_params",
    "params_to_vector",
    "relative_errors",
    "calibrate",
]

PARAM_NAMES = ("c", "alpha", "beta", "kappa_Z", "kappa_Y", "sigma_Z", "sigma_Y", "rho",
               "lambda_Z", "lambda_Y", "gamma_Z", "gamma_Y", "z0", "y0")

# Wide default search boxes; the estimation literature gives none.
DEFAULT_BOUNDS = {
    "c": (0.0, 10.0),
    "alpha": (0.0, 50.0),
    "beta": (0.0, 5.0),
    "kappa_Z": (0.0, 1.0),
    "kappa_Y": (0.0, 1.0),
    "sigma_Z": (1e-4, 5.0),
    "sigma_Y": (1e-4, 5.0),
    "rho": (-0.99, 0.99),
    "lambda_Z": (-1.0, 1.0),
    "lambda_Y": (-1.0, 1.0),
    "gamma_Z": (-1.0, 1.0),
    "gamma_Y": (-1.0, 1.0),
    "z0": (-10.0, 10.0),
    "y0": (-10.0, 10.0),
}

PENALTY = 1e6
_SOFT_CAP = 0.5 * PENALTY


class InfeasibleStartError(RuntimeError):
    """Raised when no member of the initial population has a finite objective."""


def vector_to_params(v: Sequence[float]) -> tuple[TwoFactorParams, MarketPriceOfRisk]:
    d = dict(zip(PARAM_NAMES, map(float, v)))
    mpr = MarketPriceOfRisk(*(d.pop(k) for k in ("lambda_Z", "lambda_Y", "gamma_Z", "gamma_Y")))
    return TwoFactorParams(**d), mpr


def params_to_vector(params: TwoFactorParams, mpr: MarketPriceOfRisk | None) -> NDArray:
    mpr = mpr or MarketPriceOfRisk()
    src = {**params.__dict__, **mpr.__dict__}
    return np.array([src[k] for k in PARAM_NAMES], dtype=float)


def constraint_violation(params: TwoFactorParams, mpr: MarketPriceOfRisk | None = None) -> tuple[bool, float]:
    """Return ``(violated, magnitude)`` over the admissibility and ordering constraints."""
    v = params_to_vector(params, mpr)
    if not np.all(np.isfinite(v)):
        return True, math.inf
    p = params
    parts = [
        max(0.0, -p.c), max(0.0, -p.alpha), max(0.0, -p.beta),
        max(0.0, -p.sigma_Z), max(0.0, -p.sigma_Y),
        max(0.0, abs(p.rho) - 1.0),
        max(0.0, p.kappa_Y - 1.0), max(0.0, p.kappa_Z - p.kappa_Y), max(0.0, -p.kappa_Z),
    ]
    violated = (any(x > 0 for x in parts) or p.sigma_Z <= 0 or p.sigma_Y <= 0
                or abs(p.rho) >= 1.0)
    return violated, float(sum(parts))


def constraint_penalty(params: TwoFactorParams, mpr: MarketPriceOfRisk | None = None) -> float:
    """``0`` when admissible, else ``1e6 * (1 + total violation)``."""
    violated, mag = constraint_violation(params, mpr)
    return PENALTY * (1.0 + mag) if violated else 0.0


def _compress(f: float) -> float:
    """Order-preserving map of feasible objectives into ``(-inf, 1e6)``.

    Identity below ``5e5``. Keeps every penalised value above every feasible
    one without changing any comparison DE makes between feasible points.
    """
    if f <= _SOFT_CAP:
        return f
    return PENALTY - _SOFT_CAP**2 / f


@dataclass(frozen=True)
class DEResult:
    x: NDArray
    fun: float
    trajectory: list
    generations: int
    population: NDArray
    fitness: NDArray
    n_evaluations: int


def _reflect(v: NDArray, lo: NDArray, hi: NDArray) -> NDArray:
    v = np.where(v < lo, 2 * lo - v, v)
    v = np.where(v > hi, 2 * hi - v, v)
    return np.clip(v, lo, hi)


def _evaluate(objective: Callable, pop: NDArray, executor) -> NDArray:
    if executor is None:
        vals = [objective(x) for x in pop]
    else:
        vals = list(executor.map(objective, list(pop)))
    out = np.array(vals, dtype=float)
    out[np.isnan(out)] = np.inf
    return out


def differential_evolution(objective: Callable[[NDArray], float], lower: Sequence[float],
                           upper: Sequence[float], pop_size: int | None = None,
                           generations: int = 200, F: float = 0.8, CR: float = 0.9,
                           seed: int | np.random.SeedSequence = 0, init_population: NDArray | None = None,
                           tol: float = 0.0, workers: int = 1) -> DEResult:
    """Minimise ``objective`` over a box with DE/rand/1/bin.

    Trial vectors of a whole generation are built first and evaluated together
    (synchronous update), so the result does not depend on evaluation order or
    on ``workers``. Components leaving the box are reflected back in. The run
    stops early when the population's objective range falls to
    ``tol * (1 + |best|)``.
    """
    lo = np.asarray(lower, dtype=float)
    hi = np.asarray(upper, dtype=float)
    if lo.shape != hi.shape or np.any(~np.isfinite(lo)) or np.any(~np.isfinite(hi)) or np.any(lo >= hi):
        raise ValueError("bounds must be finite with lower < upper")
    dim = lo.size
    n = pop_size or 10 * dim
    if n < 4:
        raise ValueError("population must have at least 4 members")
    rng = np.random.default_rng(seed)

    if init_population is None:
        pop = lo + rng.random((n, dim)) * (hi - lo)
    else:
        pop = np.array(init_population, dtype=float)
        if pop.shape != (n, dim):
            raise ValueError(f"initial population must have shape {(n, dim)}")
        pop = _reflect(pop, lo, hi)

    executor = ProcessPoolExecutor(max_workers=workers) if workers and workers > 1 else None
    try:
        fit = _evaluate(objective, pop, executor)
        n_eval = n
        if not np.any(np.isfinite(fit)):
            raise InfeasibleStartError("objective is non-finite on the entire initial population")
        best = int(np.argmin(fit))
        trajectory = [float(fit[best])]
        gen = 0
        idx = np.arange(n)
        for gen in range(1, generations + 1):
            trial = np.empty_like(pop)
            for i in range(n):
                a, b, c = rng.choice(idx[idx != i], 3, replace=False)
                mutant = pop[a] + F * (pop[b] - pop[c])
                cross = rng.random(dim) < CR
                cross[rng.integers(dim)] = True
                trial[i] = np.where(cross, mutant, pop[i])
            trial = _reflect(trial, lo, hi)
            tfit = _evaluate(objective, trial, executor)
            n_eval += n
            better = tfit <= fit
            pop[better] = trial[better]
            fit[better] = tfit[better]
            best = int(np.argmin(fit))
            trajectory.append(float(fit[best]))
            finite = fit[np.isfinite(fit)]
            if tol > 0 and finite.size == n and finite.max() - finite.min() <= tol * (1 + abs(fit[best])):
                break
    finally:
        if executor is not None:
            executor.shutdown()
    return DEResult(pop[best].copy(), float(fit[best]), trajectory, gen, pop, fit, n_eval)


class FilterObjective:
    """Penalised filter objective on a parameter vector; picklable for worker processes."""

    def __init__(self, quotes: QuoteSeries, kind: str = "ls", weighted: bool = False):
        if kind not in ("ls", "ml"):
            raise ValueError("kind must be 'ls' or 'ml'")
        self.quotes = quotes
        self.noise = noise_levels(quotes)
        self.kind = kind
        self.weighted = weighted

    def raw(self, v: NDArray) -> float:
        params, mpr = vector_to_params(v)
        try:
            out = run_filter(params, mpr, self.quotes, self.noise)
        except (SingularInnovationError, NotPSDError, FloatingPointError, ValueError,
                np.linalg.LinAlgError):
            return math.inf
        if self.kind == "ml":
            f = -out.log_likelihood
        else:
            f = out.ls_error_weighted if self.weighted else out.ls_error
        return f if math.isfinite(f) else math.inf

    def __call__(self, v: NDArray) -> float:
        params, mpr = vector_to_params(v)
        pen = constraint_penalty(params, mpr)
        if pen > 0:
            # the filter is undefined at inadmissible points (e.g. |rho| >= 1)
            return pen
        with np.errstate(all="ignore"):
            return _compress(self.raw(v))


@dataclass
class CalibrationConfig:
    """Search configuration.

    ``pop_size=None`` means ten members per free parameter. Generations are
    given per stage; ``ml_generations=0`` skips the likelihood stage.
    """

    bounds: dict = field(default_factory=lambda: dict(DEFAULT_BOUNDS))
    pop_size: int | None = None
    ls_generations: int = 100
    ml_generations: int = 50
    F: float = 0.8
    CR: float = 0.9
    seed: int = 0
    tol: float = 0.0
    jitter: float = 0.1
    weighted_ls: bool = False
    workers: int = 1

    def __post_init__(self):
        missing = set(PARAM_NAMES) - set(self.bounds)
        if missing:
            raise ValueError(f"bounds missing for {sorted(missing)}")
        for k in PARAM_NAMES:
            lo, hi = map(float, self.bounds[k])
            if not (math.isfinite(lo) and math.isfinite(hi) and lo < hi):
                raise ValueError(f"bounds for {k} must be finite with lower < upper")
        if self.pop_size is not None and self.pop_size < 10:
            raise ValueError("population must be at least 10")
        if self.ls_generations < 0 or self.ml_generations < 0:
            raise ValueError("generation counts must be nonnegative")

    def box(self) -> tuple[NDArray, NDArray]:
        lo = np.array([float(self.bounds[k][0]) for k in PARAM_NAMES])
        hi = np.array([float(self.bounds[k][1]) for k in PARAM_NAMES])
        return lo, hi


@dataclass
class CalibrationResult:
    params: TwoFactorParams
    mpr: MarketPriceOfRisk
    trajectory: list
    ls_error: float
    log_likelihood: float
    errors: dict
    generations: dict
    seed: int
    filter_output: FilterOutput = field(repr=False, default=None)

    def to_dict(self) -> dict:
        v = params_to_vector(self.params, self.mpr)
        return {
            "params": {k: float(x) for k, x in zip(PARAM_NAMES, v)},
            "ls_error": self.ls_error,
            "log_likelihood": self.log_likelihood,
            "overall_relative_error": self.errors["overall_mean"],
            "errors": self.errors,
            "generations": self.generations,
            "trajectory": self.trajectory,
            "seed": self.seed,
        }


def relative_errors(output: FilterOutput, quotes: QuoteSeries, predicted: bool = False) -> dict:
    """Aggregate ``|model - obs| / obs`` per date, per contract and overall."""
    model = output.pred_prices if predicted else output.model_prices
    rel = np.abs(model - quotes.prices) / quotes.prices
    present = quotes.present
    per_date = np.array([rel[k, present[k]].mean() if present[k].any() else np.nan
                         for k in range(rel.shape[0])])
    per_contract = {}
    for j in range(rel.shape[1]):
        col = rel[present[:, j], j]
        if col.size == 0:
            continue
        q1, med, q3 = np.percentile(col, [25, 50, 75])
        per_contract[j + 1] = {
            "mean": float(col.mean()),
            "std": float(col.std(ddof=1)) if col.size > 1 else 0.0,
            "q1": float(q1), "median": float(med), "q3": float(q3),
            "min": float(col.min()), "max": float(col.max()), "n": int(col.size),
        }
    return {
        "overall_mean": float(rel[present].mean()),
        "per_date_mean": per_date.tolist(),
        "per_contract": per_contract,
    }


def _reseed(best: NDArray, lo: NDArray, hi: NDArray, n: int, jitter: float,
            rng: np.random.Generator) -> NDArray:
    pop = best[None, :] + jitter * (hi - lo)[None, :] * rng.standard_normal((n, best.size))
    pop[0] = best
    return _reflect(pop, lo, hi)


def calibrate(quotes: QuoteSeries, config: CalibrationConfig | None = None) -> CalibrationResult:
    """Staged LS-then-ML calibration; returns the final point with both objectives."""
    cfg = config or CalibrationConfig()
    lo, hi = cfg.box()
    n = cfg.pop_size or 10 * len(PARAM_NAMES)
    ss = np.random.SeedSequence(cfg.seed)
    s1, s2, s3 = ss.spawn(3)

    ls_obj = FilterObjective(quotes, "ls", cfg.weighted_ls)
    r1 = differential_evolution(ls_obj, lo, hi, n, cfg.ls_generations, cfg.F, cfg.CR,
                                seed=s1, tol=cfg.tol, workers=cfg.workers)
    trajectory = [{"stage": "ls", "generation": g, "best": f} for g, f in enumerate(r1.trajectory)]
    best = r1.x
    gens = {"ls": r1.generations, "ml": 0}
    if cfg.ml_generations > 0:
        ml_obj = FilterObjective(quotes, "ml")
        init = _reseed(best, lo, hi, n, cfg.jitter, np.random.default_rng(s3))
        r2 = differential_evolution(ml_obj, lo, hi, n, cfg.ml_generations, cfg.F, cfg.CR,
                                    seed=s2, init_population=init, tol=cfg.tol, workers=cfg.workers)
        trajectory += [{"stage": "ml", "generation": g, "best": f} for g, f in enumerate(r2.trajectory)]
        best = r2.x
        gens["ml"] = r2.generations

    params, mpr = vector_to_params(best)
    out = run_filter(params, mpr, quotes, ls_obj.noise)
    return CalibrationResult(params, mpr, trajectory, out.ls_error, out.log_likelihood,
                             relative_errors(out, quotes), gens, cfg.seed, out)
