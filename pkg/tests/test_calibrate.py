import numpy as np
import pytest

from polyfwd.calibrate import (
    PARAM_NAMES,
    PENALTY,
    CalibrationConfig,
    FilterObjective,
    InfeasibleStartError,
    calibrate,
    constraint_penalty,
    differential_evolution,
    params_to_vector,
    relative_errors,
    vector_to_params,
)
from polyfwd.model import MarketPriceOfRisk
from polyfwd.qkf import run_filter
from polyfwd.synthetic import synthetic_quotes


def test_de_quadratic_target():
    target = np.array([1.0, -2.0, 0.5, 3.0])
    res = differential_evolution(lambda x: float(np.sum((x - target) ** 2)), [-5] * 4, [5] * 4,
                                 pop_size=40, generations=200, seed=1)
    assert np.abs(res.x - target).max() < 1e-3


def test_de_rosenbrock():
    def rosen(x):
        return float(100 * (x[1] - x[0] ** 2) ** 2 + (1 - x[0]) ** 2)

    res = differential_evolution(rosen, [-2, -2], [2, 2], pop_size=40, generations=500, seed=3)
    assert res.fun < 1e-6


def test_de_deterministic_and_monotone():
    f = lambda x: float(np.sum(np.cos(3 * x) + x * x))
    r1 = differential_evolution(f, [-3] * 3, [3] * 3, pop_size=15, generations=40, seed=7)
    r2 = differential_evolution(f, [-3] * 3, [3] * 3, pop_size=15, generations=40, seed=7)
    assert r1.trajectory == r2.trajectory
    np.testing.assert_array_equal(r1.x, r2.x)
    assert all(b <= a for a, b in zip(r1.trajectory, r1.trajectory[1:]))


def test_de_respects_bounds():
    seen = []

    def f(x):
        seen.append(x.copy())
        return float(-np.sum(x))

    differential_evolution(f, [0, 0], [1, 2], pop_size=10, generations=30, seed=0)
    seen = np.array(seen)
    assert seen[:, 0].min() >= 0 and seen[:, 0].max() <= 1 and seen[:, 1].max() <= 2


def test_de_infeasible_start():
    with pytest.raises(InfeasibleStartError):
        differential_evolution(lambda x: np.inf, [0], [1], pop_size=10, generations=2)


def test_penalty(ref_params):
    p, mpr = ref_params
    assert constraint_penalty(p, mpr) == 0.0
    from dataclasses import replace
    assert constraint_penalty(replace(p, kappa_Y=0.2, kappa_Z=0.3), mpr) > PENALTY
    assert constraint_penalty(replace(p, kappa_Y=1.4), mpr) > PENALTY
    assert constraint_penalty(replace(p, rho=1.0), mpr) >= PENALTY


def test_vector_roundtrip(ref_params):
    p, mpr = ref_params
    v = params_to_vector(p, mpr)
    assert len(v) == len(PARAM_NAMES)
    assert vector_to_params(v) == (p, mpr)


def test_penalty_dominates_feasible(ref_params):
    p, mpr = ref_params
    q, _ = synthetic_quotes(p, mpr, 24, seed=9)
    obj = FilterObjective(q, "ls")
    rng = np.random.default_rng(0)
    truth = params_to_vector(p, mpr)
    feasible, infeasible = [], []
    for _ in range(40):
        v = truth * rng.uniform(0.2, 3.0, truth.size)
        v[7] = rng.uniform(-0.95, 0.95)
        (infeasible if constraint_penalty(*vector_to_params(v)) > 0 else feasible).append(obj(v))
    bad = truth.copy()
    bad[3], bad[4] = 0.5, 0.3  # kappa_Z > kappa_Y
    infeasible.append(obj(bad))
    huge = truth.copy()
    huge[1] = 1e4  # absurd but admissible: enormous LS error
    feasible.append(obj(huge))
    assert min(infeasible) > max(f for f in feasible if np.isfinite(f))


def test_relative_errors_arithmetic(ref_params):
    p, mpr = ref_params
    q, _ = synthetic_quotes(p, mpr, 1, seed=0)
    out = run_filter(p, mpr, q)
    out.model_prices = q.prices.copy()
    e = relative_errors(out, q)
    assert e["overall_mean"] == 0.0
    out.model_prices[0, 4] = 1.1 * q.prices[0, 4]
    e = relative_errors(out, q)
    assert e["per_date_mean"][0] == pytest.approx(0.01)


def test_relative_errors_bruteforce(ref_params):
    p, mpr = ref_params
    q, _ = synthetic_quotes(p, mpr, 30, gap_prob=0.2, seed=2)
    out = run_filter(p, mpr, q)
    e = relative_errors(out, q)
    vals = [abs(out.model_prices[k, j] - q.prices[k, j]) / q.prices[k, j]
            for k in range(30) for j in range(10) if not np.isnan(q.prices[k, j])]
    assert e["overall_mean"] == pytest.approx(sum(vals) / len(vals), rel=1e-14)


def _tight(p, mpr, rel=0.3):
    truth = params_to_vector(p, mpr)
    width = np.maximum(rel * np.abs(truth), 0.02)
    b = {k: (t - w, t + w) for k, t, w in zip(PARAM_NAMES, truth, width)}
    b["kappa_Z"] = (0.0, 0.05)
    b["rho"] = (-0.3, 0.5)
    return b


def test_calibration_ls_only_and_deterministic(ref_params):
    p, mpr = ref_params
    q, _ = synthetic_quotes(p, mpr, 24, seed=4)
    cfg = CalibrationConfig(bounds=_tight(p, mpr), pop_size=14, ls_generations=3, ml_generations=0, seed=5)
    r1 = calibrate(q, cfg)
    r2 = calibrate(q, cfg)
    assert r1.to_dict() == r2.to_dict()
    assert r1.generations == {"ls": 3, "ml": 0}
    assert all(t["stage"] == "ls" for t in r1.trajectory)
    assert constraint_penalty(r1.params, r1.mpr) == 0.0


def test_calibration_noiseless_recovery(ref_params):
    p, mpr = ref_params
    q, _ = synthetic_quotes(p, mpr, 48, seed=8, noiseless=True)
    cfg = CalibrationConfig(bounds=_tight(p, mpr, 0.2), pop_size=20, ls_generations=10,
                            ml_generations=4, seed=0)
    r = calibrate(q, cfg)
    assert r.errors["overall_mean"] <= 0.005
