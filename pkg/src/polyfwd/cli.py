"""Batch command-line interface.

Every subcommand reads an optional JSON config, applies flag overrides,
writes its results (CSV/JSON, 17 significant digits) atomically into
``--out`` and leaves a manifest describing the run next to them.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import copy
import dataclasses
import sys
from pathlib import Path

import numpy as np

from . import io as pio
from .calibrate import PARAM_NAMES, CalibrationConfig, DEFAULT_BOUNDS, calibrate, params_to_vector, relative_errors
from .linalg import InvalidInputError, NotPSDError
from .model import REFERENCE_PARAMS, UnsupportedMeasureError, params_from_dict, params_to_dict, validate_params
from .pricing import DegenerateVarianceError, PricingError, correlation_matrix, forward_curve, forward_period, risk_premium
from .qkf import NoiseConfigError, SingularInnovationError, run_filter

EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4

TOP_KEYS = {"model", "state", "price", "curve", "corr", "premium", "simulation", "hedge",
            "calibration", "filter", "synth", "quotes", "seed"}


class CLIError(Exception):
    def __init__(self, code: int, message: str):
        self.code = code
        super().__init__(message)


# ---------------------------------------------------------------- config helpers

def _section(cfg: dict, name: str) -> dict:
    sec = cfg.get(name, {})
    if not isinstance(sec, dict):
        raise pio.ConfigError(f"config section '{name}' must be an object")
    return sec


def _model(cfg: dict):
    raw = cfg.get("model", REFERENCE_PARAMS)
    if not isinstance(raw, dict):
        raise pio.ConfigError("config section 'model' must be an object")
    try:
        params, mpr = params_from_dict(raw)
    except (KeyError, TypeError, ValueError) as exc:
        raise pio.ConfigError(f"model: {exc}") from None
    problems = validate_params(params, mpr, calibration=False)
    if problems:
        raise pio.ConfigError("model: " + "; ".join(problems))
    return params, mpr


def _state(cfg: dict, params) -> np.ndarray:
    x = _section(cfg, "state").get("x")
    if x is None:
        return params.x0
    x = np.asarray(x, dtype=float)
    if x.shape != (params.dim,):
        raise pio.ConfigError(f"state.x must have {params.dim} entries")
    return x


def _set(cfg: dict, section: str, key: str, value) -> None:
    if value is not None:
        cfg.setdefault(section, {})[key] = value


def _floats(text: str) -> list[float]:
    return [float(v) for v in text.split(",") if v.strip()]


def _ints(text: str) -> list[int]:
    out = []
    for part in text.split(","):
        if "-" in part.strip()[1:]:
            a, b = part.split("-")
            out.extend(range(int(a), int(b) + 1))
        elif part.strip():
            out.append(int(part))
    return out


def _pairs(value) -> list[tuple[float, float]]:
    try:
        pairs = [(float(a), float(b)) for a, b in value]
    except (TypeError, ValueError):
        raise pio.ConfigError("expected a list of [T1, T2] pairs") from None
    return pairs


def _calendar_pairs(n: int, start: float = 1.0) -> list[tuple[float, float]]:
    return [(start + i, start + i + 1.0) for i in range(n)]


# ---------------------------------------------------------------- subcommands

def cmd_price(cfg, args, out: Path) -> list[str]:
    params, mpr = _model(cfg)
    sec = _section(cfg, "price")
    t, T1, T2 = float(sec.get("t", 0.0)), float(sec.get("T1", 1.0)), float(sec.get("T2", 2.0))
    measure = str(sec.get("measure", "Q"))
    x = _state(cfg, params)
    price = forward_period(params, measure, t, T1, T2, x, mpr)
    print(pio.fmt(price))
    return []


def cmd_curve(cfg, args, out: Path) -> list[str]:
    params, mpr = _model(cfg)
    sec = _section(cfg, "curve")
    t = float(sec.get("t", 0.0))
    pairs = _pairs(sec["maturities"]) if "maturities" in sec else _calendar_pairs(int(sec.get("n", 10)))
    x = _state(cfg, params)
    fq = forward_curve(params, "Q", t, x, pairs)
    header = ["T1", "T2", "forward_Q"]
    cols = [fq]
    fp = None
    if mpr is not None and params.dim == 2:
        fp = forward_curve(params, "P", t, x, pairs, mpr)
        header += ["expected_spot_P", "risk_premium"]
        cols += [fp, fq - fp]
    rows = [[a, b] + [c[i] for c in cols] for i, (a, b) in enumerate(pairs)]
    pio.write_csv(out / "curve.csv", header, rows)
    files = ["curve.csv"]
    if args.figures:
        from .plots import curve_figure
        curve_figure(out / "curve.png", [p[0] for p in pairs], fq, fp)
        files.append("curve.png")
    return files


def cmd_corr(cfg, args, out: Path) -> list[str]:
    params, _ = _model(cfg)
    sec = _section(cfg, "corr")
    t = float(sec.get("t", 0.0))
    legs = _pairs(sec["legs"]) if "legs" in sec else _calendar_pairs(int(sec.get("n", 10)))
    x = _state(cfg, params)
    R = correlation_matrix(params, t, legs, x)
    labels = [f"{pio.fmt(a)}-{pio.fmt(b)}" for a, b in legs]
    pio.write_csv(out / "corr.csv", ["leg"] + labels, [[lab] + list(R[i]) for i, lab in enumerate(labels)])
    files = ["corr.csv"]
    if args.figures:
        from .plots import correlation_figure
        correlation_figure(out / "corr.png", R, labels)
        files.append("corr.png")
    return files


def cmd_premium(cfg, args, out: Path) -> list[str]:
    params, mpr = _model(cfg)
    if mpr is None:
        raise pio.ConfigError("premium needs lambda_Z, lambda_Y, gamma_Z, gamma_Y in the model section")
    sec = _section(cfg, "premium")
    ts = sec.get("t", [0.0])
    ts = [float(v) for v in (ts if isinstance(ts, list) else [ts])]
    pairs = _pairs(sec["maturities"]) if "maturities" in sec else _calendar_pairs(int(sec.get("n", 10)))
    x = _state(cfg, params)
    rows = []
    for t in ts:
        for T1, T2 in pairs:
            rows.append([t, T1, T2, risk_premium(params, mpr, t, T1, T2, x)])
    pio.write_csv(out / "premium.csv", ["t", "T1", "T2", "premium"], rows)
    return ["premium.csv"]


def _quotes(cfg, args):
    path = args.quotes or cfg.get("quotes")
    if not path:
        raise pio.ConfigError("a quote CSV is required (--quotes or config 'quotes')")
    return pio.ingest_quotes(path), str(path)


def _error_tables(out: Path, quotes, fo, errs) -> list[str]:
    rows = []
    for k, label in enumerate(quotes.labels):
        for j in range(quotes.n_contracts):
            p = quotes.prices[k, j]
            if np.isnan(p):
                continue
            rows.append([label, j + 1, p, fo.model_prices[k, j], fo.pred_prices[k, j],
                         fo.relative_errors[k, j], fo.relative_errors_pred[k, j]])
    pio.write_csv(out / "relative_errors.csv",
                  ["quote_date", "nearby", "observed", "model_filtered", "model_predicted",
                   "rel_error_filtered", "rel_error_predicted"], rows)
    pio.write_csv(out / "errors_by_date.csv", ["quote_date", "mean_rel_error"],
                  zip(quotes.labels, errs["per_date_mean"]))
    pc = errs["per_contract"]
    pio.write_csv(out / "errors_by_contract.csv",
                  ["nearby", "n", "mean", "std", "min", "q1", "median", "q3", "max"],
                  [[j, v["n"], v["mean"], v["std"], v["min"], v["q1"], v["median"], v["q3"], v["max"]]
                   for j, v in sorted(pc.items())])
    return ["relative_errors.csv", "errors_by_date.csv", "errors_by_contract.csv"]


def cmd_filter(cfg, args, out: Path) -> list[str]:
    params, mpr = _model(cfg)
    if params.dim != 2:
        raise pio.ConfigError("filtering is implemented for the two-factor model")
    quotes, _ = _quotes(cfg, args)
    fo = run_filter(params, mpr, quotes)
    errs = relative_errors(fo, quotes)
    payload = fo.to_dict(include_states=True)
    payload["errors"] = errs
    payload["errors_predicted"] = relative_errors(fo, quotes, predicted=True)
    payload["dates"] = list(quotes.labels)
    pio.write_json(out / "filter.json", payload)
    files = ["filter.json"] + _error_tables(out, quotes, fo, errs)
    if args.figures:
        from .plots import filter_error_figure
        filter_error_figure(out / "filter_errors.png", errs["per_date_mean"], errs["per_contract"])
        files.append("filter_errors.png")
    return files


def _calibration_config(cfg, seed) -> CalibrationConfig:
    sec = copy.deepcopy(_section(cfg, "calibration"))
    bounds = dict(DEFAULT_BOUNDS)
    for k, v in sec.pop("bounds", {}).items():
        if k not in DEFAULT_BOUNDS:
            raise pio.ConfigError(f"calibration.bounds: unknown parameter {k}")
        bounds[k] = tuple(v)
    known = {f.name for f in dataclasses.fields(CalibrationConfig)} - {"bounds", "seed"}
    unknown = set(sec) - known
    if unknown:
        raise pio.ConfigError(f"calibration: unknown keys {sorted(unknown)}")
    try:
        return CalibrationConfig(bounds=bounds, seed=seed, **sec)
    except (TypeError, ValueError) as exc:
        raise pio.ConfigError(f"calibration: {exc}") from None


def cmd_calibrate(cfg, args, out: Path) -> list[str]:
    quotes, _ = _quotes(cfg, args)
    ccfg = _calibration_config(cfg, cfg["seed"])
    res = calibrate(quotes, ccfg)
    pio.write_json(out / "calibration.json", res.to_dict())
    flat = {k: float(v) for k, v in zip(PARAM_NAMES, params_to_vector(res.params, res.mpr))}
    pio.write_json(out / "calibrated_params.json", {"model": flat})
    files = ["calibration.json", "calibrated_params.json"]
    files += _error_tables(out, quotes, res.filter_output, res.errors)
    return files


def _sim_config(cfg, seed):
    from .simulation import SimConfig
    sec = dict(_section(cfg, "simulation"))
    known = {f.name for f in dataclasses.fields(SimConfig)} - {"seed"}
    unknown = set(sec) - known
    if unknown:
        raise pio.ConfigError(f"simulation: unknown keys {sorted(unknown)}")
    try:
        return SimConfig(seed=seed, **sec)
    except (TypeError, ValueError) as exc:
        raise pio.ConfigError(f"simulation: {exc}") from None


def cmd_simulate(cfg, args, out: Path) -> list[str]:
    from .simulation import forward_surface, simulate_paths
    params, mpr = _model(cfg)
    scfg = _sim_config(cfg, cfg["seed"])
    if params.dim == 3 and scfg.measure.upper() == "P":
        raise pio.ConfigError("three-factor simulation runs under measure Q only")
    if scfg.record_stride == 1 and "record_stride" not in _section(cfg, "simulation"):
        scfg = dataclasses.replace(scfg, record_stride=max(1, scfg.steps_per_year // 12))
    sim = simulate_paths(params, mpr, scfg)
    surf = forward_surface(sim, params, scfg)
    P = surf.prices
    mean = P.mean(axis=1)
    std = P.std(axis=1, ddof=1) if P.shape[1] > 1 else np.zeros_like(mean)
    q05, q50, q95 = np.percentile(P, [5, 50, 95], axis=1)
    rows = []
    for i, t in enumerate(surf.times):
        for l in range(P.shape[2]):
            rows.append([t, l + 1, mean[i, l], std[i, l], q05[i, l], q50[i, l], q95[i, l]])
    pio.write_csv(out / "surface_summary.csv", ["t", "nearby", "mean", "std", "q05", "median", "q95"], rows)
    summary = {"n_paths": scfg.n_paths, "horizon": scfg.horizon, "steps_per_year": scfg.steps_per_year,
               "measure": scfg.measure, "initial_prices": surf.initial.tolist()}
    if params.dim == 3:
        summary.update(clamp_events=sim.clamp_events, clamp_rate=sim.clamp_rate,
                       step_evaluations=sim.n_step_evaluations)
    pio.write_json(out / "simulation.json", summary)
    files = ["surface_summary.csv", "simulation.json"]
    if args.dump_surface:
        dump = ([m, t, l + 1, P[i, m, l]] for m in range(P.shape[1])
                for i, t in enumerate(surf.times) for l in range(P.shape[2]))
        pio.write_csv(out / "surface.csv", ["path", "t", "nearby", "price"], dump)
        files.append("surface.csv")
    if args.figures:
        from .plots import surface_figure
        surface_figure(out / "surface.png", surf.times, mean, q05, q95)
        files.append("surface.png")
    return files


def cmd_hedge(cfg, args, out: Path) -> list[str]:
    from .hedging import hedge_experiment
    params, mpr = _model(cfg)
    if params.dim != 2:
        raise pio.ConfigError("hedging is implemented for the two-factor model")
    sec = _section(cfg, "hedge")
    horizons = [int(h) for h in sec.get("horizons", list(range(2, 11)))]
    rebalance = str(sec.get("rebalance", "monthly"))
    if not horizons or min(horizons) < 1:
        raise pio.ConfigError("hedge.horizons must be whole years >= 1")
    scfg = _sim_config(cfg, cfg["seed"])
    scfg = dataclasses.replace(scfg, horizon=max(horizons))
    records, stats = hedge_experiment(params, mpr, horizons, scfg, rebalance)
    pio.write_csv(out / "exposure_stats.csv",
                  ["horizon", "hedged_std", "hedged_skew", "unhedged_std", "unhedged_skew"],
                  [[s.horizon, s.hedged_std, s.hedged_skew, s.unhedged_std, s.unhedged_skew] for s in stats])
    files = ["exposure_stats.csv"]
    for s in stats:
        name = f"exposure_density_{s.horizon}y.csv"
        pio.write_csv(out / name, ["bin_left", "bin_right", "hedged_density", "unhedged_density"],
                      zip(s.hist_edges[:-1], s.hist_edges[1:], s.hedged_density, s.unhedged_density))
        files.append(name)
    if args.ledger:
        rows = ([r.horizon, m, r.F0, r.F_terminal[m], r.cumulative_gain[m], r.unhedged[m], r.hedged[m]]
                for r in records for m in range(r.F_terminal.size))
        pio.write_csv(out / "hedge_ledger.csv",
                      ["horizon", "path", "F0", "F_terminal", "gain", "unhedged", "hedged"], rows)
        files.append("hedge_ledger.csv")
    if args.figures:
        from .plots import exposure_figure
        exposure_figure(out / "exposure_densities.png", stats)
        files.append("exposure_densities.png")
    return files


def cmd_synth(cfg, args, out: Path) -> list[str]:
    from .synthetic import synthetic_quotes
    params, mpr = _model(cfg)
    if params.dim != 2:
        raise pio.ConfigError("synthetic quotes need the two-factor model")
    sec = _section(cfg, "synth")
    try:
        quotes, _ = synthetic_quotes(params, mpr, n_dates=int(sec.get("n_dates", 100)),
                                     n_contracts=int(sec.get("n_contracts", 10)),
                                     spread=float(sec.get("spread", 1.0)),
                                     gap_prob=float(sec.get("gap_prob", 0.0)), seed=cfg["seed"],
                                     noiseless=bool(sec.get("noiseless", False)))
    except ValueError as exc:
        raise pio.ConfigError(f"synth: {exc}") from None
    pio.emit_quotes(quotes, out / "quotes.csv")
    pio.write_json(out / "true_params.json", {"model": params_to_dict(params, mpr)})
    return ["quotes.csv", "true_params.json"]


COMMANDS = {
    "price": cmd_price, "curve": cmd_curve, "corr": cmd_corr, "premium": cmd_premium,
    "filter": cmd_filter, "calibrate": cmd_calibrate, "simulate": cmd_simulate,
    "hedge": cmd_hedge, "synth": cmd_synth,
}


# ---------------------------------------------------------------- argument parsing

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file")
    common.add_argument("--seed", type=int, help="random seed (overrides config)")
    common.add_argument("--out", default="out", help="output directory (default: out)")
    common.add_argument("--x", type=_floats, help="current state, comma separated (e.g. 2.1,1.9)")

    p = argparse.ArgumentParser(prog="polyfwd", description="Polynomial-diffusion forward curve toolkit")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("price", parents=[common], help="forward with a delivery period")
    s.add_argument("--t", type=float)
    s.add_argument("--T1", type=float)
    s.add_argument("--T2", type=float)
    s.add_argument("--measure", choices=["Q", "P"])

    for name, helptext in (("curve", "calendar forward curve"), ("corr", "instantaneous correlations"),
                           ("premium", "forward risk premia")):
        s = sub.add_parser(name, parents=[common], help=helptext)
        s.add_argument("--t", type=float)
        s.add_argument("--n", type=int, help="number of consecutive calendar years")
        if name != "premium":
            s.add_argument("--figures", action="store_true", help="also write PNG figures")

    for name in ("filter", "calibrate"):
        s = sub.add_parser(name, parents=[common],
                           help="run the quadratic Kalman filter" if name == "filter" else "estimate parameters")
        s.add_argument("--quotes", help="quote CSV (quote_date,nearby,price,spread)")
        if name == "filter":
            s.add_argument("--figures", action="store_true")
        else:
            s.add_argument("--ls-generations", type=int)
            s.add_argument("--ml-generations", type=int)
            s.add_argument("--pop-size", type=int)
            s.add_argument("--workers", type=int)

    for name in ("simulate", "hedge"):
        s = sub.add_parser(name, parents=[common],
                           help="simulate forward surfaces" if name == "simulate" else "rolling-hedge experiment")
        s.add_argument("--paths", type=int)
        s.add_argument("--steps-per-year", type=int)
        s.add_argument("--workers", type=int)
        s.add_argument("--figures", action="store_true")
        if name == "simulate":
            s.add_argument("--horizon", type=int)
            s.add_argument("--measure", choices=["Q", "P"])
            s.add_argument("--dump-surface", action="store_true", help="write every simulated price")
        else:
            s.add_argument("--horizons", type=_ints, help="e.g. 2-10 or 2,5,10")
            s.add_argument("--ledger", action="store_true", help="write per-path terminal ledger")

    s = sub.add_parser("synth", parents=[common], help="write a synthetic quote CSV")
    s.add_argument("--n-dates", type=int)
    s.add_argument("--spread", type=float)
    s.add_argument("--gap-prob", type=float)
    return p


def _apply_overrides(cfg: dict, args) -> dict:
    cfg = copy.deepcopy(cfg)
    unknown = set(cfg) - TOP_KEYS
    if unknown:
        raise pio.ConfigError(f"unknown config sections {sorted(unknown)}")
    if args.seed is not None:
        cfg["seed"] = args.seed
    cfg.setdefault("seed", 0)
    if not isinstance(cfg["seed"], int) or cfg["seed"] < 0:
        raise pio.ConfigError("seed must be a nonnegative integer")
    if args.x is not None:
        _set(cfg, "state", "x", args.x)
    g = vars(args)
    c = args.command
    if c == "price":
        for k in ("t", "T1", "T2", "measure"):
            _set(cfg, "price", k, g.get(k))
    elif c in ("curve", "corr", "premium"):
        _set(cfg, c, "t", g.get("t"))
        _set(cfg, c, "n", g.get("n"))
    elif c == "calibrate":
        for k in ("ls_generations", "ml_generations", "pop_size", "workers"):
            _set(cfg, "calibration", k, g.get(k))
    elif c in ("simulate", "hedge"):
        _set(cfg, "simulation", "n_paths", g.get("paths"))
        _set(cfg, "simulation", "steps_per_year", g.get("steps_per_year"))
        _set(cfg, "simulation", "workers", g.get("workers"))
        if c == "simulate":
            _set(cfg, "simulation", "horizon", g.get("horizon"))
            _set(cfg, "simulation", "measure", g.get("measure"))
        else:
            _set(cfg, "hedge", "horizons", g.get("horizons"))
    elif c == "synth":
        _set(cfg, "synth", "n_dates", g.get("n_dates"))
        _set(cfg, "synth", "spread", g.get("spread"))
        _set(cfg, "synth", "gap_prob", g.get("gap_prob"))
    return cfg


def run(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    for flag in ("figures", "dump_surface", "ledger"):
        if not hasattr(args, flag):
            setattr(args, flag, False)
    if not hasattr(args, "quotes"):
        args.quotes = None
    out = Path(args.out)
    try:
        cfg = _apply_overrides(pio.load_config(args.config), args)
        files = COMMANDS[args.command](cfg, args, out)
        inputs = [p for p in (args.config, args.quotes or cfg.get("quotes")) if p]
        pio.write_manifest(out, args.command, cfg, cfg["seed"], files, inputs)
    except (pio.ConfigError, UnsupportedMeasureError, PricingError, NoiseConfigError) as exc:
        print(f"config error ({type(exc).__name__}): {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except pio.DataError as exc:
        print(f"data error ({type(exc).__name__}): {exc}", file=sys.stderr)
        return EXIT_DATA
    except (SingularInnovationError, NotPSDError, DegenerateVarianceError, InvalidInputError,
            np.linalg.LinAlgError, FloatingPointError, OverflowError) as exc:
        print(f"numerical failure ({type(exc).__name__}): {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return 0


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
