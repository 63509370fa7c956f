"""File formats for the command-line front end.

Quote CSVs, JSON configs and results, run manifests, and the calendar
convention mapping dates to model time. All writes are atomic.
"""

from __future__ import annotations

import csv
import datetime as dt
import hashlib
import io
import json
import os
import platform
import tempfile
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .qkf import QuoteSeries

__all__ = [
    "DataError",
    "ConfigError",
    "QUOTE_HEADER",
    "DAYS_PER_YEAR",
    "fmt",
    "year_times",
    "ingest_quotes",
    "emit_quotes",
    "write_csv",
    "write_json",
    "write_text",
    "load_config",
    "config_hash",
    "write_manifest",
]

QUOTE_HEADER = ("quote_date", "nearby", "price", "spread")
DAYS_PER_YEAR = 365.25
MAX_NEARBY = 10


class DataError(ValueError):
    """Malformed or inconsistent input data."""


class ConfigError(ValueError):
    """Invalid configuration."""


def fmt(v) -> str:
    """Round-trip decimal formatting with 17 significant digits."""
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return str(int(v))
    if isinstance(v, str):
        return v
    if v is None:
        return ""
    f = float(v)
    if np.isnan(f):
        return ""
    return format(f, ".17g")


def year_times(dates: Sequence[dt.date]) -> tuple[np.ndarray, np.ndarray]:
    """Model times and within-year fractions for quote dates.

    Times are ACT/365.25 from January 1 of the first date's year. The
    within-year fraction is measured from January 1 of each date's own year,
    so the ``j``-th nearby always starts exactly ``j - frac`` years ahead.
    """
    if not dates:
        return np.zeros(0), np.zeros(0)
    anchor = dt.date(dates[0].year, 1, 1)
    times = np.array([(d - anchor).days / DAYS_PER_YEAR for d in dates])
    fracs = np.array([min((d - dt.date(d.year, 1, 1)).days / DAYS_PER_YEAR, np.nextafter(1.0, 0))
                      for d in dates])
    return times, fracs


def _parse_quote_rows(text: str, source: str) -> QuoteSeries:
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise DataError(f"{source}: empty file") from None
    if tuple(h.strip() for h in header) != QUOTE_HEADER:
        raise DataError(f"{source}: header must be {','.join(QUOTE_HEADER)}, got {','.join(header)}")
    rows: dict[tuple[dt.date, int], tuple[float, float]] = {}
    for lineno, row in enumerate(reader, start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != 4:
            raise DataError(f"{source}:{lineno}: expected 4 fields, got {len(row)}")
        ds, js, ps, ss = (c.strip() for c in row)
        try:
            d = dt.date.fromisoformat(ds)
            j = int(js)
            p = float(ps)
            s = float(ss) if ss else float("nan")
        except ValueError as exc:
            raise DataError(f"{source}:{lineno}: {exc}") from None
        if not 1 <= j <= MAX_NEARBY:
            raise DataError(f"{source}:{lineno}: nearby must be in 1..{MAX_NEARBY}, got {j}")
        if not (np.isfinite(p) and p > 0):
            raise DataError(f"{source}:{lineno}: price must be positive, got {ps}")
        if not (np.isnan(s) or (np.isfinite(s) and s >= 0)):
            raise DataError(f"{source}:{lineno}: spread must be nonnegative, got {ss}")
        if (d, j) in rows:
            raise DataError(f"{source}:{lineno}: duplicate quote for {d.isoformat()} nearby {j}")
        rows[(d, j)] = (p, s)
    if not rows:
        raise DataError(f"{source}: no quotes")
    dates = sorted({d for d, _ in rows})
    J = max(j for _, j in rows)
    index = {d: k for k, d in enumerate(dates)}
    prices = np.full((len(dates), J), np.nan)
    spreads = np.full((len(dates), J), np.nan)
    for (d, j), (p, s) in rows.items():
        prices[index[d], j - 1] = p
        spreads[index[d], j - 1] = s
    times, fracs = year_times(dates)
    return QuoteSeries(times, fracs, prices, spreads, tuple(d.isoformat() for d in dates))


def ingest_quotes(path: str | os.PathLike) -> QuoteSeries:
    """Read a ``quote_date,nearby,price,spread`` CSV into a :class:`QuoteSeries`."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from None
    return _parse_quote_rows(text, str(path))


def quotes_to_rows(quotes: QuoteSeries) -> list[list[str]]:
    if not quotes.labels:
        raise DataError("quote series needs date labels to be written as CSV")
    rows = []
    for k, label in enumerate(quotes.labels):
        for j in range(quotes.n_contracts):
            p = quotes.prices[k, j]
            if np.isnan(p):
                continue
            rows.append([label, str(j + 1), fmt(p), fmt(quotes.spreads[k, j])])
    return rows


def emit_quotes(quotes: QuoteSeries, path: str | os.PathLike) -> None:
    write_csv(path, QUOTE_HEADER, quotes_to_rows(quotes))


def _atomic_write(path: str | os.PathLike, data: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_text(path: str | os.PathLike, text: str) -> None:
    _atomic_write(path, text)


def write_csv(path: str | os.PathLike, header: Iterable[str], rows: Iterable[Iterable]) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(list(header))
    for row in rows:
        w.writerow([fmt(v) for v in row])
    _atomic_write(path, buf.getvalue())


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        f = float(obj)
        return None if np.isnan(f) else (f if np.isfinite(f) else str(f))
    return obj


def write_json(path: str | os.PathLike, obj) -> None:
    _atomic_write(path, json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n")


def load_config(path: str | os.PathLike | None) -> dict:
    """Load a JSON config; ``None`` gives an empty config."""
    if path is None:
        return {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(cfg, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return cfg


def config_hash(cfg: dict) -> str:
    blob = json.dumps(_jsonable(cfg), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def write_manifest(out_dir: str | os.PathLike, command: str, cfg: dict, seed: int | None,
                   outputs: Sequence[str], inputs: Sequence[str] = ()) -> Path:
    import matplotlib
    import scipy

    from . import __version__

    inp = {}
    for p in inputs:
        try:
            inp[str(p)] = hashlib.sha256(Path(p).read_bytes()).hexdigest()
        except OSError:
            inp[str(p)] = None
    manifest = {
        "command": command,
        "config_hash": config_hash(cfg),
        "config": cfg,
        "seed": seed,
        "inputs": inp,
        "outputs": sorted(outputs),
        "versions": {
            "polyfwd": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "matplotlib": matplotlib.__version__,
        },
        "timestamp": dt.datetime.now(dt.timezone.utc).isoformat(timespec="seconds"),
    }
    path = Path(out_dir) / f"manifest_{command}.json"
    write_json(path, manifest)
    return path
