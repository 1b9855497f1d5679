"""CSV ingestion and JSON/CSV result persistence."""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np

from . import __version__
from .adapt import AdaptConfig, AdaptResult
from .rkhs import PiecewisePenalty
from .sim import BenchmarkTable
from .solver import Design, SplineFit, check_optimality

__all__ = [
    "DesignFormatError",
    "read_design",
    "write_design",
    "fit_to_dict",
    "adapt_result_to_dict",
    "write_json",
    "read_json",
    "write_csv",
    "write_result",
    "read_penalty",
    "read_adapt_config",
    "format_number",
]


class DesignFormatError(ValueError):
    pass


def format_number(x) -> str:
    """17 significant digits: enough to round-trip any double."""
    return format(float(x), ".17g")


def _data_lines(path: Path):
    try:
        text = path.read_text()
    except OSError as exc:
        raise OSError(f"cannot read {path}: {exc.strerror or exc}") from exc
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        yield lineno, line


def read_design(path, rescale: bool = False) -> Design:
    """Read a CSV with header ``t,y`` or ``t,y,w``.

    Lines starting with ``#`` are comments. Rows are sorted by t. Duplicate
    abscissae are an error. Abscissae outside [0, 1] are an error unless
    ``rescale`` is set, in which case t is min-max mapped onto [0, 1] and
    the original range is kept in ``Design.t_range``.
    """
    path = Path(path)
    lines = list(_data_lines(path))
    if not lines:
        raise DesignFormatError(f"{path}: empty file")
    head_no, head = lines[0]
    cols = [c.strip() for c in next(csv.reader([head]))]
    if cols not in (["t", "y"], ["t", "y", "w"]):
        raise DesignFormatError(f"{path}:{head_no}: header must be 't,y' or 't,y,w', got {head!r}")
    rows, where = [], []
    for lineno, line in lines[1:]:
        fields = next(csv.reader([line]))
        if len(fields) != len(cols):
            raise DesignFormatError(
                f"{path}:{lineno}: expected {len(cols)} fields, got {len(fields)}"
            )
        try:
            vals = [float(f) for f in fields]
        except ValueError:
            raise DesignFormatError(f"{path}:{lineno}: non-numeric field in {line!r}") from None
        if not all(math.isfinite(v) for v in vals):
            raise DesignFormatError(f"{path}:{lineno}: non-finite value")
        rows.append(vals)
        where.append(lineno)
    if not rows:
        raise DesignFormatError(f"{path}: no data rows")
    data = np.array(rows)
    where = np.array(where)
    order = np.argsort(data[:, 0], kind="stable")
    data, where = data[order], where[order]
    t = data[:, 0]
    dup = np.flatnonzero(np.diff(t) == 0)
    if dup.size:
        k = dup[0]
        raise DesignFormatError(
            f"{path}: duplicate t = {t[k]!r} on lines {where[k]} and {where[k + 1]}; "
            "pre-bin repeated abscissae"
        )
    t_range = None
    if t[0] < 0 or t[-1] > 1:
        if not rescale:
            bad = where[np.flatnonzero((t < 0) | (t > 1))[0]]
            raise DesignFormatError(
                f"{path}:{bad}: t outside [0, 1]; pass --rescale to map onto [0, 1]"
            )
    if rescale:
        lo, hi = float(t[0]), float(t[-1])
        if hi == lo:
            raise DesignFormatError(f"{path}: cannot rescale a single abscissa")
        t = (t - lo) / (hi - lo)
        t_range = (lo, hi)
    w = data[:, 2] if data.shape[1] == 3 else None
    if w is not None and np.any(w <= 0):
        bad = where[np.flatnonzero(w <= 0)[0]]
        raise DesignFormatError(f"{path}:{bad}: weights must be positive")
    return Design(t, data[:, 1], w, t_range)


def write_design(design: Design, path, comments=()) -> None:
    cols = {"t": design.t, "y": design.y}
    if not np.all(design.w == 1.0):
        cols["w"] = design.w
    write_csv(path, cols, comments)


def write_csv(path, columns: dict, comments=()) -> None:
    """Columns of equal length; every number with 17 significant digits."""
    path = Path(path)
    names = list(columns)
    arrays = [np.asarray(columns[k]) for k in names]
    lengths = {a.shape[0] for a in arrays}
    if len(lengths) > 1:
        raise ValueError(f"column lengths differ: {sorted(lengths)}")
    out = [f"# {c}" for c in comments]
    out.append(",".join(names))
    for row in zip(*arrays):
        out.append(",".join(v if isinstance(v, str) else format_number(v) for v in row))
    try:
        path.write_text("\n".join(out) + "\n")
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror or exc}") from exc


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        if not math.isfinite(x):
            raise ValueError(f"cannot serialise non-finite number {x}")
        return x
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, Path):
        return str(obj)
    return obj


def write_json(obj: dict, path, config: dict | None = None) -> None:
    """JSON with ``version`` and ``config`` keys always present.

    Floats use Python's shortest repr, which reads back to the identical
    double.
    """
    path = Path(path)
    payload = {"version": __version__, "config": config or {}}
    payload.update(obj)
    text = json.dumps(_jsonable(payload), indent=2, sort_keys=False, allow_nan=False)
    try:
        path.write_text(text + "\n")
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror or exc}") from exc


def read_json(path) -> dict:
    path = Path(path)
    try:
        return json.loads(path.read_text())
    except OSError as exc:
        raise OSError(f"cannot read {path}: {exc.strerror or exc}") from exc
    except json.JSONDecodeError as exc:
        raise ValueError(f"{path}:{exc.lineno}: invalid JSON ({exc.msg})") from None


def fit_to_dict(fit: SplineFit) -> dict:
    report = check_optimality(fit)
    design = fit.design
    return {
        "m": fit.m,
        "lambda": fit.lam,
        "hat_trace": fit.hat_trace,
        "penalty": fit.penalty.to_dict(),
        "c": fit.c,
        "d": fit.d,
        "t": design.t,
        "n": design.n,
        "t_range": list(design.t_range) if design.t_range else None,
        "design_sha256": design.digest(),
        "optimality": report.to_dict(),
    }


def adapt_result_to_dict(result: AdaptResult) -> dict:
    out = fit_to_dict(result.fit)
    out["selected"] = {"S": result.selected[0], "gamma": result.selected[1]}
    out["gaic_table"] = [
        {
            "S": e.S,
            "gamma": e.gamma,
            "score": e.score,
            "lambda": e.lam,
            "knots": list(e.knots),
            "values": list(e.values),
        }
        for e in sorted(result.gaic_table, key=lambda e: (e.S, e.gamma))
    ]
    return out


def table_columns(table: BenchmarkTable) -> dict:
    rows = list(table.as_rows())
    cols = {"method": [r["method"] for r in rows]}
    for k in rows[0]:
        if k != "method":
            cols[k] = [r[k] for r in rows]
    return cols


def write_result(result, path, config: dict | None = None, comments=()) -> None:
    """Persist a fit, adaptive result or benchmark table.

    Fits and adaptive results go to JSON; benchmark tables go to CSV with
    the version and configuration in ``#`` comment lines.
    """
    if isinstance(result, AdaptResult):
        write_json(adapt_result_to_dict(result), path, config)
    elif isinstance(result, SplineFit):
        write_json(fit_to_dict(result), path, config)
    elif isinstance(result, BenchmarkTable):
        head = [f"adaspline {__version__}", "config " + json.dumps(_jsonable(config or {}), sort_keys=True)]
        write_csv(path, table_columns(result), head + list(comments))
    else:
        raise TypeError(f"cannot write {type(result).__name__}")


def read_penalty(path) -> PiecewisePenalty:
    data = read_json(path)
    if not isinstance(data, dict):
        raise ValueError(f"{path}: penalty file must hold a JSON object")
    return PiecewisePenalty.from_dict(data)


def read_adapt_config(path) -> AdaptConfig:
    """AdaptConfig from JSON; unknown keys are rejected."""
    data = read_json(path)
    if not isinstance(data, dict):
        raise ValueError(f"{path}: config must hold a JSON object")
    allowed = set(AdaptConfig.__dataclass_fields__)
    unknown = set(data) - allowed
    if unknown:
        raise ValueError(f"{path}: unknown config keys {sorted(unknown)}; allowed {sorted(allowed)}")
    return AdaptConfig(**data)
