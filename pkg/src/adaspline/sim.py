"""Monte Carlo benchmark: test functions, error metrics, method comparison."""

from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.integrate import simpson
from threadpoolctl import threadpool_limits

from .adapt import AdaptConfig, adapt_fit
from .rkhs import PiecewisePenalty
from .solver import Design, PenalizedSystem, SplineFit, predict, select_lambda

__all__ = [
    "ScenarioSpec",
    "heaviside",
    "mexican_hat",
    "scenario",
    "gen_scenario",
    "ise",
    "pae",
    "ReplicateRecord",
    "BenchmarkTable",
    "run_benchmark",
    "median_replicate",
    "quantile_bands",
    "fit_method",
    "BenchmarkAborted",
    "PAE_POINTS",
    "METHODS",
]

PAE_POINTS = (0.2, 0.4, 0.6, 0.8)
METHODS = ("ss", "eqk", "adss")
ISE_GRID = 1001
BAND_GRID = 201
EQK_KNOTS = tuple(k / 6 for k in range(1, 6))
EQK_LOG10_GRID = (-2.0, -1.0, 0.0, 1.0, 2.0)
EQK_SWEEPS = 2
MAX_FAILURE_FRACTION = 0.05


def heaviside_f0(t):
    return 5.0 * (np.asarray(t, dtype=float) >= 0.5)


def mexican_hat_f0(t):
    t = np.asarray(t, dtype=float)
    sd = 0.02
    bump = np.exp(-0.5 * ((t - 0.6) / sd) ** 2) / (sd * math.sqrt(2 * math.pi))
    return -1.0 + 1.5 * t + 0.2 * bump


@dataclass(frozen=True)
class ScenarioSpec:
    name: str
    n: int = 200
    sigma: float = 0.7
    replicates: int = 100
    seed: int = 0
    f0: Callable = field(default=heaviside_f0, compare=False)

    def __post_init__(self):
        if self.n < 10:
            raise ValueError("n must be >= 10")
        if self.replicates < 1:
            raise ValueError("replicates must be >= 1")
        if self.sigma < 0:
            raise ValueError("sigma must be >= 0")

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "n": self.n,
            "sigma": self.sigma,
            "replicates": self.replicates,
            "seed": self.seed,
        }


def heaviside(replicates=100, seed=0, n=200, sigma=0.7) -> ScenarioSpec:
    return ScenarioSpec("heaviside", n, sigma, replicates, seed, heaviside_f0)


def mexican_hat(replicates=100, seed=0, n=200, sigma=0.25) -> ScenarioSpec:
    return ScenarioSpec("mexican_hat", n, sigma, replicates, seed, mexican_hat_f0)


def scenario(name: str, **kwargs) -> ScenarioSpec:
    builders = {"heaviside": heaviside, "mexican_hat": mexican_hat}
    if name not in builders:
        raise ValueError(f"unknown scenario {name!r}; choose from {sorted(builders)}")
    return builders[name](**{k: v for k, v in kwargs.items() if v is not None})


def _stream(seed: int, replicate: int) -> np.random.Generator:
    # Philox is counter based: draw i of stream (seed, replicate) never
    # depends on which other replicates were generated or in what order.
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, replicate])))


def gen_scenario(spec: ScenarioSpec, replicate: int) -> Design:
    """t_i = i/n, y_i = f0(t_i) + sigma * eps_i with a per-replicate stream."""
    if not 0 <= replicate < spec.replicates:
        raise ValueError(f"replicate {replicate} outside [0, {spec.replicates})")
    t = np.arange(1, spec.n + 1) / spec.n
    f = np.asarray(spec.f0(t), dtype=float)
    if spec.sigma == 0:
        return Design(t, f)
    eps = _stream(spec.seed, replicate).standard_normal(spec.n)
    return Design(t, f + spec.sigma * eps)


def _as_callable(fhat):
    if isinstance(fhat, SplineFit):
        return lambda x: predict(fhat, x)
    return fhat


def ise(fhat, f0, grid_size: int = ISE_GRID) -> float:
    """int_0^1 (fhat - f0)^2 by composite Simpson on an equispaced grid."""
    if grid_size < 101:
        raise ValueError("grid_size must be >= 101")
    grid = np.linspace(0.0, 1.0, grid_size)
    err = np.asarray(_as_callable(fhat)(grid), dtype=float) - np.asarray(f0(grid), dtype=float)
    return float(simpson(err**2, x=grid))


def pae(fhat, f0, t: float) -> float:
    if not 0.0 <= t <= 1.0:
        raise ValueError("t must lie in [0, 1]")
    return float(abs(_as_callable(fhat)(np.array([t]))[0] - f0(np.array([t]))[0]))


# ---------------------------------------------------------------- methods


def fit_ss(design: Design, m: int = 2) -> SplineFit:
    system = PenalizedSystem(design, PiecewisePenalty.uniform(), m)
    return system.fit(select_lambda(system, criterion="gcv"))


def fit_eqk(design: Design, m: int = 2) -> SplineFit:
    """Five equally spaced penalty jumps at k/6, levels chosen by GCV.

    Coordinate descent over a log10 grid of segment levels; for every
    candidate penalty lambda is re-selected by GCV. Ties keep the current
    level.
    """
    levels = np.zeros(len(EQK_KNOTS) + 1)

    def evaluate(lv):
        pen = PiecewisePenalty(np.array(EQK_KNOTS), 10.0**lv)
        system = PenalizedSystem(design, pen, m)
        lam = select_lambda(system, criterion="gcv")
        return system.gcv(lam), system, lam

    best_score, best_system, best_lam = evaluate(levels)
    for _ in range(EQK_SWEEPS):
        changed = False
        for j in range(levels.size):
            for v in EQK_LOG10_GRID:
                if v == levels[j]:
                    continue
                trial = levels.copy()
                trial[j] = v
                score, system, lam = evaluate(trial)
                if score < best_score:
                    best_score, best_system, best_lam = score, system, lam
                    levels = trial
                    changed = True
        if not changed:
            break
    return best_system.fit(best_lam)


def fit_adss(design: Design, config: AdaptConfig | None = None) -> SplineFit:
    return adapt_fit(design, config).fit


def fit_method(method: str, design: Design, config: AdaptConfig | None = None) -> SplineFit:
    if method == "ss":
        return fit_ss(design)
    if method == "eqk":
        return fit_eqk(design)
    if method == "adss":
        return fit_adss(design, config)
    raise ValueError(f"unknown method {method!r}; choose from {METHODS}")


# -------------------------------------------------------------- harness


@dataclass(frozen=True)
class ReplicateRecord:
    replicate: int
    method: str
    ok: bool
    ise: float = math.nan
    pae: tuple = ()
    lam: float = math.nan
    curve: np.ndarray | None = field(default=None, repr=False, compare=False)
    penalty: dict | None = None
    design_digest: str = ""
    error: str = ""


class BenchmarkAborted(RuntimeError):
    pass


@dataclass
class BenchmarkTable:
    """Means and standard deviations of ISE and PAE per method."""

    methods: tuple
    metrics: tuple
    mean: dict
    sd: dict
    n_ok: dict
    n_failed: dict
    records: list = field(repr=False)
    band_grid: np.ndarray = field(repr=False, default_factory=lambda: np.linspace(0, 1, BAND_GRID))
    spec: ScenarioSpec | None = None

    def row(self, method: str) -> dict:
        return {k: (self.mean[method][k], self.sd[method][k]) for k in self.metrics}

    def as_rows(self):
        for method in self.methods:
            out = {"method": method}
            for k in self.metrics:
                out[f"{k}_mean"] = self.mean[method][k]
                out[f"{k}_sd"] = self.sd[method][k]
            out["n_ok"] = self.n_ok[method]
            out["n_failed"] = self.n_failed[method]
            yield out


def _metric_names():
    return ("ISE",) + tuple(f"PAE({p:g})" for p in PAE_POINTS)


def _run_replicate(args):
    spec, replicate, methods, config, band_grid = args
    design = gen_scenario(spec, replicate)
    digest = design.digest()
    out = []
    for method in methods:
        try:
            f = fit_method(method, design, config)
            curve = predict(f, band_grid)
            out.append(
                ReplicateRecord(
                    replicate=replicate,
                    method=method,
                    ok=True,
                    ise=ise(f, spec.f0),
                    pae=tuple(pae(f, spec.f0, p) for p in PAE_POINTS),
                    lam=f.lam,
                    curve=curve,
                    penalty=f.penalty.to_dict(),
                    design_digest=digest,
                )
            )
        except Exception as exc:  # recorded and counted, see run_benchmark
            out.append(
                ReplicateRecord(replicate, method, False, design_digest=digest,
                                error=f"{type(exc).__name__}: {exc}")
            )
    return out


def _init_worker():
    threadpool_limits(1)


def default_workers() -> int:
    env = os.environ.get("ADASPLINE_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def run_benchmark(
    spec: ScenarioSpec,
    methods: Sequence[str] = METHODS,
    config: AdaptConfig | None = None,
    workers: int | None = None,
    band_grid_size: int = BAND_GRID,
) -> BenchmarkTable:
    """Fit every method to every replicate and summarise ISE/PAE.

    All methods see the same noise realisation for a replicate. Results are
    reduced in replicate order, so the table does not depend on
    ``workers``. Failed fits are excluded and counted; more than 5% failed
    replicates for any method aborts the run.
    """
    methods = tuple(methods)
    if not methods:
        raise ValueError("need at least one method")
    for mth in methods:
        if mth not in METHODS:
            raise ValueError(f"unknown method {mth!r}; choose from {METHODS}")
    if config is None:
        config = AdaptConfig(m=1)
    workers = default_workers() if workers is None else max(1, int(workers))
    band_grid = np.linspace(0.0, 1.0, band_grid_size)
    jobs = [(spec, r, methods, config, band_grid) for r in range(spec.replicates)]

    with threadpool_limits(1):
        if workers == 1:
            chunks = [_run_replicate(j) for j in jobs]
        else:
            with ProcessPoolExecutor(max_workers=workers, initializer=_init_worker) as ex:
                chunks = list(ex.map(_run_replicate, jobs))
    records = [rec for chunk in chunks for rec in chunk]
    records.sort(key=lambda r: (r.replicate, methods.index(r.method)))

    metrics = _metric_names()
    mean, sd, n_ok, n_failed = {}, {}, {}, {}
    for mth in methods:
        good = [r for r in records if r.method == mth and r.ok]
        bad = [r for r in records if r.method == mth and not r.ok]
        n_ok[mth], n_failed[mth] = len(good), len(bad)
        if len(bad) > MAX_FAILURE_FRACTION * spec.replicates:
            raise BenchmarkAborted(
                f"{len(bad)} of {spec.replicates} replicates failed for {mth}: {bad[0].error}"
            )
        vals = np.array([[r.ise, *r.pae] for r in good]) if good else np.full((0, len(metrics)), np.nan)
        mean[mth] = {k: float(np.mean(vals[:, i])) if good else math.nan for i, k in enumerate(metrics)}
        sd[mth] = {
            k: float(np.std(vals[:, i], ddof=1)) if len(good) > 1 else 0.0
            for i, k in enumerate(metrics)
        }
    return BenchmarkTable(methods, metrics, mean, sd, n_ok, n_failed, records, band_grid, spec)


def _method_records(results, method):
    records = results.records if isinstance(results, BenchmarkTable) else results
    good = [r for r in records if r.method == method and r.ok]
    if not good:
        raise ValueError(f"no successful replicates for {method!r}")
    return sorted(good, key=lambda r: r.replicate)


def median_replicate(results, method: str) -> int:
    """Replicate whose ISE has rank ceil(R/2).

    When several replicates share that ISE value, the lowest index wins.
    """
    good = _method_records(results, method)
    target = sorted(r.ise for r in good)[math.ceil(len(good) / 2) - 1]
    return min(r.replicate for r in good if r.ise == target)


def quantile_bands(results, method: str, grid=None, probs=(0.025, 0.975)) -> np.ndarray:
    """Pointwise empirical quantiles of the fitted curves, one row per prob."""
    probs = np.atleast_1d(np.asarray(probs, dtype=float))
    if np.any(probs <= 0) or np.any(probs >= 1):
        raise ValueError("probabilities must lie in (0, 1)")
    good = _method_records(results, method)
    base = results.band_grid if isinstance(results, BenchmarkTable) else np.linspace(0, 1, BAND_GRID)
    curves = np.array([r.curve for r in good])
    if grid is not None:
        grid = np.asarray(grid, dtype=float)
        curves = np.array([np.interp(grid, base, c) for c in curves])
    return np.quantile(curves, probs, axis=0, method="linear")
