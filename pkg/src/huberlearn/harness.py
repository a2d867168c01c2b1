"""Experiment orchestration: rate sweeps, the bias demo, baselines and the bound suite.

Every random draw is seeded from ``derive_seed(master_seed, tag, n, replicate)``,
so a row depends only on its key and never on worker scheduling.
"""
from __future__ import annotations

import csv
import json
import math
import os
import tempfile
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .config import ConfigError, section_view
from .distributions import (
    Example1, GaussMixture, RegressionModel, StudentT, SymmetricPareto, dense_grid, derive_seed,
    generate_dataset, make_rng, model_from_config, noise_from_config, toy_model, two_sin_pi, unit_scale,
)
from .errors import HuberLearnError, InvalidInputError, NumericalError
from .loss import huber
from .solver import (
    ScheduleParams, SolverOptions, adaptive_sigma, fit_erm, fit_lad, fit_least_squares,
)
from .spaces import Estimator, make_space, random_coefficients, space_from_config
from .theory import BoundCheck, check_all, moment_info, oracle_shift, sq_l2_distance

RATE_HEADER = ("n", "replicate", "sigma", "l2_sq_error", "excess_risk", "iters", "clip_count", "seed")
BIAS_HEADER = ("mode", "sigma", "n", "replicates", "mean_offset", "stderr", "oracle_offset", "within_3se")
BASELINE_HEADER = ("method", "replicate", "n", "sigma", "l2_sq_error", "seed")
COMPARATORS = ("least_squares", "lad")

# stream tags for derive_seed
DATA, EVAL, BIAS, BASELINE, BOUNDS, BOUNDS_MC = range(1, 7)


# -- configuration -------------------------------------------------------------------

@dataclass(frozen=True)
class SigmaPolicy:
    kind: str
    value: float = 0.01
    epsilon: float = 1.0
    q: float = 1.0
    values: tuple = ()

    def __post_init__(self):
        if self.kind not in ("fixed", "adaptive", "grid"):
            raise InvalidInputError(f"sigma policy must be fixed, adaptive or grid, got {self.kind!r}")
        object.__setattr__(self, "values", tuple(float(v) for v in self.values))
        if self.kind == "fixed" and not (math.isfinite(self.value) and self.value > 0):
            raise InvalidInputError(f"fixed sigma must be positive, got {self.value!r}")
        if self.kind == "grid" and not (self.values and all(v > 0 and math.isfinite(v) for v in self.values)):
            raise InvalidInputError("grid policy needs a nonempty list of positive values")
        ScheduleParams(self.epsilon, self.q)

    def sigmas(self, n):
        if self.kind == "fixed":
            return [float(self.value)]
        if self.kind == "adaptive":
            return [adaptive_sigma(n, ScheduleParams(self.epsilon, self.q))]
        return list(self.values)

    def label(self, sigma):
        return self.kind if self.kind != "grid" else f"sigma={sigma:g}"

    @classmethod
    def from_config(cls, cfg):
        return cls(cfg.get("kind", "adaptive"), float(cfg.get("value", 0.01)), float(cfg.get("epsilon", 1.0)),
                   float(cfg.get("q", 1.0)), tuple(cfg.get("values", ())))


@dataclass(frozen=True, eq=False)
class ExperimentConfig:
    model: RegressionModel
    space: object
    n_grid: tuple
    replicates: int
    sigma_policy: SigmaPolicy
    comparators: tuple = ()
    master_seed: int = 0
    output_dir: str = "results"
    solver: SolverOptions = field(default_factory=SolverOptions)
    eval_n: int = 100_000
    workers: int = 1
    extra: dict = field(default_factory=dict)
    raw: dict = field(default_factory=dict)

    def __post_init__(self):
        grid = tuple(int(n) for n in self.n_grid)
        if not grid or any(n < 1 for n in grid) or any(b <= a for a, b in zip(grid, grid[1:])):
            raise InvalidInputError(f"n_grid must be strictly increasing positive counts, got {self.n_grid!r}")
        object.__setattr__(self, "n_grid", grid)
        if int(self.replicates) != self.replicates or self.replicates < 1:
            raise InvalidInputError(f"replicates must be >= 1, got {self.replicates!r}")
        bad = set(self.comparators) - set(COMPARATORS)
        if bad:
            raise InvalidInputError(f"unknown comparators {sorted(bad)}; expected a subset of {COMPARATORS}")
        object.__setattr__(self, "comparators", tuple(self.comparators))
        if self.workers < 1 or self.eval_n < 2:
            raise InvalidInputError("workers must be >= 1 and eval_n >= 2")

    @property
    def bound(self):
        """M: the larger of the truth bound and the hypothesis-space bound."""
        return max(self.model.bound, self.space.bound)

    @classmethod
    def from_dict(cls, cfg, section=None):
        """Build from a loaded config; ``section`` selects a command table's overrides."""
        view = section_view(cfg, section) if section else dict(cfg)
        own = cfg.get(section, {}) if section else {}

        def name(key):
            head, *rest = key.split(".")
            node = own.get(head)
            for part in rest:
                node = node.get(part) if isinstance(node, dict) else None
            return f"{section}.{key}" if node is not None else key

        def build(key, fn):
            try:
                node = view
                for part in key.split("."):
                    node = node[part]
                return fn(node)
            except KeyError:
                raise ConfigError("missing", name(key)) from None
            except (InvalidInputError, TypeError, ValueError) as exc:
                raise ConfigError(str(exc), name(key)) from None

        build("model.noise", noise_from_config)
        model = build("model", model_from_config)
        space = build("space", space_from_config)
        policy = build("sigma_policy", SigmaPolicy.from_config)
        solver = build("solver", lambda c: SolverOptions(**c))
        extra = dict(cfg.get(section, {})) if section else {}
        try:
            return cls(model, space, tuple(view.get("n_grid", ())), view.get("replicates", 1), policy,
                       tuple(view.get("comparators", ())), int(view.get("master_seed", 0)),
                       str(view.get("output_dir", "results")), solver, int(view.get("eval_n", 100_000)),
                       int(view.get("workers", 1)), extra, cfg)
        except InvalidInputError as exc:
            raise ConfigError(str(exc), section) from None


# -- slope fitting -------------------------------------------------------------------

def fit_loglog_slope(points):
    """OLS of log(error) on log(n); returns ``(slope, intercept, stderr)``."""
    pts = np.asarray(list(points), dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2 or len(pts) < 3:
        raise InvalidInputError("need at least 3 (n, error) points")
    if not (np.all(np.isfinite(pts)) and np.all(pts > 0)):
        raise InvalidInputError("log-log fit needs finite positive n and errors")
    fit = stats.linregress(np.log(pts[:, 0]), np.log(pts[:, 1]))
    return float(fit.slope), float(fit.intercept), float(fit.stderr)


# -- shared per-row work -----------------------------------------------------------------

def _quiet_fit(space, data, sigma, opts):
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        est = fit_erm(space, data, sigma, opts)
    return est, sorted({w.category.__name__ for w in caught})


def _excess_risk(est, model, sigma, n_eval, seed):
    data = generate_dataset(model, n_eval, seed)
    xi = huber(data.ys - est(data.xs), sigma) - huber(data.ys - model.truth(data.xs), sigma)
    return float(xi.mean()), float(xi.std(ddof=1) / math.sqrt(len(xi)))


def _sq_error(est, model):
    if model.dim == 1:
        return float(sq_l2_distance(est, model.truth, model.domain)[0])
    return float(sq_l2_distance(est, model.truth, model.domain, mode="monte_carlo", seed=0)[0])


def _rate_task(task):
    cfg, n, r = task
    seed = derive_seed(cfg.master_seed, DATA, n, r)
    out = []
    try:
        data = generate_dataset(cfg.model, n, seed)
    except HuberLearnError as exc:
        return [{"n": n, "replicate": r, "sigma": s, "seed": seed, "error": str(exc)}
                for s in cfg.sigma_policy.sigmas(n)]
    for sigma in cfg.sigma_policy.sigmas(n):
        try:
            est, flags = _quiet_fit(cfg.space, data, sigma, cfg.solver)
            excess, excess_se = _excess_risk(est, cfg.model, sigma, cfg.eval_n,
                                             derive_seed(cfg.master_seed, EVAL, n, r))
            row = {"n": n, "replicate": r, "sigma": float(sigma), "l2_sq_error": _sq_error(est, cfg.model),
                   "excess_risk": excess, "excess_risk_se": excess_se,
                   "iters": int(est.diagnostics["iters"]), "clip_count": int(est.diagnostics["clip_count"]),
                   "seed": seed, "converged": bool(est.diagnostics["converged"]),
                   "risk_history": est.diagnostics["risk_history"],
                   "objective_history": est.diagnostics["objective_history"], "warnings": flags}
            if not all(math.isfinite(row[k]) for k in ("l2_sq_error", "excess_risk")):
                raise NumericalError("non-finite error estimate")
        except HuberLearnError as exc:
            row = {"n": n, "replicate": r, "sigma": float(sigma), "seed": seed, "error": str(exc)}
        out.append(row)
    return out


def _run_tasks(fn, tasks, workers):
    if workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(fn, tasks))
    return [fn(t) for t in tasks]


# -- tuning -----------------------------------------------------------------------------

def grid_search_space(data, sigma, bandwidths, radii, centers=8, bound=3.0, q=1.0, domain=((0.0, 1.0),),
                      holdout=0.25, seed=0, opts=None):
    """Pick (bandwidth, radius) by Huber risk on a random hold-out split.

    Returns ``(best_space, table)`` where the table lists every candidate's
    hold-out risk. Ties go to the earlier candidate.
    """
    n = len(data)
    n_val = int(round(holdout * n))
    if not 0 < n_val < n:
        raise InvalidInputError(f"holdout={holdout} leaves an empty training or validation part for n={n}")
    perm = make_rng(seed).permutation(n)
    val, train = perm[:n_val], perm[n_val:]
    fit_data = type(data)(data.xs[train], data.ys[train], data.seed)
    table, best = [], None
    for h in bandwidths:
        for radius in radii:
            space = make_space(centers, h, radius, bound, q, domain)
            est, _ = _quiet_fit(space, fit_data, sigma, opts)
            risk = float(np.mean(huber(data.ys[val] - est(data.xs[val]), sigma)))
            table.append({"bandwidth": float(h), "radius": float(radius), "holdout_risk": risk})
            if best is None or risk < best[0]:
                best = (risk, space)
    if best is None:
        raise InvalidInputError("grid search needs at least one bandwidth and one radius")
    return best[1], table


# -- rate experiment -------------------------------------------------------------------

@dataclass
class RateReport:
    rows: list
    failures: list
    curves: dict
    slopes: dict
    checks: list
    config: dict
    seed: int

    def _single(self):
        if len(self.curves) != 1:
            raise InvalidInputError("report holds several sigma curves; use .slopes")
        return next(iter(self.slopes.values()))

    @property
    def slope_defined(self):
        return self._single() is not None

    @property
    def slope(self):
        fit = self._single()
        return None if fit is None else fit[0]

    @property
    def slope_stderr(self):
        fit = self._single()
        return None if fit is None else fit[2]

    @property
    def mean_errors(self):
        """n -> mean squared L2 error, for single-curve policies."""
        self._single()
        return next(iter(self.curves.values()))

    def tallies(self):
        sat = sum(c.satisfied for c in self.checks)
        return {"checked": len(self.checks), "satisfied": sat, "violated": len(self.checks) - sat}

    def summary(self):
        return {
            "seed": self.seed,
            "curves": {label: {str(n): v for n, v in c.items()} for label, c in self.curves.items()},
            "slopes": {label: (None if s is None else {"slope": s[0], "intercept": s[1], "stderr": s[2]})
                       for label, s in self.slopes.items()},
            "bound_checks": self.tallies(),
            "failures": len(self.failures),
            "rows": len(self.rows),
        }


def _row_check(row, sigma_floor, info):
    if info is None or row["sigma"] <= sigma_floor:
        return None
    rhs = info.c_eps / row["sigma"] ** info.epsilon
    return BoundCheck(abs(row["excess_risk"] - row["l2_sq_error"]), rhs, row["excess_risk_se"],
                      "comparison_gap", inputs={"n": row["n"], "replicate": row["replicate"],
                                                "sigma": row["sigma"], "epsilon": info.epsilon})


def run_rate_experiment(cfg):
    """Fit every (n, replicate) of the grid and aggregate squared L2 errors by sigma curve."""
    tasks = [(cfg, n, r) for n in cfg.n_grid for r in range(cfg.replicates)]
    results = [row for chunk in _run_tasks(_rate_task, tasks, cfg.workers) for row in chunk]
    rows = [r for r in results if "error" not in r]
    failures = [r for r in results if "error" in r]
    if not rows:
        raise NumericalError(f"all {len(results)} rows failed; first error: {failures[0]['error']}")

    eps = cfg.extra.get("epsilon", cfg.sigma_policy.epsilon if cfg.sigma_policy.kind == "adaptive" else None)
    info = None
    if eps is not None and math.isfinite(moment_info(cfg.model, eps, cfg.bound).moment_1pe):
        info = moment_info(cfg.model, eps, cfg.bound)
    floor = max(2 * cfg.bound, 1.0)
    checks = [c for c in (_row_check(r, floor, info) for r in rows) if c is not None]

    grouped = {}
    for r in rows:
        grouped.setdefault(cfg.sigma_policy.label(r["sigma"]), {}).setdefault(r["n"], []).append(r["l2_sq_error"])
    curves = {label: {n: float(np.mean(v)) for n, v in sorted(by_n.items())} for label, by_n in grouped.items()}
    slopes = {}
    for label, curve in curves.items():
        pts = [(n, e) for n, e in curve.items() if e > 0]
        slopes[label] = fit_loglog_slope(pts) if len(pts) >= 3 else None
    return RateReport(rows, failures, curves, slopes, checks, cfg.raw, cfg.master_seed)


# -- bias demo ------------------------------------------------------------------------

def _offset(est, model):
    grid = dense_grid(model.domain, 4001)
    return float(np.mean(est(grid) - model.truth(grid)))


def _bias_rows(cfg, mode, key, sigma, n, reps):
    offsets = []
    for r in range(reps):
        data = generate_dataset(cfg.model, n, derive_seed(cfg.master_seed, BIAS, key, n, r))
        est, _ = _quiet_fit(cfg.space, data, sigma, cfg.solver)
        offsets.append(_offset(est, cfg.model))
    offsets = np.array(offsets)
    scale = float(cfg.model.het_scale(dense_grid(cfg.model.domain, 3))[0])
    oracle = scale * oracle_shift(cfg.model.noise, sigma / scale)
    se = float(offsets.std(ddof=1) / math.sqrt(reps)) if reps > 1 else math.nan
    return {"mode": mode, "sigma": float(sigma), "n": int(n), "replicates": reps,
            "mean_offset": float(offsets.mean()), "stderr": se, "oracle_offset": oracle,
            "within_3se": bool(abs(offsets.mean() - oracle) <= 3 * se) if reps > 1 else None,
            "offsets": offsets.tolist()}


def run_bias_demo(cfg):
    """Fitted offsets against the oracle shift, for fixed sigmas and for the adaptive schedule.

    The model must be homoscedastic so that the population Huber minimiser is
    ``f* + s c(sigma / s)`` with a single constant.
    """
    grid = dense_grid(cfg.model.domain, 1001)
    s = cfg.model.het_scale(grid)
    if not np.allclose(s, s[0]) or s[0] <= 0:
        raise InvalidInputError("the bias demo needs a homoscedastic model with positive scale")
    n = int(cfg.extra.get("n", cfg.n_grid[-1]))
    reps = cfg.replicates
    rows = []
    fixed = cfg.sigma_policy.values if cfg.sigma_policy.kind == "grid" else cfg.sigma_policy.sigmas(n)
    for i, sigma in enumerate(fixed):
        rows.append(_bias_rows(cfg, "fixed", i, sigma, n, reps))
    params = ScheduleParams(cfg.sigma_policy.epsilon, cfg.sigma_policy.q)
    for m in cfg.n_grid:
        rows.append(_bias_rows(cfg, "adaptive", len(fixed), adaptive_sigma(m, params), m, reps))
    return rows


# -- baselines ---------------------------------------------------------------------------

def _baseline_task(task):
    cfg, n, r = task
    seed = derive_seed(cfg.master_seed, BASELINE, n, r)
    data = generate_dataset(cfg.model, n, seed)
    sigma = cfg.sigma_policy.sigmas(n)[0]
    out = []
    est, _ = _quiet_fit(cfg.space, data, sigma, cfg.solver)
    out.append(("huber", sigma, est))
    if "least_squares" in cfg.comparators:
        out.append(("least_squares", math.inf, fit_least_squares(cfg.space, data, cfg.solver.ridge_jitter)))
    if "lad" in cfg.comparators:
        out.append(("lad", 0.0, fit_lad(cfg.space, data)))
    return [{"method": m, "replicate": r, "n": n, "sigma": float(s), "l2_sq_error": _sq_error(e, cfg.model),
             "seed": seed} for m, s, e in out]


def dispersion(rows):
    """Per-method quartiles of the squared L2 errors."""
    out = {}
    for method in dict.fromkeys(r["method"] for r in rows):
        v = np.array([r["l2_sq_error"] for r in rows if r["method"] == method])
        q1, med, q3 = np.percentile(v, [25, 50, 75])
        out[method] = {"q1": float(q1), "median": float(med), "q3": float(q3), "iqr": float(q3 - q1),
                       "all_finite": bool(np.all(np.isfinite(v))), "count": int(len(v))}
    return out


def run_baselines(cfg):
    """Huber against the requested comparators on identical datasets at the largest n."""
    if not cfg.comparators:
        return []
    n = int(cfg.extra.get("n", cfg.n_grid[-1]))
    tasks = [(cfg, n, r) for r in range(cfg.replicates)]
    return [row for chunk in _run_tasks(_baseline_task, tasks, cfg.workers) for row in chunk]


# -- randomized bound suite -----------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class PerturbedTruth:
    """``clip(f* + scale * g, -bound, bound)`` for a fixed direction g."""
    model: RegressionModel
    direction: Estimator
    scale: float
    bound: float

    def __call__(self, xs):
        return np.clip(self.model.truth(xs) + self.scale * self.direction(xs), -self.bound, self.bound)


def suite_models():
    """Models the randomized bound suite draws from; all have sup|f*| = 2."""
    return [
        toy_model(GaussMixture()),
        toy_model(Example1()),
        toy_model(StudentT(4.0)),
        toy_model(SymmetricPareto(2.5)),
        RegressionModel(two_sin_pi, unit_scale, Example1(), 2.0),
    ]


def bound_triples(master_seed, count=100, epsilons=(0.5, 1.0, 2.0), sigma_max=50.0, centers=6,
                  bandwidth=0.25, radius=4.0, bound=2.5):
    """Random (f, sigma, model, epsilon) draws meeting the theory preconditions."""
    models = suite_models()
    space = make_space(centers, bandwidth, radius, bound, 1.0)
    M = max(bound, max(m.bound for m in models))
    floor = max(2 * M, 1.0)
    if sigma_max <= floor:
        raise InvalidInputError(f"sigma_max must exceed max(2M, 1) = {floor:g}")
    rng = make_rng(derive_seed(master_seed, BOUNDS))
    out = []
    for i in range(int(count)):
        model = models[i % len(models)]
        allowed = [e for e in epsilons if 1 + e < model.noise.max_finite_moment()]
        eps = float(allowed[int(rng.integers(len(allowed)))])
        sigma = float(math.exp(rng.uniform(math.log(floor * 1.01), math.log(sigma_max))))
        g = Estimator(space, random_coefficients(space, rng))
        f = g if i % 2 == 0 else PerturbedTruth(model, g, float(rng.uniform(0.01, 1.0)), M)
        out.append({"index": i, "f": f, "sigma": sigma, "model": model, "epsilon": eps, "M": M})
    return out


def _bound_task(task):
    triple, mc_n, seed = task
    info = moment_info(triple["model"], triple["epsilon"], triple["M"])
    checks = check_all(triple["f"], triple["model"], triple["sigma"], info, mc_n, seed)
    return {"index": triple["index"], "sigma": triple["sigma"], "epsilon": triple["epsilon"],
            "noise": triple["model"].noise.family, "checks": checks,
            "satisfied": all(c.satisfied for c in checks)}


@dataclass
class BoundSuiteReport:
    results: list

    @property
    def total(self):
        return len(self.results)

    @property
    def satisfied(self):
        return sum(r["satisfied"] for r in self.results)

    def by_check(self):
        out = {}
        for r in self.results:
            for c in r["checks"]:
                t = out.setdefault(c.name, {"satisfied": 0, "violated": 0, "skipped": 0})
                t["skipped" if c.skipped else ("satisfied" if c.satisfied else "violated")] += 1
        return out

    def tally(self):
        return f"{self.satisfied}/{self.total} satisfied"

    def summary(self):
        return {"tally": self.tally(), "by_check": self.by_check(),
                "rows": [{"index": r["index"], "sigma": r["sigma"], "epsilon": r["epsilon"], "noise": r["noise"],
                          "satisfied": r["satisfied"], "checks": [c.to_row() for c in r["checks"]]}
                         for r in self.results]}


def run_bound_suite(cfg, workers=1):
    """Run all four bound checks on each randomized triple; ``cfg`` is the loaded config dict."""
    b = cfg.get("bounds", {})
    master = int(cfg.get("master_seed", 0))
    triples = bound_triples(master, b.get("triples", 100), tuple(b.get("epsilons", (0.5, 1.0, 2.0))),
                            float(b.get("sigma_max", 50.0)), int(b.get("centers", 6)),
                            float(b.get("bandwidth", 0.25)), float(b.get("radius", 4.0)), float(b.get("bound", 2.5)))
    mc_n = int(b.get("mc_n", 1_000_000))
    tasks = [(t, mc_n, derive_seed(master, BOUNDS_MC, t["index"])) for t in triples]
    return BoundSuiteReport(_run_tasks(_bound_task, tasks, workers))


# -- output ---------------------------------------------------------------------------------

def _atomic_write(path, writer):
    path = os.fspath(path)
    folder = os.path.dirname(os.path.abspath(path))
    os.makedirs(folder, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=folder, prefix=".tmp-", text=True)
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            writer(fh)
        os.replace(tmp, path)
    except BaseException:
        os.unlink(tmp)
        raise


def write_csv(rows, path, header):
    def writer(fh):
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([repr(r[k]) if isinstance(r[k], float) else r[k] for k in header])

    _atomic_write(path, writer)


def _jsonable(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (set, tuple)):
        return list(obj)
    raise TypeError(f"not JSON serialisable: {type(obj).__name__}")


def write_json(obj, path):
    _atomic_write(path, lambda fh: (json.dump(obj, fh, indent=2, sort_keys=True, default=_jsonable),
                                    fh.write("\n")))
