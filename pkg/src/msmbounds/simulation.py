"""Synthetic data-generating process, population oracle and Monte Carlo studies.

The DGP draws X from a normal truncated to [-1, 1], a logistic propensity
e(X) = expit(-1 + 2X), and Y(1) = 0.5 + X + 0.5 U + 0.5 1{X > 0} U with
U ~ N(0, s_U), Y(0) = Y(1) - 0.5. The misspecified variant subtracts X^2
from both the logit and Y(1). The second parameter of each normal is read
as a variance by default; ``convention='sd'`` reads it as a standard
deviation.
"""

from __future__ import annotations

import csv
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.stats import norm, truncnorm

from .bands import build_band
from .condlaw import GaussianLaw
from .data import AnalysisConfig, ObservationalDataset, make_folds
from .errors import ConfigurationError
from .l2 import evaluate_l2, solve_lagrangian
from .linf import evaluate_linf, solve_linf
from .nuisance import cross_fit

CONVENTIONS = ("variance", "sd")
X_SPREAD = 0.5
U_SPREAD = 0.2
NUISANCE_SETUPS = {
    "e=est;p=est": (False, False),
    "e=true;p=est": (True, False),
    "e=est;p=true": (False, True),
    "e=true;p=true": (True, True),
}


def _scale(spread, convention):
    if convention not in CONVENTIONS:
        raise ConfigurationError(f"convention must be 'variance' or 'sd', got {convention!r}")
    return float(np.sqrt(spread)) if convention == "variance" else float(spread)


def true_propensity(x, misspecify=False):
    x = np.asarray(x, dtype=float)
    logit = -1 + 2 * x - (x * x if misspecify else 0.0)
    return 1 / (1 + np.exp(-logit))


def true_outcome_law(x, misspecify=False, convention="variance") -> GaussianLaw:
    """Law of Y(1) given X; unconfounded, so also the law of Y given X, Z=1."""
    x = np.asarray(x, dtype=float).reshape(-1)
    su = _scale(U_SPREAD, convention)
    mean = 0.5 + x - (x * x if misspecify else 0.0)
    sd = np.where(x > 0, su, 0.5 * su)
    return GaussianLaw(mean, sd)


def _truncated_x(u, convention):
    sx = _scale(X_SPREAD, convention)
    return truncnorm.ppf(u, -1 / sx, 1 / sx, loc=0.0, scale=sx)


@dataclass(frozen=True)
class DgpSample:
    dataset: ObservationalDataset
    u: np.ndarray
    y1: np.ndarray
    y0: np.ndarray
    misspecify: bool
    convention: str


def generate_dgp(n: int, seed, misspecify: bool = False, convention: str = "variance") -> DgpSample:
    """Draw n units; X uses inverse-CDF sampling on the truncated interval."""
    if n < 1:
        raise ConfigurationError("n must be positive")
    rng = np.random.default_rng(seed)
    x = _truncated_x(rng.uniform(size=n), convention)
    u = rng.normal(0.0, _scale(U_SPREAD, convention), size=n)
    z = (rng.uniform(size=n) < true_propensity(x, misspecify)).astype(int)
    # both arms are needed before treatment assignment is known
    if z.min() == z.max():
        z[0] = 1 - z[0]
    y1 = 0.5 + x - (x * x if misspecify else 0.0) + 0.5 * u + 0.5 * (x > 0) * u
    y0 = y1 - 0.5
    y = np.where(z == 1, y1, y0)
    return DgpSample(ObservationalDataset(x[:, None], z, y, ("x",)), u, y1, y0, misspecify, convention)


def oracle_population_values(
    gamma_grid=(2.0, 4.0, 6.0),
    lambda_grid=(1.0, 2.0, 3.0),
    seed=0,
    draws=1_000_000,
    misspecify=False,
    convention="variance",
    direction="upper",
):
    """Population values with true nuisances, averaged over Monte Carlo draws of X.

    Returns a dict with ``psi`` (L-infinity bound per Gamma), ``psi1`` and
    ``psi2`` (per lambda), keyed by the grid value.
    """
    rng = np.random.default_rng(seed)
    x = _truncated_x(rng.uniform(size=draws), convention)
    law = true_outcome_law(x, misspecify, convention)
    e = true_propensity(x, misspecify)
    psi = {float(g): float(np.mean(solve_linf(law, e, g, direction).plug_in())) for g in gamma_grid}
    psi1, psi2 = {}, {}
    for lam in lambda_grid:
        sol = solve_lagrangian(law, lam)
        psi1[float(lam)] = float(np.mean(sol.e_h2))
        psi2[float(lam)] = float(np.mean(sol.e_hy))
    return {"psi": psi, "psi1": psi1, "psi2": psi2}


@dataclass(frozen=True)
class StudyConfig:
    """Monte Carlo study settings.

    ``swaps`` adds the one-step columns with true nuisances substituted;
    ``bands`` runs the multiplier bootstrap on every replicate.
    """

    ns: tuple[int, ...] = (100, 200, 300)
    reps: int = 500
    gamma_grid: tuple[float, ...] = (2.0, 4.0, 6.0)
    lambda_grid: tuple[float, ...] = (1.0, 2.0, 3.0)
    misspecify: bool = False
    convention: str = "variance"
    seed: int = 0
    analysis: AnalysisConfig = field(default_factory=AnalysisConfig)
    swaps: bool = False
    bands: bool = False
    oracle_draws: int = 1_000_000
    workers: int | None = None

    def __post_init__(self):
        if self.reps < 100:
            raise ConfigurationError("a study needs at least 100 replicates")
        _scale(1.0, self.convention)


def _worker_count(requested):
    cap = os.environ.get("MSM_THREADS")
    count = requested if requested is not None else (os.cpu_count() or 1)
    if cap:
        count = min(count, max(1, int(cap)))
    return max(1, count)


def run_replicate(cfg: StudyConfig, n: int, rep: int) -> dict:
    """Fit every estimator column on one simulated data set."""
    sample = generate_dgp(n, [cfg.seed, n, rep], cfg.misspecify, cfg.convention)
    data = sample.dataset
    folds = make_folds(n, cfg.analysis.K, cfg.seed * 1_000_003 + rep)
    cf = cross_fit(data, folds, cfg.analysis)
    x = data.covariates[:, 0]
    true_law = true_outcome_law(x, cfg.misspecify, cfg.convention)
    true_e = true_propensity(x, cfg.misspecify)
    z, y = data.treatment, data.outcome
    setups = NUISANCE_SETUPS if cfg.swaps else {"e=est;p=est": (False, False)}
    out = {}
    for label, (use_e, use_p) in setups.items():
        e = true_e if use_e else cf.propensity
        law = true_law if use_p else cf.law
        linf = evaluate_linf(law, e, z, y, cfg.gamma_grid, "upper", folds)
        l2 = evaluate_l2(law, e, z, y, cfg.lambda_grid, "minimize", folds)
        res = {
            "psi": [(p.value, p.se, p.plug_in) for p in linf],
            "psi1": [(p.psi1.value, p.psi1.se, p.psi1.plug_in) for p in l2],
            "psi2": [(p.psi2.value, p.psi2.se, p.psi2.plug_in) for p in l2],
        }
        if cfg.bands and label == "e=est;p=est":
            a = cfg.analysis
            res["q"] = {}
            for name, curve in (
                ("psi", linf),
                ("psi1", [p.psi1 for p in l2]),
                ("psi2", [p.psi2 for p in l2]),
            ):
                band = build_band(curve, a.alpha, a.bootstrap_reps, a.seed + rep)
                res["q"][name] = band.critical_value
        out[label] = res
    return out


def _run_one(args):
    cfg, n, rep = args
    return n, rep, run_replicate(cfg, n, rep)


def simulate_replicates(cfg: StudyConfig) -> dict:
    """Run all (n, rep) cells; results are keyed by n in replicate order."""
    tasks = [(cfg, n, r) for n in cfg.ns for r in range(cfg.reps)]
    workers = _worker_count(cfg.workers)
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_one, tasks, chunksize=4))
    else:
        results = [_run_one(t) for t in tasks]
    by_n = {n: [None] * cfg.reps for n in cfg.ns}
    for n, rep, res in results:
        by_n[n][rep] = res
    return by_n


@dataclass
class StudyReport:
    """Rows of (metric, estimator, nuisance_config, n, param, value)."""

    metric: str
    rows: list
    reps: int
    settings: dict = field(default_factory=dict)
    extras: dict = field(default_factory=dict)

    FIELDS = ("metric", "estimator", "nuisance_config", "n", "param", "value")

    def value(self, estimator, n, param, nuisance_config="e=est;p=est", metric=None):
        metric = metric or self.metric
        for r in self.rows:
            if (
                r["metric"] == metric
                and r["estimator"] == estimator
                and r["nuisance_config"] == nuisance_config
                and r["n"] == n
                and r["param"] == param
            ):
                return r["value"]
        raise KeyError((metric, estimator, nuisance_config, n, param))

    def to_csv(self, path):
        with Path(path).open("w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=self.FIELDS)
            w.writeheader()
            for r in self.rows:
                w.writerow({**r, "value": repr(float(r["value"]))})

    def to_json(self, path):
        payload = {
            "metric": self.metric,
            "reps": self.reps,
            "settings": self.settings,
            "rows": self.rows,
            "extras": self.extras,
        }
        Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _settings(cfg: StudyConfig):
    d = asdict(cfg)
    d["analysis"].pop("extra", None)
    d.pop("workers", None)
    return json.loads(json.dumps(d))


def _truth(cfg: StudyConfig):
    return oracle_population_values(
        cfg.gamma_grid,
        cfg.lambda_grid,
        seed=cfg.seed + 7919,
        draws=cfg.oracle_draws,
        misspecify=cfg.misspecify,
        convention=cfg.convention,
    )


def _grid(cfg, name):
    return cfg.gamma_grid if name == "psi" else cfg.lambda_grid


def rmse_report(cfg: StudyConfig, by_n, truth) -> StudyReport:
    rows = []
    for n, results in by_n.items():
        for name in ("psi", "psi1", "psi2"):
            for j, param in enumerate(_grid(cfg, name)):
                target = truth[name][float(param)]
                direct = np.array([r["e=est;p=est"][name][j][2] for r in results])
                rows.append(_row("rmse", "direct", "e=est;p=est", n, f"{name}:{param:g}",
                                 np.sqrt(np.mean((direct - target) ** 2))))
                for label in results[0]:
                    est = np.array([r[label][name][j][0] for r in results])
                    rows.append(_row("rmse", "one_step", label, n, f"{name}:{param:g}",
                                     np.sqrt(np.mean((est - target) ** 2))))
    return StudyReport("rmse", rows, cfg.reps, _settings(cfg), {"truth": _jsonable(truth)})


def coverage_report(cfg: StudyConfig, by_n, truth) -> StudyReport:
    z = norm.ppf(1 - cfg.analysis.alpha / 2)
    rows, ci = [], {}
    for n, results in by_n.items():
        for name in ("psi", "psi1", "psi2"):
            for j, param in enumerate(_grid(cfg, name)):
                target = truth[name][float(param)]
                est = np.array([r["e=est;p=est"][name][j][0] for r in results])
                se = np.array([r["e=est;p=est"][name][j][1] for r in results])
                hit = np.abs(est - target) <= z * se
                key = f"{name}:{param:g}"
                rows.append(_row("coverage", "one_step", "e=est;p=est", n, key, hit.mean()))
                ci[f"{n}/{key}"] = [float(np.mean(est - z * se)), float(np.mean(est + z * se))]
    return StudyReport(
        "coverage", rows, cfg.reps, _settings(cfg), {"truth": _jsonable(truth), "mean_ci": ci}
    )


def uniform_report(cfg: StudyConfig, by_n, truth) -> StudyReport:
    z = norm.ppf(1 - cfg.analysis.alpha / 2)
    rows = []
    for n, results in by_n.items():
        for name in ("psi", "psi1", "psi2"):
            grid = _grid(cfg, name)
            target = np.array([truth[name][float(p)] for p in grid])
            est = np.array([[c[0] for c in r["e=est;p=est"][name]] for r in results])
            se = np.array([[c[1] for c in r["e=est;p=est"][name]] for r in results])
            q = np.array([r["e=est;p=est"]["q"][name] for r in results])
            err = np.abs(est - target)
            point = np.all(err <= z * se, axis=1).mean()
            mb = np.all(err <= q[:, None] * se, axis=1).mean()
            rows.append(_row("uniform_coverage", "pointwise_z", "e=est;p=est", n, name, point))
            rows.append(_row("uniform_coverage", "multiplier_bootstrap", "e=est;p=est", n, name, mb))
            rows.append(_row("critical_value", "multiplier_bootstrap", "e=est;p=est", n, name, q.mean()))
    return StudyReport("uniform_coverage", rows, cfg.reps, _settings(cfg), {"truth": _jsonable(truth)})


def _row(metric, estimator, config, n, param, value):
    return {
        "metric": metric,
        "estimator": estimator,
        "nuisance_config": config,
        "n": int(n),
        "param": param,
        "value": float(value),
    }


def _jsonable(truth):
    return {k: {f"{p:g}": v for p, v in d.items()} for k, d in truth.items()}


def run_rmse_study(cfg: StudyConfig) -> StudyReport:
    return rmse_report(cfg, simulate_replicates(cfg), _truth(cfg))


def run_coverage_study(cfg: StudyConfig) -> StudyReport:
    return coverage_report(cfg, simulate_replicates(cfg), _truth(cfg))


def run_uniform_study(cfg: StudyConfig) -> StudyReport:
    if not cfg.bands:
        raise ConfigurationError("uniform coverage needs bands=True")
    return uniform_report(cfg, simulate_replicates(cfg), _truth(cfg))


def run_all_studies(cfg: StudyConfig) -> dict:
    """RMSE and coverage (plus uniform coverage if bands are on) from one set of replicates."""
    by_n = simulate_replicates(cfg)
    truth = _truth(cfg)
    out = {"rmse": rmse_report(cfg, by_n, truth), "coverage": coverage_report(cfg, by_n, truth)}
    if cfg.bands:
        out["uniform_coverage"] = uniform_report(cfg, by_n, truth)
    return out
