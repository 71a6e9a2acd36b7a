"""L2 relaxation: bounds with a penalty on the second moment of h.

Two formulations share one solution shape, h*(y) = lam_X (xi_X - y)_+ :

* Lagrangian: for a fixed multiplier lam, xi_X solves
  E[(xi - Y)_+ | X, Z=1] = 1/lam. This traces the curve of
  (average sensitivity value psi1, lower bound psi2).
* Sensitivity value: for a target drop theta, xi_X solves
  E[h Y] = E[Y] - theta with lam_X = 1 / E[(xi - Y)_+]. The average of
  E[h*^2 | X] is psi0, the smallest second moment that allows the drop.

All roots are found by vectorised bisection on monotone functions.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .data import AnalysisConfig, FoldPlan, ObservationalDataset
from .errors import ConfigurationError, DomainError, InfeasibleTargetError
from .linf import PsiEstimate, _per_row, summarize_eif
from .nuisance import CrossFit, NuisanceFit, cross_fit

SIGNS = ("minimize", "maximize")
_TOL = 1e-10
_MAX_ITER = 400


def _bisect(f, lo, hi):
    """Vectorised bisection for increasing f with f(lo) <= 0 <= f(hi)."""
    lo = np.array(lo, dtype=float)
    hi = np.array(hi, dtype=float)
    mid = (lo + hi) / 2
    active = np.ones(lo.shape, dtype=bool)
    for _ in range(_MAX_ITER):
        mid = np.where(active, (lo + hi) / 2, mid)
        val = f(mid)
        hit = np.abs(val) < _TOL
        neg = val < 0
        lo = np.where(active & neg & ~hit, mid, lo)
        hi = np.where(active & ~neg & ~hit, mid, hi)
        active &= ~hit & (hi - lo >= _TOL * (1 + np.abs(mid)))
        if not active.any():
            break
    return np.where(active, (lo + hi) / 2, mid)


def lagrangian_gap(law, xi, lam):
    """E[(xi - Y)_+] - 1/lam, increasing in xi."""
    return xi * law.partial_moment(xi, 0) - law.partial_moment(xi, 1) - 1.0 / lam


def sensitivity_gap(law, xi, theta):
    """Weighted mean E[h Y] at cutoff xi minus the target E[Y] - theta."""
    m0 = law.partial_moment(xi, 0)
    m1 = law.partial_moment(xi, 1)
    m2 = law.partial_moment(xi, 2)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = (xi * m1 - m2) / (xi * m0 - m1)
    ratio = np.where(np.isfinite(ratio), ratio, xi)
    return ratio - (law.moment(1) - theta)


def root_lagrangian(law, lam, upper=None):
    """Cutoff xi_X with E[(xi - Y)_+ | X, Z=1] = 1/lam for every row of ``law``.

    ``upper`` may carry roots from a smaller multiplier; the root decreases in
    lam, so those are valid right endpoints.
    """
    if not lam > 0:
        raise DomainError(f"multiplier must be positive, got {lam}")
    lo, hi = law.support()
    hi = hi + 1.0 / lam + 1.0
    if upper is not None:
        hi = np.minimum(hi, np.asarray(upper, dtype=float) + _TOL)
    return _bisect(lambda xi: lagrangian_gap(law, xi, lam), lo, hi)


def root_sensitivity_value(law, theta):
    """Cutoff xi_X and multiplier lam_X for the sensitivity-value program."""
    if not theta > 0:
        raise DomainError(f"theta must be positive for a root, got {theta}")
    target = law.moment(1) - theta
    lo_support, hi_support = law.support()
    bad = target <= lo_support
    if np.any(bad):
        i = int(np.argmax(bad))
        raise InfeasibleTargetError(
            f"target mean {target[i]:.6g} is at or below the outcome support "
            f"(lower end {lo_support[i]:.6g}); use a smaller theta"
        )
    step = np.maximum(hi_support - target, 0.0) + 1.0
    hi = target + step
    for _ in range(200):
        short = sensitivity_gap(law, hi, theta) <= 0
        if not short.any():
            break
        step = np.where(short, 2 * step, step)
        hi = np.where(short, target + step, hi)
    xi = _bisect(lambda v: sensitivity_gap(law, v, theta), target, hi)
    lam_x = 1.0 / (xi * law.partial_moment(xi, 0) - law.partial_moment(xi, 1))
    return xi, lam_x


@dataclass(frozen=True)
class L2Solution:
    """Per-unit solution h*(y) = lambda_x (xi - y)_+ with its conditional functionals.

    ``m0, m1, m2`` are E[Y^k 1{Y <= xi}]; ``e_h2`` and ``e_hy`` are
    E[h*^2] and E[h* Y] given X, Z=1. When ``trivial`` is set, h* is 1.
    """

    mode: str
    param: float
    xi: np.ndarray
    lambda_x: np.ndarray
    m0: np.ndarray
    m1: np.ndarray
    m2: np.ndarray
    mean_y: np.ndarray
    e_h2: np.ndarray
    e_hy: np.ndarray
    trivial: bool = False

    def h_star(self, y):
        y = np.asarray(y, dtype=float)
        if self.trivial:
            return np.ones(np.broadcast(y, _per_row(self.mean_y, y)).shape)
        return _per_row(self.lambda_x, y) * np.maximum(_per_row(self.xi, y) - y, 0.0)

    def pi(self, y):
        """Correction (1 - h*) / P(Y <= xi); conditional mean zero."""
        if self.trivial:
            y = np.asarray(y, dtype=float)
            return np.zeros(np.broadcast(y, _per_row(self.mean_y, y)).shape)
        return (1.0 - self.h_star(y)) / _per_row(self.m0, np.asarray(y))


def _trivial(law, mode, param):
    n = len(law)
    mean = law.moment(1)
    ones = np.ones(n)
    inf = np.full(n, np.inf)
    return L2Solution(mode, param, inf, np.zeros(n), ones, mean, law.moment(2), mean, ones, mean, True)


def _solution(law, mode, param, xi, lam_x):
    m0 = law.partial_moment(xi, 0)
    m1 = law.partial_moment(xi, 1)
    m2 = law.partial_moment(xi, 2)
    e_h2 = lam_x**2 * (xi * xi * m0 - 2 * xi * m1 + m2)
    e_hy = lam_x * (xi * m1 - m2)
    return L2Solution(mode, param, xi, lam_x, m0, m1, m2, law.moment(1), e_h2, e_hy)


def solve_lagrangian(law, lam, upper=None) -> L2Solution:
    if lam < 0:
        raise DomainError(f"multiplier must be non-negative, got {lam}")
    if lam == 0:
        return _trivial(law, "lagrangian", 0.0)
    xi = root_lagrangian(law, lam, upper)
    return _solution(law, "lagrangian", float(lam), xi, np.full(len(law), float(lam)))


def solve_sensitivity_value(law, theta) -> L2Solution:
    if theta <= 0:
        return _trivial(law, "sensitivity_value", float(theta))
    xi, lam_x = root_sensitivity_value(law, theta)
    return _solution(law, "sensitivity_value", float(theta), xi, lam_x)


def eif_phi1(sol: L2Solution, z, y, e):
    """Uncentered EIF of the average sensitivity value E_X E[h*^2 | X, Z=1]."""
    z = np.asarray(z, dtype=float)
    h = sol.h_star(y)
    return z / e * (2 * sol.pi(y) + h * h - sol.e_h2) + sol.e_h2


def eif_phi2(sol: L2Solution, z, y, e):
    """Uncentered EIF of the bound E_X E[h* Y | X, Z=1]."""
    z = np.asarray(z, dtype=float)
    y = np.asarray(y, dtype=float)
    h = sol.h_star(y)
    return z / e * (sol.pi(y) * sol.m1 + h * y - sol.e_hy) + sol.e_hy


def eif_phi0(sol: L2Solution, z, y, e):
    """Uncentered EIF of psi0 for the sensitivity-value program."""
    z = np.asarray(z, dtype=float)
    y = np.asarray(y, dtype=float)
    if sol.trivial:
        return np.ones(np.broadcast(z, y).shape)
    h = sol.h_star(y)
    return z / e * (-2 * sol.lambda_x * (y - sol.mean_y) + sol.e_h2 - h * h) + sol.e_h2


@dataclass(frozen=True)
class L2CurvePoint:
    lam: float
    psi1: PsiEstimate
    psi2: PsiEstimate

    @property
    def per_unit_eif1(self):
        return self.psi1.per_unit_eif

    @property
    def per_unit_eif2(self):
        return self.psi2.per_unit_eif


def _check_sign(sign):
    if sign not in SIGNS:
        raise ConfigurationError(f"sign must be 'minimize' or 'maximize', got {sign!r}")


def evaluate_l2(law, e, z, y, lambda_grid: Sequence[float], sign="minimize", folds=None):
    """(psi1, psi2) one-step estimates along a multiplier grid.

    With ``sign='maximize'`` the bound is computed for -Y and negated, giving
    an upper bound on the treated mean.
    """
    _check_sign(sign)
    y = np.asarray(y, dtype=float)
    if sign == "maximize":
        law, y = law.reflect(), -y
    out = []
    upper = None
    for lam in lambda_grid:
        sol = solve_lagrangian(law, lam, upper)
        if not sol.trivial:
            upper = sol.xi
        phi1 = eif_phi1(sol, z, y, e)
        phi2 = eif_phi2(sol, z, y, e)
        p1 = summarize_eif(phi1, folds, lam, float(np.mean(sol.e_h2)))
        p2 = summarize_eif(phi2, folds, lam, float(np.mean(sol.e_hy)))
        if sign == "maximize":
            p2 = summarize_eif(-phi2, folds, lam, -p2.plug_in)
        out.append(L2CurvePoint(float(lam), p1, p2))
    return out


def estimate_l2_curve(
    dataset: ObservationalDataset,
    folds: FoldPlan,
    lambda_grid: Sequence[float],
    sign: str = "minimize",
    config: AnalysisConfig | None = None,
    crossfit: CrossFit | None = None,
) -> list[L2CurvePoint]:
    """Cross-fitted curve of average sensitivity value and bound over lambda."""
    _check_sign(sign)
    if any(lam < 0 for lam in lambda_grid):
        raise ConfigurationError("lambda grid must be non-negative")
    config = config or AnalysisConfig()
    cf = crossfit or cross_fit(dataset, folds, config)
    return evaluate_l2(
        cf.law, cf.propensity, dataset.treatment, dataset.outcome, lambda_grid, sign, folds
    )


def evaluate_psi0(law, e, z, y, theta, folds=None) -> PsiEstimate:
    sol = solve_sensitivity_value(law, theta)
    phi = eif_phi0(sol, z, y, e)
    return summarize_eif(phi, folds, theta, float(np.mean(sol.e_h2)))


def estimate_psi0(
    dataset: ObservationalDataset,
    folds: FoldPlan,
    theta: float,
    config: AnalysisConfig | None = None,
    crossfit: CrossFit | None = None,
) -> PsiEstimate:
    """Cross-fitted average sensitivity value needed for a drop of ``theta``."""
    if theta <= 0:
        n = dataset.n
        return PsiEstimate(float(theta), 1.0, 0.0, np.ones(n), n, 0.0, 1.0)
    config = config or AnalysisConfig()
    cf = crossfit or cross_fit(dataset, folds, config)
    return evaluate_psi0(cf.law, cf.propensity, dataset.treatment, dataset.outcome, theta, folds)


def lagrangian_solution(nuisance: NuisanceFit, x, lam) -> L2Solution:
    x = np.asarray(x, dtype=float).reshape(-1, nuisance.propensity.d)
    return solve_lagrangian(nuisance.outcome.law(x), lam)
