"""Sharp bounds on E[Y(1)] under the marginal sensitivity model.

For a sensitivity level Gamma > 1 the propensity ratio h = e(X)/e(X,Y) is
confined to [W_-(X), W_+(X)]. The extremal h puts the large weight on the
upper tail of Y | X, Z=1 beyond a conditional quantile and the small weight
below it (and the reverse for the lower bound).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.stats import norm

from .condlaw import truncated_moment
from .data import AnalysisConfig, FoldPlan, ObservationalDataset
from .errors import ConfigurationError, DomainError
from .nuisance import CrossFit, NuisanceFit, cross_fit

DIRECTIONS = ("upper", "lower")


def weight_bounds(e, gamma):
    """Return (W_-, W_+): the range of admissible propensity ratios at e."""
    if not np.all(np.asarray(gamma) > 1):
        raise DomainError(f"Gamma must exceed 1, got {gamma}")
    e = np.asarray(e, dtype=float)
    w_lo = (1 - 1 / gamma) * e + 1 / gamma
    w_hi = (1 - gamma) * e + gamma
    return w_lo, w_hi


def _per_row(v, y):
    """Reshape a per-unit array to broadcast against a (unit, grid) array of outcomes."""
    v = np.asarray(v)
    return v.reshape(v.shape + (1,) * (y.ndim - v.ndim)) if y.ndim > v.ndim >= 1 else v


def _affine(gamma, which):
    # W(e) = slope * e + intercept
    if which == "lo":
        return 1 - 1 / gamma, 1 / gamma
    return 1 - gamma, gamma


@dataclass(frozen=True)
class LInfSolution:
    """Per-unit quantile-balancing solution for one Gamma and direction.

    ``w_below`` multiplies outcomes under the cutoff, ``w_above`` outcomes
    over it; ``mu_below``/``mu_above`` are E[Y 1{Y < Q}] and E[Y 1{Y > Q}].
    """

    gamma: float
    direction: str
    alpha_star: float
    quantile: np.ndarray
    w_below: np.ndarray
    w_above: np.ndarray
    mu_below: np.ndarray
    mu_above: np.ndarray

    @property
    def w_minus(self):
        return self.w_below if self.direction == "upper" else self.w_above

    @property
    def w_plus(self):
        return self.w_above if self.direction == "upper" else self.w_below

    def h_star(self, y):
        """Optimal propensity ratio at outcome y (the upper weight at y == Q)."""
        y = np.asarray(y, dtype=float)
        q, lo, hi = (_per_row(v, y) for v in (self.quantile, self.w_below, self.w_above))
        return np.where(y < q, lo, hi)

    def plug_in(self):
        """Conditional bound E[h* Y | X, Z=1] for each unit."""
        return self.w_above * self.mu_above + self.w_below * self.mu_below


def _check_direction(direction):
    if direction not in DIRECTIONS:
        raise ConfigurationError(f"direction must be 'upper' or 'lower', got {direction!r}")


def solve_linf(law, e, gamma, direction="upper") -> LInfSolution:
    """Quantile-balancing solution for a batch of conditional laws."""
    _check_direction(direction)
    w_lo, w_hi = weight_bounds(e, gamma)
    if direction == "upper":
        alpha_star = gamma / (1 + gamma)
        w_below, w_above = w_lo, w_hi
    else:
        alpha_star = 1 / (1 + gamma)
        w_below, w_above = w_hi, w_lo
    q = law.quantile(alpha_star)
    mu_below = truncated_moment(law, q, 1, "below")
    mu_above = law.moment(1) - mu_below
    return LInfSolution(
        float(gamma), direction, alpha_star, q, w_below, w_above, mu_below, mu_above
    )


def quantile_balancing(nuisance: NuisanceFit, x, gamma, direction="upper") -> LInfSolution:
    """Solution at covariate rows ``x`` from a fitted nuisance pair."""
    x = np.asarray(x, dtype=float).reshape(-1, nuisance.propensity.d)
    e = nuisance.propensity.predict(x)
    return solve_linf(nuisance.outcome.law(x), e, gamma, direction)


def eif_phi(sol: LInfSolution, z, y, e):
    """Uncentered efficient influence function of the bound, per unit.

    Outcomes tied with the cutoff enter neither indicator.
    """
    z = np.asarray(z, dtype=float)
    y = np.asarray(y, dtype=float)
    e = np.asarray(e, dtype=float)
    q, a = sol.quantile, sol.alpha_star
    above = (y > q).astype(float)
    below = (y < q).astype(float)
    if sol.direction == "upper":
        (c_b, d_b), (c_a, d_a) = _affine(sol.gamma, "lo"), _affine(sol.gamma, "hi")
    else:
        (c_b, d_b), (c_a, d_a) = _affine(sol.gamma, "hi"), _affine(sol.gamma, "lo")
    phi_above = z * sol.w_above / e * ((1 - a - above) * q + y * above - sol.mu_above) + (
        c_a * z + d_a
    ) * sol.mu_above
    phi_below = z * sol.w_below / e * ((a - below) * q + y * below - sol.mu_below) + (
        c_b * z + d_b
    ) * sol.mu_below
    return phi_above + phi_below


@dataclass(frozen=True)
class PsiEstimate:
    """Cross-fitted one-step estimate at one grid point.

    ``value`` is the mean of ``per_unit_eif``; ``sigma`` pools the within-fold
    spread of the EIF and ``se = sigma / sqrt(n)``. ``plug_in`` is the direct
    estimator (average of the conditional bound without correction).
    """

    param: float
    value: float
    se: float
    per_unit_eif: np.ndarray = field(repr=False)
    n: int
    sigma: float
    plug_in: float = float("nan")

    def ci(self, alpha=0.05):
        z = norm.ppf(1 - alpha / 2)
        return self.value - z * self.se, self.value + z * self.se


def summarize_eif(phi, folds: FoldPlan | None = None, param=float("nan"), plug_in=float("nan")):
    """Estimate and standard error from cross-fitted EIF values.

    The variance is the fold-size-weighted average of within-fold mean squared
    deviations around each fold's own mean.
    """
    phi = np.asarray(phi, dtype=float)
    n = phi.shape[0]
    value = float(phi.mean())
    if folds is None:
        var = float(np.mean((phi - value) ** 2))
    else:
        var = 0.0
        for k in range(1, folds.K + 1):
            part = phi[folds.assignments == k]
            if part.size:
                var += part.size / n * float(np.mean((part - part.mean()) ** 2))
    sigma = float(np.sqrt(var))
    if sigma < 1e-12 * max(1.0, abs(value)):
        sigma = 0.0
    return PsiEstimate(float(param), value, sigma / np.sqrt(n), phi, n, sigma, float(plug_in))


def evaluate_linf(law, e, z, y, gamma_grid: Sequence[float], direction="upper", folds=None):
    """One-step estimates over a Gamma grid for given per-unit nuisances."""
    out = []
    for gamma in gamma_grid:
        sol = solve_linf(law, e, gamma, direction)
        phi = eif_phi(sol, z, y, e)
        out.append(summarize_eif(phi, folds, gamma, float(np.mean(sol.plug_in()))))
    return out


def estimate_psi(
    dataset: ObservationalDataset,
    folds: FoldPlan,
    gamma_grid: Sequence[float],
    direction: str = "upper",
    config: AnalysisConfig | None = None,
    crossfit: CrossFit | None = None,
) -> list[PsiEstimate]:
    """Cross-fitted one-step bounds on E[Y(1)] over a Gamma grid.

    All grid points share one set of fold fits; only the cutoff quantile and
    the truncated means are recomputed per Gamma.
    """
    _check_direction(direction)
    config = config or AnalysisConfig()
    cf = crossfit or cross_fit(dataset, folds, config)
    return evaluate_linf(
        cf.law, cf.propensity, dataset.treatment, dataset.outcome, gamma_grid, direction, folds
    )
