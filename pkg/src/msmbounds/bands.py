"""Simultaneous confidence bands over a sensitivity-parameter grid.

The critical value is the (1 - alpha) quantile of the supremum over the grid
of the studentised multiplier process sqrt(n) P_n[A (phi - psi) / sigma]
with Rademacher multipliers A shared across grid points within a replicate.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.stats import norm

from .errors import ConfigurationError, DegenerateGridError
from .l2 import L2CurvePoint
from .linf import PsiEstimate, summarize_eif


def _eif_matrix(curve: Sequence[PsiEstimate]):
    return np.column_stack([p.per_unit_eif for p in curve])


def multiplier_bootstrap(eif, estimates, ses, alpha=0.05, reps=2500, seed=0) -> float:
    """Critical value of the sup-|t| multiplier process.

    Args:
        eif: n x G matrix of per-unit EIF values.
        estimates: length-G point estimates (centring).
        ses: length-G standard errors (sigma / sqrt(n)).
        alpha: one minus the simultaneous coverage level.
        reps: number of multiplier draws.
        seed: replicate r draws from ``default_rng([seed, r])`` so the result
            does not depend on evaluation order.
    """
    eif = np.asarray(eif, dtype=float)
    if eif.ndim == 1:
        eif = eif[:, None]
    estimates = np.asarray(estimates, dtype=float).reshape(-1)
    ses = np.asarray(ses, dtype=float).reshape(-1)
    if not 0 < alpha < 1:
        raise ConfigurationError(f"alpha must lie in (0, 1), got {alpha}")
    if np.any(ses <= 0):
        raise DegenerateGridError("standard error is zero at some grid point")
    n = eif.shape[0]
    scaled = (eif - estimates) / (ses * n)
    sups = np.empty(reps)
    for r in range(reps):
        a = np.random.default_rng([seed, r]).integers(0, 2, n) * 2.0 - 1.0
        sups[r] = np.max(np.abs(a @ scaled))
    return float(np.quantile(sups, 1 - alpha))


@dataclass(frozen=True)
class BandResult:
    grid: np.ndarray
    estimate: np.ndarray
    se: np.ndarray
    critical_value: float
    band_lo: np.ndarray
    band_hi: np.ndarray
    ci_lo: np.ndarray
    ci_hi: np.ndarray
    alpha: float
    reps: int
    seed: int
    n: int
    per_unit_eif: np.ndarray = field(repr=False, default=None)


def build_band(curve: Sequence[PsiEstimate], alpha=0.05, reps=2500, seed=0) -> BandResult:
    """Pointwise CIs and a simultaneous band for a curve of estimates.

    Grid points with zero standard error (a deterministic EIF) are left out
    of the supremum; their band collapses to the estimate.
    """
    curve = list(curve)
    if not curve:
        raise DegenerateGridError("empty curve")
    est = np.array([p.value for p in curve])
    se = np.array([p.se for p in curve])
    eif = _eif_matrix(curve)
    live = se > 0
    if live.any():
        q = multiplier_bootstrap(eif[:, live], est[live], se[live], alpha, reps, seed)
    else:
        q = 0.0
    z = norm.ppf(1 - alpha / 2)
    return BandResult(
        grid=np.array([p.param for p in curve]),
        estimate=est,
        se=se,
        critical_value=q,
        band_lo=est - q * se,
        band_hi=est + q * se,
        ci_lo=est - z * se,
        ci_hi=est + z * se,
        alpha=alpha,
        reps=reps,
        seed=seed,
        n=curve[0].n,
        per_unit_eif=eif,
    )


@dataclass(frozen=True)
class PairBand:
    """Rectangle band for (psi1, psi2) at joint level ``level``."""

    first: BandResult
    second: BandResult
    level: float

    def contains(self, psi1, psi2):
        psi1 = np.asarray(psi1)
        psi2 = np.asarray(psi2)
        return (
            (self.first.band_lo <= psi1)
            & (psi1 <= self.first.band_hi)
            & (self.second.band_lo <= psi2)
            & (psi2 <= self.second.band_hi)
        )


def bonferroni_pair_band(band1: BandResult, band2: BandResult) -> PairBand:
    """Combine two level-(1 - alpha) bands into a joint level-(1 - 2 alpha) band."""
    if band1.n != band2.n or not np.array_equal(band1.grid, band2.grid):
        raise ConfigurationError("bands must share grid and sample size")
    return PairBand(band1, band2, 1 - band1.alpha - band2.alpha)


@dataclass(frozen=True)
class CurveResult:
    """Estimates along a grid for the ATE or a treated/control bound.

    ``sensitivity`` holds the combined average sensitivity value for L2
    curves (None for L-infinity curves).
    """

    framework: str
    grid: np.ndarray
    estimates: list
    sensitivity: list | None = None


def combine_sensitivity(treated: PsiEstimate, control: PsiEstimate, z, folds=None) -> PsiEstimate:
    """P(Z=1) psi1(treated) + P(Z=0) psi1(control) with the share estimated."""
    z = np.asarray(z, dtype=float)
    p1 = z.mean()
    phi = (
        p1 * treated.per_unit_eif
        + (1 - p1) * control.per_unit_eif
        + (z - p1) * (treated.value - control.value)
    )
    plug = p1 * treated.plug_in + (1 - p1) * control.plug_in
    return summarize_eif(phi, folds, treated.param, plug)


def add_curves(first: Sequence[PsiEstimate], second: Sequence[PsiEstimate], folds=None):
    """Per-unit sum of two EIF streams on the same sample, grid point by grid point."""
    first, second = list(first), list(second)
    if len(first) != len(second) or any(
        not np.isclose(a.param, b.param) for a, b in zip(first, second)
    ):
        raise ConfigurationError("curves must share the same grid")
    return [
        summarize_eif(a.per_unit_eif + b.per_unit_eif, folds, a.param, a.plug_in + b.plug_in)
        for a, b in zip(first, second)
    ]


def ate_curve(treated, control, z=None, folds=None) -> CurveResult:
    """ATE bound from a treated-arm curve and a curve fit on the flipped data.

    The control curve must be computed on (1 - Z, -Y), so that adding it to
    the treated bound gives the ATE bound in the same direction. For L2
    inputs (lists of L2CurvePoint) the treat indicator ``z`` is needed to
    combine the two average sensitivity values.
    """
    treated, control = list(treated), list(control)
    if treated and isinstance(treated[0], L2CurvePoint):
        if z is None:
            raise ConfigurationError("treatment vector needed to combine sensitivity values")
        bound = add_curves([p.psi2 for p in treated], [p.psi2 for p in control], folds)
        sens = [
            combine_sensitivity(a.psi1, b.psi1, z, folds) for a, b in zip(treated, control)
        ]
        return CurveResult("l2", np.array([p.lam for p in treated]), bound, sens)
    bound = add_curves(treated, control, folds)
    return CurveResult("linf", np.array([p.param for p in treated]), bound)
