"""End-to-end sensitivity curves for E[Y(1)], E[Y(0)] and the ATE.

Control-arm quantities reuse the treated-arm machinery on the flipped data
(1 - Z, -Y): a bound in direction d on E[-Y(0)] is minus the opposite bound
on E[Y(0)], and adding it to the treated bound in direction d bounds the ATE.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .bands import BandResult, add_curves, build_band, combine_sensitivity
from .data import AnalysisConfig, FoldPlan, ObservationalDataset, make_folds
from .errors import ConfigurationError
from .l2 import evaluate_l2
from .linf import evaluate_linf, summarize_eif
from .nuisance import CrossFit, cross_fit

TARGETS = ("ate", "treated", "control")
BOUNDS = ("lower", "upper")


@dataclass(frozen=True)
class SensitivityCurve:
    """One bound along a parameter grid, with an optional simultaneous band.

    ``sensitivity`` carries the estimated average sensitivity value at each
    grid point for L2 curves.
    """

    framework: str
    target: str
    bound: str
    grid: np.ndarray
    estimates: list
    band: BandResult | None = None
    sensitivity: list | None = None


def _negate(curve, folds):
    return [summarize_eif(-p.per_unit_eif, folds, p.param, -p.plug_in) for p in curve]


class SensitivityAnalysis:
    """Cross-fits nuisances once per arm and evaluates curves on demand."""

    def __init__(self, dataset: ObservationalDataset, config: AnalysisConfig, folds: FoldPlan | None = None):
        self.dataset = dataset
        self.config = config
        self.folds = folds or make_folds(dataset.n, config.K, config.seed)
        self._fits: dict[str, CrossFit] = {}

    def crossfit(self, arm: str) -> CrossFit:
        if arm not in self._fits:
            data = self.dataset if arm == "treated" else self.dataset.flip_arms()
            self._fits[arm] = cross_fit(data, self.folds, self.config)
        return self._fits[arm]

    def _arm_data(self, arm):
        d = self.dataset if arm == "treated" else self.dataset.flip_arms()
        return d.treatment, d.outcome

    def _linf_arm(self, arm, direction, grid):
        cf = self.crossfit(arm)
        z, y = self._arm_data(arm)
        return evaluate_linf(cf.law, cf.propensity, z, y, grid, direction, self.folds)

    def _l2_arm(self, arm, direction, grid):
        cf = self.crossfit(arm)
        z, y = self._arm_data(arm)
        sign = "minimize" if direction == "lower" else "maximize"
        return evaluate_l2(cf.law, cf.propensity, z, y, grid, sign, self.folds)

    def linf_curve(self, target="ate", bound="lower", grid=None, band=False) -> SensitivityCurve:
        _check(target, bound)
        grid = tuple(self.config.gamma_grid if grid is None else grid)
        other = "upper" if bound == "lower" else "lower"
        if target == "treated":
            est = self._linf_arm("treated", bound, grid)
        elif target == "control":
            est = _negate(self._linf_arm("control", other, grid), self.folds)
        else:
            est = add_curves(
                self._linf_arm("treated", bound, grid),
                self._linf_arm("control", bound, grid),
                self.folds,
            )
        return SensitivityCurve("linf", target, bound, np.array(grid), est, self._band(est, band))

    def l2_curve(self, target="ate", bound="lower", grid=None, band=False) -> SensitivityCurve:
        _check(target, bound)
        grid = tuple(self.config.lambda_grid if grid is None else grid)
        other = "upper" if bound == "lower" else "lower"
        if target == "treated":
            pts = self._l2_arm("treated", bound, grid)
            est = [p.psi2 for p in pts]
            sens = [p.psi1 for p in pts]
        elif target == "control":
            pts = self._l2_arm("control", other, grid)
            est = _negate([p.psi2 for p in pts], self.folds)
            sens = [p.psi1 for p in pts]
        else:
            t = self._l2_arm("treated", bound, grid)
            c = self._l2_arm("control", bound, grid)
            est = add_curves([p.psi2 for p in t], [p.psi2 for p in c], self.folds)
            z = self.dataset.treatment
            sens = [combine_sensitivity(a.psi1, b.psi1, z, self.folds) for a, b in zip(t, c)]
        return SensitivityCurve("l2", target, bound, np.array(grid), est, self._band(est, band), sens)

    def _band(self, est, band):
        if not band:
            return None
        c = self.config
        return build_band(est, c.alpha, c.bootstrap_reps, c.seed)


def _check(target, bound):
    if target not in TARGETS:
        raise ConfigurationError(f"target must be one of {TARGETS}, got {target!r}")
    if bound not in BOUNDS:
        raise ConfigurationError(f"bound must be 'lower' or 'upper', got {bound!r}")


def _crossing(xs, vals):
    """Linear interpolation of the first x where vals changes sign from its start."""
    xs = np.asarray(xs, dtype=float)
    vals = np.asarray(vals, dtype=float)
    if vals[0] == 0:
        return float(xs[0])
    start = np.sign(vals[0])
    flipped = np.flatnonzero(np.sign(vals) != start)
    if flipped.size == 0:
        return None
    j = int(flipped[0])
    x0, x1, v0, v1 = xs[j - 1], xs[j], vals[j - 1], vals[j]
    return float(x0 + (x1 - x0) * v0 / (v0 - v1))


def explain_away(curve: SensitivityCurve, use_band: bool | None = None):
    """Parameter (or average sensitivity value) at which the bound first reaches 0.

    A lower bound is tracked only while it starts positive and an upper bound
    only while it starts negative. With a band the band edge is used, else
    the point estimate. Returns None when the curve never crosses 0.
    """
    use_band = curve.band is not None if use_band is None else use_band
    est = np.array([p.value for p in curve.estimates])
    if use_band:
        edge = curve.band.band_lo if curve.bound == "lower" else curve.band.band_hi
    else:
        edge = est
    if (curve.bound == "lower" and edge[0] <= 0) or (curve.bound == "upper" and edge[0] >= 0):
        return None
    xs = (
        np.array([p.value for p in curve.sensitivity])
        if curve.sensitivity is not None
        else curve.grid
    )
    return _crossing(xs, edge)

