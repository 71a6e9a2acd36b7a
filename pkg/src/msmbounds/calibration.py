"""Benchmarks for the strength of unmeasured confounding.

Leaving measured covariates out of the propensity model mimics an omitted
confounder: comparing the reduced fit with the full fit gives an odds ratio
(the L-infinity scale) and a second moment of the propensity ratio (the L2
scale). ``interpret_sensitivity_value`` turns an average second moment into
a high-probability range for the ratio under a Gamma working model.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy import stats

from .data import ObservationalDataset
from .errors import DomainError
from .nuisance import fit_propensity


@dataclass(frozen=True)
class CalibrationRow:
    left_out: tuple[str, ...]
    max_odds_ratio: float
    second_moment: float


def leave_out_calibration(
    dataset: ObservationalDataset,
    leave_out: Iterable[Sequence[str]],
    clamp=(0.01, 0.99),
) -> list[CalibrationRow]:
    """Compare the full propensity fit with fits that omit each covariate set.

    The odds ratio is the largest over units of OR or 1/OR between the two
    fits; the second moment averages (e_reduced / e_full)^2 over treated
    units. Rows are sorted by decreasing second moment.
    """
    sets = [tuple(s) for s in leave_out]
    full = fit_propensity(dataset.covariates, dataset.treatment, clamp).raw(dataset.covariates)
    treated = dataset.treatment == 1
    rows = []
    for s in sets:
        reduced_data = dataset.drop_columns(s)
        if s:
            reduced = fit_propensity(reduced_data.covariates, reduced_data.treatment, clamp).raw(
                reduced_data.covariates
            )
        else:
            reduced = full
        odds = (full / (1 - full)) / (reduced / (1 - reduced))
        ratio = reduced / full
        rows.append(
            CalibrationRow(
                s,
                float(np.max(np.maximum(odds, 1 / odds))),
                float(np.mean(ratio[treated] ** 2)),
            )
        )
    rows.sort(key=lambda r: -r.second_moment)
    return rows


def interpret_sensitivity_value(psi1: float, alpha: float = 0.05) -> tuple[float, float]:
    """Central (1 - alpha) range of h when h ~ Gamma with mean 1 and variance psi1 - 1."""
    if psi1 < 1:
        raise DomainError(f"an average second moment of a mean-one ratio is at least 1, got {psi1}")
    if not 0 < alpha < 1:
        raise DomainError(f"alpha must lie in (0, 1), got {alpha}")
    if psi1 == 1:
        return 1.0, 1.0
    shape = 1 / (psi1 - 1)
    dist = stats.gamma(a=shape, scale=1 / shape)
    return float(dist.ppf(alpha / 2)), float(dist.ppf(1 - alpha / 2))
