"""Dataset container, CSV ingestion, fold plans and analysis configuration."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import (
    ConfigurationError,
    FoldError,
    ParseError,
    SchemaError,
    ValidationError,
)


def _frozen(a, dtype=float):
    arr = np.array(a, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class ObservationalDataset:
    """n observations of (covariates X, binary treatment Z, outcome Y).

    Arrays are copied and made read-only on construction.
    """

    covariates: np.ndarray
    treatment: np.ndarray
    outcome: np.ndarray
    column_names: tuple[str, ...] = ()

    def __post_init__(self):
        x = np.asarray(self.covariates, dtype=float)
        if x.ndim == 1:
            x = x.reshape(-1, 1) if x.size else x.reshape(len(self.outcome), 0)
        z = np.asarray(self.treatment)
        y = np.asarray(self.outcome, dtype=float)
        n = y.shape[0]
        if x.shape[0] != n or z.shape[0] != n:
            raise ValidationError(
                f"length mismatch: covariates {x.shape[0]}, treatment {z.shape[0]}, outcome {n}"
            )
        if y.ndim != 1 or z.ndim != 1:
            raise ValidationError("treatment and outcome must be one-dimensional")
        bad = np.flatnonzero(~np.isin(z, (0, 1)))
        if bad.size:
            raise ValidationError(
                f"treatment value {z[bad[0]]!r} at row {bad[0] + 1} is not 0 or 1", row=bad[0] + 1
            )
        for name, arr in (("covariates", x), ("outcome", y)):
            finite = np.isfinite(arr)
            if not finite.all():
                row = int(np.argwhere(~finite)[0][0])
                raise ValidationError(f"non-finite {name} value at row {row + 1}", row=row + 1)
        z = z.astype(np.int8)
        if not (z == 1).any() or not (z == 0).any():
            raise ValidationError("treatment must contain both 0 and 1")
        names = tuple(self.column_names) or tuple(f"x{j + 1}" for j in range(x.shape[1]))
        if len(names) != x.shape[1]:
            raise ValidationError(f"{len(names)} column names for {x.shape[1]} covariates")
        object.__setattr__(self, "covariates", _frozen(x))
        object.__setattr__(self, "treatment", _frozen(z, np.int8))
        object.__setattr__(self, "outcome", _frozen(y))
        object.__setattr__(self, "column_names", names)

    @property
    def n(self) -> int:
        return self.outcome.shape[0]

    @property
    def d(self) -> int:
        return self.covariates.shape[1]

    @property
    def n_treated(self) -> int:
        return int(self.treatment.sum())

    def subset(self, idx) -> "ObservationalDataset":
        return ObservationalDataset(
            self.covariates[idx], self.treatment[idx], self.outcome[idx], self.column_names
        )

    def flip_arms(self) -> "ObservationalDataset":
        """Swap treated/control and negate the outcome (control-side transform)."""
        return ObservationalDataset(
            self.covariates, 1 - self.treatment, -self.outcome, self.column_names
        )

    def negate_outcome(self) -> "ObservationalDataset":
        return ObservationalDataset(
            self.covariates, self.treatment, -self.outcome, self.column_names
        )

    def drop_columns(self, names: Sequence[str]) -> "ObservationalDataset":
        unknown = [c for c in names if c not in self.column_names]
        if unknown:
            raise SchemaError(f"unknown covariate(s): {', '.join(unknown)}")
        keep = [j for j, c in enumerate(self.column_names) if c not in set(names)]
        return ObservationalDataset(
            self.covariates[:, keep],
            self.treatment,
            self.outcome,
            tuple(self.column_names[j] for j in keep),
        )


def load_csv(path, treatment_col: str, outcome_col: str) -> ObservationalDataset:
    """Read a header-row CSV; every column other than treatment/outcome is a covariate."""
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise SchemaError(f"{path}: empty file") from None
        for col in (treatment_col, outcome_col):
            if col not in header:
                raise SchemaError(f"{path}: missing column {col!r}")
        t_idx = header.index(treatment_col)
        y_idx = header.index(outcome_col)
        x_idx = [j for j in range(len(header)) if j not in (t_idx, y_idx)]
        xs, zs, ys = [], [], []
        for row_no, row in enumerate(reader, start=1):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise ParseError(
                    f"row {row_no}: expected {len(header)} fields, got {len(row)}", row=row_no
                )
            vals = []
            for j, cell in enumerate(row):
                try:
                    v = float(cell)
                except ValueError:
                    raise ParseError(
                        f"row {row_no}, column {header[j]!r}: cannot parse {cell!r}",
                        row=row_no,
                        column=header[j],
                    ) from None
                if not math.isfinite(v):
                    raise ParseError(
                        f"row {row_no}, column {header[j]!r}: non-finite value {cell!r}",
                        row=row_no,
                        column=header[j],
                    )
                vals.append(v)
            z = vals[t_idx]
            if z not in (0.0, 1.0):
                raise ValidationError(
                    f"row {row_no}: treatment value {row[t_idx].strip()!r} is not 0 or 1",
                    row=row_no,
                )
            zs.append(int(z))
            ys.append(vals[y_idx])
            xs.append([vals[j] for j in x_idx])
    if not ys:
        raise ValidationError(f"{path}: no data rows")
    x = np.array(xs, dtype=float).reshape(len(ys), len(x_idx))
    return ObservationalDataset(x, np.array(zs), np.array(ys), tuple(header[j] for j in x_idx))


def save_csv(dataset: ObservationalDataset, path, treatment_col="z", outcome_col="y") -> None:
    """Write covariates, then treatment and outcome; floats use shortest round-trip repr."""
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([*dataset.column_names, treatment_col, outcome_col])
        for i in range(dataset.n):
            w.writerow(
                [repr(float(v)) for v in dataset.covariates[i]]
                + [int(dataset.treatment[i]), repr(float(dataset.outcome[i]))]
            )


@dataclass(frozen=True)
class FoldPlan:
    """Assignment of each row to one of K folds (labels 1..K)."""

    assignments: np.ndarray
    K: int
    seed: int

    def __post_init__(self):
        object.__setattr__(self, "assignments", _frozen(self.assignments, np.int64))

    @property
    def n(self) -> int:
        return self.assignments.shape[0]

    def test_index(self, k: int) -> np.ndarray:
        return np.flatnonzero(self.assignments == k)

    def train_index(self, k: int) -> np.ndarray:
        return np.flatnonzero(self.assignments != k)

    def sizes(self) -> np.ndarray:
        return np.bincount(self.assignments, minlength=self.K + 1)[1:]

    def check_classes(self, treatment) -> None:
        """Every training complement must contain both treatment arms."""
        treatment = np.asarray(treatment)
        for k in range(1, self.K + 1):
            z = treatment[self.assignments != k]
            if not (z == 1).any() or not (z == 0).any():
                raise FoldError(
                    f"training data for fold {k} lacks a treatment class; use fewer folds"
                )


def make_folds(n: int, K: int, seed: int) -> FoldPlan:
    """Seeded shuffle split into K blocks whose sizes differ by at most one."""
    if K < 2:
        raise ConfigurationError(f"fold count must be at least 2, got {K}")
    if n < 2 * K:
        raise ConfigurationError(f"need n >= 2K, got n={n}, K={K}")
    perm = np.random.default_rng(seed).permutation(n)
    assignments = np.empty(n, dtype=np.int64)
    for k, block in enumerate(np.array_split(perm, K), start=1):
        assignments[block] = k
    return FoldPlan(assignments, K, seed)


@dataclass(frozen=True)
class AnalysisConfig:
    gamma_grid: tuple[float, ...] = (2.0, 4.0, 6.0)
    lambda_grid: tuple[float, ...] = (1.0, 2.0, 3.0)
    theta: float = 0.0
    alpha: float = 0.05
    bootstrap_reps: int = 2500
    K: int = 10
    seed: int = 0
    bandwidth_scale: tuple[float, float] = (1.0, 1.0)
    clamp: tuple[float, float] = (0.01, 0.99)
    grid_size: int = 512
    mean_shift: str | bool = "local_linear"
    extra: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        for name, grid, lo_ok in (
            ("gamma_grid", self.gamma_grid, lambda g: g > 1),
            ("lambda_grid", self.lambda_grid, lambda g: g >= 0),
        ):
            grid = tuple(float(g) for g in grid)
            if not grid:
                raise ConfigurationError(f"{name} is empty")
            if any(b <= a for a, b in zip(grid, grid[1:])):
                raise ConfigurationError(f"{name} must be strictly increasing")
            if not all(lo_ok(g) for g in grid):
                raise ConfigurationError(f"{name} has out-of-range values: {grid}")
            object.__setattr__(self, name, grid)
        if not 0 < self.alpha < 1:
            raise ConfigurationError(f"alpha must lie in (0, 1), got {self.alpha}")
        if self.bootstrap_reps < 100:
            raise ConfigurationError("bootstrap_reps must be at least 100")
        if self.K < 2:
            raise ConfigurationError("K must be at least 2")
        if len(self.bandwidth_scale) != 2 or min(self.bandwidth_scale) <= 0:
            raise ConfigurationError("bandwidth_scale needs two positive values")
        lo, hi = self.clamp
        if not 0 < lo < hi < 1:
            raise ConfigurationError(f"invalid propensity clamp {self.clamp}")
        if self.mean_shift not in (False, True, "linear", "local_linear"):
            raise ConfigurationError(f"unknown mean shift {self.mean_shift!r}")
        if self.grid_size < 16:
            raise ConfigurationError("grid_size must be at least 16")
