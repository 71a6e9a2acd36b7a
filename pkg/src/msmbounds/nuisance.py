"""Nuisance models: logistic propensity score and kernel conditional outcome law.

The propensity score is a logistic regression fit by iteratively reweighted
least squares. The conditional law of Y given X among treated units is a
Nadaraya-Watson mixture of Gaussian kernels in y with product Gaussian
weights in x, discretised on an evaluation grid and interpolated linearly so
that quantiles and truncated moments have closed forms.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .condlaw import PiecewiseLinearLaw, truncated_moment
from .data import AnalysisConfig, FoldPlan, ObservationalDataset
from .errors import DomainError, ExtrapolationError, FitError

DENSITY_FLOOR = 1e-12
_SEPARATION_LIMIT = 25.0
_LOG_WEIGHT_FLOOR = -700.0
# slope penalty for the local linear shift, in units of squared bandwidth
LOCAL_SLOPE_RIDGE = 0.1


def _expit(t):
    return 0.5 * (1.0 + np.tanh(0.5 * t))


@dataclass(frozen=True)
class PropensityModel:
    """Logistic model ``e(x) = expit(b0 + x @ b)`` with prediction clamping."""

    coefficients: np.ndarray
    clamp: tuple[float, float] = (0.01, 0.99)

    def __post_init__(self):
        lo, hi = self.clamp
        if not 0 < lo < hi < 1:
            raise DomainError(f"invalid clamp {self.clamp}")

    @property
    def d(self) -> int:
        return len(self.coefficients) - 1

    def raw(self, x):
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1 and self.d != 1 or x.ndim == 0
        x = np.atleast_2d(x) if x.ndim < 2 else x
        if self.d == 1 and x.shape[0] == 1 and x.shape[1] != 1:
            x = x.T
        if x.shape[1] != self.d:
            raise DomainError(f"expected {self.d} covariates, got {x.shape[1]}")
        p = _expit(self.coefficients[0] + x @ self.coefficients[1:])
        return p[0] if single else p

    def predict(self, x):
        lo, hi = self.clamp
        return np.clip(self.raw(x), lo, hi)


def fit_propensity(covariates, treatment, clamp=(0.01, 0.99), max_iter=100, tol=1e-8):
    """Maximum-likelihood logistic regression by IRLS (Newton-Raphson).

    Covariates are standardised for the iterations and coefficients mapped
    back to the original scale. Converges when the largest coefficient change
    drops below ``tol`` (on the original scale) or after ``max_iter`` steps.
    """
    x = np.asarray(covariates, dtype=float)
    z = np.asarray(treatment, dtype=float)
    if x.ndim == 1:
        x = x.reshape(-1, 1)
    if not ((z == 1).any() and (z == 0).any()):
        raise FitError("propensity fit needs both treated and control units")
    n, d = x.shape
    center = x.mean(axis=0)
    scale = x.std(axis=0)
    if np.any(scale == 0):
        raise FitError("singular design: constant covariate column")
    design = np.column_stack([np.ones(n), (x - center) / scale])
    beta = np.zeros(d + 1)
    beta[0] = np.log(z.mean() / (1 - z.mean()))

    def to_original(b):
        slopes = b[1:] / scale
        return np.concatenate([[b[0] - center @ slopes], slopes])

    prev = to_original(beta)
    for _ in range(max_iter):
        p = _expit(design @ beta)
        w = p * (1 - p)
        hess = design.T @ (design * w[:, None])
        grad = design.T @ (z - p)
        try:
            step = np.linalg.solve(hess, grad)
        except np.linalg.LinAlgError:
            raise FitError("singular weighted design in propensity fit") from None
        if not np.all(np.isfinite(step)):
            raise FitError("singular weighted design in propensity fit")
        beta = beta + step
        if np.max(np.abs(beta[1:]), initial=0.0) > _SEPARATION_LIMIT:
            raise FitError(
                "propensity coefficients diverge (perfect separation); "
                "drop the separating covariate or add regularization"
            )
        cur = to_original(beta)
        if np.max(np.abs(cur - prev)) < tol:
            prev = cur
            break
        prev = cur
    return PropensityModel(prev, tuple(clamp))


def predict_propensity(model: PropensityModel, x):
    return model.predict(x)


class ConditionalOutcomeModel:
    """Kernel estimate of the law of Y given X from (X_i, Y_i) training pairs.

    With ``mean_shift`` the kernel is centred on regression residuals, i.e.
    Y_i is replaced by m(x) + Y_i - m(X_i). ``"linear"`` (or ``True``) uses an
    OLS fit for m, ``"local_linear"`` a kernel-weighted local linear fit with
    the covariate bandwidths.
    """

    def __init__(
        self,
        x,
        y,
        bandwidth_x=None,
        bandwidth_y=None,
        bandwidth_scale=(1.0, 1.0),
        grid_size=512,
        floor=DENSITY_FLOOR,
        mean_shift=False,
    ):
        y = np.asarray(y, dtype=float)
        x = np.asarray(x, dtype=float).reshape(len(y), -1)
        if len(y) == 0:
            raise FitError("conditional outcome model needs at least one training point")
        self.x = x
        self.y = y
        n = len(y)
        rate = n ** (-1 / 6)
        if bandwidth_x is None:
            sd = x.std(axis=0) if n > 1 else np.ones(x.shape[1])
            sd = np.where(sd > 0, sd, 1.0)
            bandwidth_x = bandwidth_scale[0] * sd * rate
        self.bandwidth_x = np.broadcast_to(np.asarray(bandwidth_x, dtype=float), (x.shape[1],)).copy()
        self.grid_size = int(grid_size)
        self.floor = floor
        if mean_shift is True:
            mean_shift = "linear"
        if mean_shift not in (False, None, "linear", "local_linear"):
            raise FitError(f"unknown mean shift {mean_shift!r}")
        self.mean_shift = mean_shift or None
        if self.mean_shift == "linear":
            design = np.column_stack([np.ones(n), x])
            self.shift_coef = np.linalg.lstsq(design, y, rcond=None)[0]
        centers = y - self._shift(x) if self.mean_shift else y
        self.centers = centers
        if bandwidth_y is None:
            sd_y = centers.std() if n > 1 else 1.0
            bandwidth_y = bandwidth_scale[1] * (sd_y if sd_y > 0 else 1.0) * rate
        self.bandwidth_y = float(bandwidth_y)
        if np.any(self.bandwidth_x <= 0) or self.bandwidth_y <= 0:
            raise FitError("bandwidths must be positive")
        lo = centers.min() - 3 * self.bandwidth_y
        hi = centers.max() + 3 * self.bandwidth_y
        self.base_grid = np.linspace(lo, hi, self.grid_size)
        u = (self.base_grid[None, :] - centers[:, None]) / self.bandwidth_y
        self._kernel_y = np.exp(-0.5 * u * u) / (self.bandwidth_y * np.sqrt(2 * np.pi))

    def _shift(self, xq):
        if self.mean_shift is None:
            return np.zeros(len(xq))
        if self.mean_shift == "linear":
            return self.shift_coef[0] + xq @ self.shift_coef[1:]
        return self._local_linear(xq)

    def _local_linear(self, xq):
        """Kernel-weighted least squares fit of Y on (1, X - x) at each query x."""
        w = self.weights(xq)
        diff = self.x[None, :, :] - xq[:, None, :]
        design = np.concatenate([np.ones(diff.shape[:2] + (1,)), diff], axis=2)
        gram = np.einsum("mi,mij,mik->mjk", w, design, design)
        rhs = np.einsum("mi,mij,i->mj", w, design, self.y)
        # the ridge pulls the slope toward zero (the local constant fit) only
        # where the weights sit on a few nearby points
        ridge = np.diag(np.r_[0.0, LOCAL_SLOPE_RIDGE * self.bandwidth_x**2 + 1e-12])
        return np.linalg.solve(gram + ridge, rhs[..., None])[:, 0, 0]

    def _query(self, x):
        xq = np.asarray(x, dtype=float)
        if xq.ndim <= 1:
            xq = xq.reshape(-1, self.x.shape[1]) if self.x.shape[1] else xq.reshape(-1, 0)
        if xq.shape[1] != self.x.shape[1]:
            raise DomainError(f"expected {self.x.shape[1]} covariates, got {xq.shape[1]}")
        return xq

    def weights(self, x):
        """Normalised kernel weights, one row per query point."""
        xq = self._query(x)
        u = (xq[:, None, :] - self.x[None, :, :]) / self.bandwidth_x
        logw = -0.5 * np.sum(u * u, axis=2)
        top = logw.max(axis=1)
        if np.any(top < _LOG_WEIGHT_FLOOR):
            bad = int(np.argmin(top))
            raise ExtrapolationError(
                f"query {xq[bad].tolist()} is outside the kernel support of the training data"
            )
        w = np.exp(logw - top[:, None])
        return w / w.sum(axis=1, keepdims=True)

    def y_grid(self, x):
        xq = self._query(x)
        return self._shift(xq)[:, None] + self.base_grid[None, :]

    def law(self, x) -> PiecewiseLinearLaw:
        xq = self._query(x)
        dens = self.weights(xq) @ self._kernel_y
        grid = self._shift(xq)[:, None] + self.base_grid[None, :]
        return PiecewiseLinearLaw.from_grid(grid, dens, floor=self.floor)


def fit_outcome_model(covariates, outcome, config: AnalysisConfig | None = None, **kw):
    config = config or AnalysisConfig()
    kw.setdefault("bandwidth_scale", config.bandwidth_scale)
    kw.setdefault("grid_size", config.grid_size)
    kw.setdefault("mean_shift", config.mean_shift)
    return ConditionalOutcomeModel(covariates, outcome, **kw)


def cond_expect(model: ConditionalOutcomeModel, x, g):
    return model.law(x).expect(g)


def cond_quantile(model: ConditionalOutcomeModel, x, alpha):
    if not 0 < alpha < 1:
        raise DomainError(f"quantile level must be in (0, 1), got {alpha}")
    return model.law(x).quantile(alpha)


def truncated_moments(model: ConditionalOutcomeModel, x, cutoff, k, side="below"):
    return truncated_moment(model.law(x), cutoff, k, side)


@dataclass(frozen=True)
class NuisanceFit:
    propensity: PropensityModel
    outcome: ConditionalOutcomeModel


def fit_nuisance(train: ObservationalDataset, config: AnalysisConfig) -> NuisanceFit:
    """Fit e(x) on all training rows and the outcome law on treated training rows."""
    prop = fit_propensity(train.covariates, train.treatment, clamp=config.clamp)
    treated = train.treatment == 1
    outcome = fit_outcome_model(train.covariates[treated], train.outcome[treated], config)
    return NuisanceFit(prop, outcome)


@dataclass(frozen=True)
class CrossFit:
    """Out-of-fold nuisance evaluations: row i uses the fit that excluded its fold."""

    propensity: np.ndarray
    law: PiecewiseLinearLaw
    fits: tuple


def cross_fit(dataset: ObservationalDataset, folds: FoldPlan, config: AnalysisConfig) -> CrossFit:
    folds.check_classes(dataset.treatment)
    e = np.empty(dataset.n)
    order = []
    laws = []
    fits = []
    for k in range(1, folds.K + 1):
        test = folds.test_index(k)
        fit = fit_nuisance(dataset.subset(folds.train_index(k)), config)
        fits.append(fit)
        e[test] = fit.propensity.predict(dataset.covariates[test])
        laws.append(fit.outcome.law(dataset.covariates[test]))
        order.append(test)
    law = PiecewiseLinearLaw.concatenate(laws)
    inverse = np.empty(dataset.n, dtype=np.int64)
    inverse[np.concatenate(order)] = np.arange(dataset.n)
    return CrossFit(e, law.take(inverse), tuple(fits))
