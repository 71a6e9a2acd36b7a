"""Batched conditional outcome laws.

Every class here describes ``m`` univariate distributions at once, one per
query unit, and exposes the same small surface used by the bound solvers:

``partial_moment(t, k)``  E[Y^k 1{Y <= t}] for k in {0, 1, 2}
``moment(k)``             E[Y^k]
``cdf(t)`` / ``quantile(alpha)``
``support()``             finite bracket containing (almost) all mass
``reflect()``             the law of -Y
``expect(g)``             E[g(Y)] for a vectorised callable ``g``

``PiecewiseLinearLaw`` backs the kernel estimator and the toy distributions;
``GaussianLaw`` backs the simulation ground truth.
"""

from __future__ import annotations

import numpy as np
from scipy import special

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(4)
_GH_NODES, _GH_WEIGHTS = np.polynomial.hermite_e.hermegauss(80)
_GH_WEIGHTS = _GH_WEIGHTS / np.sqrt(2 * np.pi)


def _segment_integral(a, b, c, d, k):
    """Integral over u in [0, d] of (a + b u) (c + u)^k."""
    d2 = d * d
    if k == 0:
        return a * d + b * d2 / 2
    d3 = d2 * d
    if k == 1:
        return a * c * d + (a + b * c) * d2 / 2 + b * d3 / 3
    if k == 2:
        return (
            a * c * c * d
            + (2 * a * c + b * c * c) * d2 / 2
            + (a + 2 * b * c) * d3 / 3
            + b * d2 * d2 / 4
        )
    raise ValueError(f"moment order must be 0, 1 or 2, got {k}")


def _as_batch(v, m):
    v = np.asarray(v, dtype=float)
    return np.broadcast_to(v, (m,)) if v.ndim == 0 else v


class PiecewiseLinearLaw:
    """Densities that are linear on each segment of per-row edge arrays.

    ``left[i, j]`` is the density at ``edges[i, j]`` and ``slope[i, j]`` its
    slope on segment j; the density is zero outside ``[edges[i, 0], edges[i, -1]]``.
    Truncated moments and quantiles are computed in closed form, so the CDF is
    continuous and strictly increasing wherever the density is positive.
    """

    def __init__(self, edges, left, slope):
        edges = np.atleast_2d(np.asarray(edges, dtype=float))
        left = np.atleast_2d(np.asarray(left, dtype=float))
        slope = np.atleast_2d(np.asarray(slope, dtype=float))
        if edges.shape[0] == 1 and left.shape[0] > 1:
            edges = np.broadcast_to(edges, (left.shape[0], edges.shape[1]))
        if left.shape != slope.shape or edges.shape != (left.shape[0], left.shape[1] + 1):
            raise ValueError("edges must be (m, S+1) with left/slope (m, S)")
        if np.any(np.diff(edges, axis=1) <= 0):
            raise ValueError("edges must be strictly increasing")
        self.edges = np.ascontiguousarray(edges)
        self.left = left
        self.slope = slope
        width = np.diff(self.edges, axis=1)
        self._width = width
        self._cum = []
        for k in range(3):
            seg = _segment_integral(left, slope, self.edges[:, :-1], width, k)
            cum = np.zeros_like(self.edges)
            np.cumsum(seg, axis=1, out=cum[:, 1:])
            self._cum.append(cum)

    # -- constructors -------------------------------------------------

    @classmethod
    def from_grid(cls, grid, density, floor=0.0):
        """Interpolate density values on a grid linearly and renormalise."""
        density = np.atleast_2d(np.asarray(density, dtype=float)) + floor
        grid = np.atleast_2d(np.asarray(grid, dtype=float))
        if grid.shape[0] == 1:
            grid = np.broadcast_to(grid, density.shape)
        mass = np.sum((density[:, 1:] + density[:, :-1]) / 2 * np.diff(grid, axis=1), axis=1)
        density = density / mass[:, None]
        slope = np.diff(density, axis=1) / np.diff(grid, axis=1)
        return cls(grid, density[:, :-1], slope)

    @classmethod
    def piecewise_uniform(cls, edges, probs):
        """Histogram law: ``probs[i, j]`` mass spread uniformly on segment j."""
        edges = np.atleast_2d(np.asarray(edges, dtype=float))
        probs = np.atleast_2d(np.asarray(probs, dtype=float))
        if edges.shape[0] == 1:
            edges = np.broadcast_to(edges, (probs.shape[0], edges.shape[1]))
        left = probs / np.diff(edges, axis=1)
        return cls(edges, left, np.zeros_like(left))

    @classmethod
    def uniform(cls, lo=0.0, hi=1.0, m=1):
        lo = _as_batch(lo, m)
        hi = _as_batch(hi, m)
        edges = np.stack([lo, hi], axis=1)
        return cls(edges, (1.0 / (hi - lo))[:, None], np.zeros((len(lo), 1)))

    @classmethod
    def concatenate(cls, laws):
        laws = list(laws)
        return cls(
            np.concatenate([w.edges for w in laws]),
            np.concatenate([w.left for w in laws]),
            np.concatenate([w.slope for w in laws]),
        )

    # -- queries ------------------------------------------------------

    def __len__(self):
        return self.edges.shape[0]

    def take(self, idx):
        return PiecewiseLinearLaw(self.edges[idx], self.left[idx], self.slope[idx])

    def support(self):
        return self.edges[:, 0].copy(), self.edges[:, -1].copy()

    def reflect(self):
        """Law of -Y; reflecting twice returns the original object."""
        mirror = getattr(self, "_mirror", None)
        if mirror is not None:
            return mirror
        right = self.left + self.slope * self._width
        out = PiecewiseLinearLaw(-self.edges[:, ::-1], right[:, ::-1], -self.slope[:, ::-1])
        out._mirror = self
        return out

    def _locate(self, t):
        t = _as_batch(t, len(self))
        j = np.sum(self.edges[:, 1:-1] <= t[:, None], axis=1)
        rows = np.arange(len(self))
        lo = self.edges[rows, j]
        d = np.clip(t, lo, self.edges[rows, j + 1]) - lo
        return rows, j, lo, d

    def partial_moment(self, t, k):
        rows, j, lo, d = self._locate(t)
        return self._cum[k][rows, j] + _segment_integral(
            self.left[rows, j], self.slope[rows, j], lo, d, k
        )

    def moment(self, k):
        return self._cum[k][:, -1].copy()

    def cdf(self, t):
        return self.partial_moment(t, 0)

    def quantile(self, alpha):
        alpha = _as_batch(alpha, len(self))
        total = self._cum[0][:, -1]
        target = np.minimum(alpha, total)
        rows = np.arange(len(self))
        j = np.sum(self._cum[0][:, 1:-1] < target[:, None], axis=1)
        r = target - self._cum[0][rows, j]
        a = self.left[rows, j]
        b = self.slope[rows, j]
        disc = np.sqrt(np.maximum(a * a + 2 * b * r, 0.0))
        denom = a + disc
        with np.errstate(divide="ignore", invalid="ignore"):
            d = np.where(denom > 0, 2 * r / denom, 0.0)
        lo = self.edges[rows, j]
        q = np.minimum(lo + np.clip(d, 0.0, None), self.edges[rows, j + 1])
        # rounding can leave cdf(q) a few ulps short of alpha
        for _ in range(64):
            short = self.cdf(q) < target
            if not short.any():
                break
            q = np.where(short, np.nextafter(q, np.inf), q)
        return q

    def density(self, y):
        y = np.asarray(y, dtype=float)
        if y.ndim == 1 and y.shape[0] == len(self):
            rows, j, lo, d = self._locate(y)
            inside = (y >= self.edges[:, 0]) & (y <= self.edges[:, -1])
            return np.where(inside, self.left[rows, j] + self.slope[rows, j] * d, 0.0)
        raise ValueError("density expects one query value per row")

    def expect(self, g):
        """E[g(Y)] by 4-point Gauss-Legendre on every segment."""
        lo = self.edges[:, :-1]
        half = self._width / 2
        out = np.zeros(len(self))
        for node, weight in zip(_GL_NODES, _GL_WEIGHTS):
            u = half * (node + 1)
            y = lo + u
            out += np.sum(weight * half * (self.left + self.slope * u) * g(y), axis=1)
        return out


class GaussianLaw:
    """Normal laws N(mean_i, sd_i^2) with closed-form truncated moments."""

    def __init__(self, mean, sd):
        self.mean = np.atleast_1d(np.asarray(mean, dtype=float))
        self.sd = np.broadcast_to(np.asarray(sd, dtype=float), self.mean.shape).copy()
        if np.any(self.sd <= 0):
            raise ValueError("sd must be positive")

    def __len__(self):
        return self.mean.shape[0]

    def take(self, idx):
        return GaussianLaw(self.mean[idx], self.sd[idx])

    @classmethod
    def concatenate(cls, laws):
        laws = list(laws)
        return cls(
            np.concatenate([w.mean for w in laws]), np.concatenate([w.sd for w in laws])
        )

    def reflect(self):
        return GaussianLaw(-self.mean, self.sd)

    def support(self, width=40.0):
        return self.mean - width * self.sd, self.mean + width * self.sd

    def partial_moment(self, t, k):
        m, s = self.mean, self.sd
        t = _as_batch(t, len(self))
        z = (t - m) / s
        cdf = special.ndtr(z)
        if k == 0:
            return cdf
        pdf = np.exp(-0.5 * z * z) / np.sqrt(2 * np.pi)
        pdf = np.where(np.isfinite(z), pdf, 0.0)
        if k == 1:
            return m * cdf - s * pdf
        if k == 2:
            tz = np.where(np.isfinite(t), m + t, 0.0)
            return (m * m + s * s) * cdf - s * tz * pdf
        raise ValueError(f"moment order must be 0, 1 or 2, got {k}")

    def moment(self, k):
        if k == 0:
            return np.ones(len(self))
        if k == 1:
            return self.mean.copy()
        if k == 2:
            return self.mean**2 + self.sd**2
        raise ValueError(f"moment order must be 0, 1 or 2, got {k}")

    def cdf(self, t):
        return self.partial_moment(t, 0)

    def quantile(self, alpha):
        return self.mean + self.sd * special.ndtri(_as_batch(alpha, len(self)))

    def expect(self, g):
        y = self.mean[:, None] + self.sd[:, None] * _GH_NODES[None, :]
        return np.sum(_GH_WEIGHTS * g(y), axis=1)


def truncated_moment(law, cutoff, k, side="below"):
    """E[Y^k 1{Y <= cutoff}] (side='below') or E[Y^k 1{Y >= cutoff}] ('above')."""
    if side == "below":
        return law.partial_moment(cutoff, k)
    if side == "above":
        return law.moment(k) - law.partial_moment(cutoff, k)
    raise ValueError(f"side must be 'below' or 'above', got {side!r}")
