import numpy as np
import pytest

from msmbounds import l2, linf
from msmbounds.condlaw import PiecewiseLinearLaw

_NODES, _WEIGHTS = np.polynomial.legendre.leggauss(8)


class CellModel:
    """Finite observation space: X atoms x Z in {0, 1} x outcome bins.

    Within a cell Y is uniform on its bin, so every functional of the law of
    Y | X, Z=1 has a closed form and a score that is constant on cells
    defines a regular parametric submodel p_eps = p (1 + eps s).
    """

    def __init__(self, probs, edges):
        self.probs = np.asarray(probs, dtype=float)  # shape (n_x, 2, n_bins)
        self.probs = self.probs / self.probs.sum()
        self.edges = np.asarray(edges, dtype=float)

    @property
    def shape(self):
        return self.probs.shape

    def perturb(self, score, eps):
        return CellModel(self.probs * (1 + eps * score), self.edges)

    def marginal_x(self):
        return self.probs.sum(axis=(1, 2))

    def propensity(self):
        return self.probs[:, 1].sum(axis=1) / self.marginal_x()

    def treated_law(self):
        p1 = self.probs[:, 1]
        return PiecewiseLinearLaw.piecewise_uniform(self.edges, p1 / p1.sum(axis=1, keepdims=True))

    def random_score(self, rng):
        r = rng.uniform(-1, 1, size=self.shape)
        return r - np.sum(self.probs * r)

    def expect(self, fn, breaks):
        """E[fn(x_index, z, y)] with Y uniform within each cell.

        ``breaks[i]`` lists outcome values where fn(i, ., y) has kinks; bins
        are split there so Gauss-Legendre integration is exact for piecewise
        polynomials of low degree.
        """
        total = 0.0
        nx, _, nb = self.shape
        for i in range(nx):
            for z in (0, 1):
                for b in range(nb):
                    lo, hi = self.edges[b], self.edges[b + 1]
                    cuts = [lo] + sorted(c for c in breaks[i] if lo < c < hi) + [hi]
                    acc = 0.0
                    for a, c in zip(cuts[:-1], cuts[1:]):
                        y = (a + c) / 2 + (c - a) / 2 * _NODES
                        acc += np.sum(_WEIGHTS * (c - a) / 2 * fn(i, z, y))
                    total += self.probs[i, z, b] * acc / (hi - lo)
        return total


def linf_functional(model, gamma, direction):
    law, e = model.treated_law(), model.propensity()
    sol = linf.solve_linf(law, e, gamma, direction)
    return float(model.marginal_x() @ sol.plug_in()), sol


def l2_functionals(model, lam):
    sol = l2.solve_lagrangian(model.treated_law(), lam)
    px = model.marginal_x()
    return float(px @ sol.e_h2), float(px @ sol.e_hy), sol


def psi0_functional(model, theta):
    sol = l2.solve_sensitivity_value(model.treated_law(), theta)
    return float(model.marginal_x() @ sol.e_h2), sol


def row(sol, i):
    """Restrict a per-unit solution to unit i (length-one arrays broadcast over y)."""
    fields = {}
    for k, v in vars(sol).items():
        fields[k] = v[i : i + 1] if isinstance(v, np.ndarray) else v
    return type(sol)(**fields)


def pathwise_pairs(model, functional, eif, breaks_of, scores, eps=1e-4):
    """(finite-difference derivative, E[phi s]) for each score."""
    base, sol = functional(model)
    e = model.propensity()
    rows = [row(sol, i) for i in range(model.shape[0])]
    breaks = [breaks_of(r) for r in rows]
    out = []
    for s in scores:
        moved, _ = functional(model.perturb(s, eps))
        s_cell = s

        def fn(i, z, y, s_cell=s_cell):
            bins = np.clip(np.searchsorted(model.edges, y, side="right") - 1, 0, model.shape[2] - 1)
            return eif(rows[i], np.full_like(y, z), y, e[i]) * s_cell[i, z, bins]

        out.append(((moved - base) / eps, model.expect(fn, breaks)))
    return out


@pytest.fixture
def cell_model():
    probs = np.array(
        [
            [[0.10, 0.07, 0.05], [0.06, 0.09, 0.05]],
            [[0.04, 0.06, 0.08], [0.12, 0.10, 0.18]],
        ]
    )
    return CellModel(probs, [0.0, 1.0, 1.5, 3.0])
