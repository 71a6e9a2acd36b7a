import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import l2_functionals, pathwise_pairs
from msmbounds import AnalysisConfig, DomainError, InfeasibleTargetError, ObservationalDataset, make_folds
from msmbounds.condlaw import PiecewiseLinearLaw
from msmbounds.l2 import (
    eif_phi0,
    eif_phi1,
    eif_phi2,
    estimate_l2_curve,
    estimate_psi0,
    evaluate_l2,
    lagrangian_gap,
    lagrangian_solution,
    root_lagrangian,
    root_sensitivity_value,
    sensitivity_gap,
    solve_lagrangian,
    solve_sensitivity_value,
)
from msmbounds.nuisance import cross_fit, fit_nuisance
from msmbounds.simulation import generate_dgp

UNIFORM = PiecewiseLinearLaw.uniform(0.0, 1.0)


def _random_law(seed, m=4):
    rng = np.random.default_rng(seed)
    grid = np.sort(rng.uniform(-2, 3, size=(m, 9)), axis=1)
    return PiecewiseLinearLaw.from_grid(grid, rng.uniform(0.05, 1.5, size=(m, 9)))


@pytest.mark.parametrize("lam, xi", [(2.0, 1.0), (8.0, 0.5)])
def test_uniform_lagrangian_root(lam, xi):
    root = root_lagrangian(UNIFORM, lam)
    assert root[0] == pytest.approx(xi, abs=1e-8)
    assert lagrangian_gap(UNIFORM, root - 1e-6, lam)[0] < 0 < lagrangian_gap(UNIFORM, root + 1e-6, lam)[0]


def test_uniform_sensitivity_root():
    xi, lam_x = root_sensitivity_value(UNIFORM, 0.25)
    assert xi[0] == pytest.approx(0.75, abs=1e-6)
    assert lam_x[0] == pytest.approx(32 / 9, abs=1e-6)
    sol = solve_sensitivity_value(UNIFORM, 0.25)
    assert sol.e_h2[0] == pytest.approx(16 / 9, abs=1e-6)
    # E[h^2] = lam_x (xi - (E[Y] - theta))
    assert sol.e_h2[0] == pytest.approx(lam_x[0] * (xi[0] - 0.25), abs=1e-9)


def test_uniform_functionals_two_routes():
    sol = solve_lagrangian(UNIFORM, 8.0)
    assert sol.e_h2[0] == pytest.approx(8 / 3, abs=1e-6)
    assert sol.e_hy[0] == pytest.approx(1 / 6, abs=1e-6)
    # E[h^2] = lam E[(xi - Y)_+ h] = lam (xi E[h] - E[hY])
    assert sol.e_h2[0] == pytest.approx(8.0 * (sol.xi[0] - sol.e_hy[0]), abs=1e-6)


def test_root_errors():
    with pytest.raises(DomainError):
        root_lagrangian(UNIFORM, 0.0)
    with pytest.raises(DomainError):
        solve_lagrangian(UNIFORM, -1.0)
    with pytest.raises(InfeasibleTargetError):
        root_sensitivity_value(UNIFORM, 0.6)


@pytest.mark.parametrize("theta", [0.0, -0.3])
def test_nonpositive_theta_is_trivial(theta):
    sol = solve_sensitivity_value(UNIFORM, theta)
    assert sol.trivial and sol.e_h2[0] == 1.0
    np.testing.assert_array_equal(sol.h_star(np.array([0.1, 0.9])), 1.0)
    np.testing.assert_array_equal(eif_phi0(sol, np.array([1, 0]), np.array([0.3, 0.7]), 0.5), 1.0)


@given(st.integers(0, 10_000), st.floats(0.05, 40.0))
@settings(max_examples=60, deadline=None)
def test_lagrangian_root_properties(seed, lam):
    law = _random_law(seed)
    sol = solve_lagrangian(law, lam)
    xi = sol.xi
    assert np.all(np.abs(lagrangian_gap(law, xi, lam)) < 1e-8)
    assert np.all(lagrangian_gap(law, xi - 1e-4, lam) < 0)
    assert np.all(lagrangian_gap(law, xi + 1e-4, lam) > 0)
    # feasibility: E[h*] = 1, h* >= 0, E[Pi] = 0
    np.testing.assert_allclose(lam * (xi * sol.m0 - sol.m1), 1.0, atol=1e-6)
    lo, hi = law.support()
    ys = np.linspace(lo, hi, 50)
    assert np.all(np.array([sol.h_star(y) for y in ys]) >= 0)
    np.testing.assert_allclose((1 - lam * (xi * sol.m0 - sol.m1)) / sol.m0, 0.0, atol=1e-6)
    np.testing.assert_allclose(sol.e_h2, lam * (xi - sol.e_hy), atol=1e-6)
    # a second moment of a mean-one non-negative variable is at least one
    assert np.all(sol.e_h2 >= 1 - 1e-9)


@given(st.integers(0, 10_000), st.floats(0.01, 0.9))
@settings(max_examples=60, deadline=None)
def test_sensitivity_root_properties(seed, frac):
    law = _random_law(seed)
    lo, _ = law.support()
    theta = frac * float(np.min(law.moment(1) - lo))
    xi, lam_x = root_sensitivity_value(law, theta)
    assert np.all(np.abs(sensitivity_gap(law, xi, theta)) < 1e-8)
    assert np.all(sensitivity_gap(law, xi - 1e-4, theta) < 0)
    assert np.all(sensitivity_gap(law, xi + 1e-4, theta) > 0)
    sol = solve_sensitivity_value(law, theta)
    np.testing.assert_allclose(sol.e_hy, law.moment(1) - theta, atol=1e-6)


def test_roots_monotone_in_lambda():
    law = _random_law(3)
    xis = [solve_lagrangian(law, lam).xi for lam in (0.5, 1.0, 2.0, 4.0)]
    assert all(np.all(b <= a) for a, b in zip(xis, xis[1:]))
    warm = solve_lagrangian(law, 4.0, upper=xis[2])
    np.testing.assert_allclose(warm.xi, xis[3], atol=1e-9)


def test_eif_control_branch():
    sol = solve_lagrangian(UNIFORM, 3.0)
    z, y = np.zeros(2), np.array([0.2, 0.9])
    np.testing.assert_allclose(eif_phi1(sol, z, y, 0.4), sol.e_h2[0])
    np.testing.assert_allclose(eif_phi2(sol, z, y, 0.4), sol.e_hy[0])
    s0 = solve_sensitivity_value(UNIFORM, 0.2)
    np.testing.assert_allclose(eif_phi0(s0, z, y, 0.4), s0.e_h2[0])


def test_small_lambda_limit():
    law = _random_law(5, m=1)
    sol = solve_lagrangian(law, 1e-6)
    z, y = np.array([1.0, 1.0, 0.0]), np.array([-1.0, 2.0, 0.5])
    mean = law.moment(1)[0]
    np.testing.assert_allclose(eif_phi1(sol, z, y, 0.3), 1.0, atol=1e-4)
    np.testing.assert_allclose(eif_phi2(sol, z, y, 0.3), z / 0.3 * (y - mean) + mean, atol=1e-4)
    zero = solve_lagrangian(law, 0.0)
    np.testing.assert_array_equal(eif_phi1(zero, z, y, 0.3), 1.0)
    np.testing.assert_allclose(eif_phi2(zero, z, y, 0.3), z / 0.3 * (y - mean) + mean)


def test_eif_means_equal_functionals(cell_model):
    e_h2, e_hy, _ = l2_functionals(cell_model, 2.0)
    ones = [np.ones(cell_model.shape)]
    brk = lambda r: [float(r.xi[0])]  # noqa: E731
    m1 = pathwise_pairs(cell_model, lambda m: l2_functionals(m, 2.0)[::2], eif_phi1, brk, ones)
    m2 = pathwise_pairs(cell_model, lambda m: l2_functionals(m, 2.0)[1:], eif_phi2, brk, ones)
    assert m1[0][1] == pytest.approx(e_h2, abs=1e-8)
    assert m2[0][1] == pytest.approx(e_hy, abs=1e-8)


# -- cross-fitted curves ---------------------------------------------------------


@pytest.fixture(scope="module")
def sim():
    data = generate_dgp(300, 23).dataset
    config = AnalysisConfig(K=5)
    folds = make_folds(data.n, 5, 2)
    return data, config, folds, cross_fit(data, folds, config)


def test_curve_monotone(sim):
    data, config, folds, cf = sim
    grid = (0.0, 0.5, 1.0, 2.0, 3.0, 5.0)
    for sign in ("minimize", "maximize"):
        pts = estimate_l2_curve(data, folds, grid, sign, config, cf)
        for p in pts:
            assert p.psi1.value >= 1 - 2 * p.psi1.se
        for a, b in zip(pts, pts[1:]):
            assert b.psi1.value >= a.psi1.value - 2 * max(a.psi1.se, b.psi1.se)
            assert b.psi1.plug_in >= a.psi1.plug_in - 1e-12
            step = b.psi2.value - a.psi2.value
            slack = 2 * max(a.psi2.se, b.psi2.se)
            assert (step <= slack) if sign == "minimize" else (step >= -slack)


def test_zero_lambda_is_aipw(sim):
    data, config, folds, cf = sim
    (pt,) = estimate_l2_curve(data, folds, (0.0,), "minimize", config, cf)
    assert pt.psi1.value == 1.0 and pt.psi1.se == 0.0
    z, y, e = data.treatment, data.outcome, cf.propensity
    m = cf.law.moment(1)
    assert pt.psi2.value == pytest.approx(np.mean(z / e * (y - m) + m), rel=1e-12)


def test_flip_involution(sim):
    data, config, folds, cf = sim
    grid = (0.5, 1.5)
    law2 = cf.law.reflect().reflect()
    y2 = -(-data.outcome)
    a = evaluate_l2(cf.law, cf.propensity, data.treatment, data.outcome, grid, "minimize", folds)
    b = evaluate_l2(law2, cf.propensity, data.treatment, y2, grid, "minimize", folds)
    for p, q in zip(a, b):
        np.testing.assert_array_equal(p.per_unit_eif1, q.per_unit_eif1)
        np.testing.assert_array_equal(p.per_unit_eif2, q.per_unit_eif2)


def test_maximize_is_reflected_minimize(sim):
    data, config, folds, cf = sim
    up = evaluate_l2(cf.law, cf.propensity, data.treatment, data.outcome, (2.0,), "maximize", folds)
    down = evaluate_l2(cf.law.reflect(), cf.propensity, data.treatment, -data.outcome, (2.0,), "minimize", folds)
    assert up[0].psi2.value == -down[0].psi2.value
    assert up[0].psi1.value == down[0].psi1.value


def test_table_scale_point_estimates():
    data = generate_dgp(300, 101).dataset
    folds = make_folds(300, 10, 0)
    (pt,) = estimate_l2_curve(data, folds, (2.0,), "minimize", AnalysisConfig())
    # population values on this design (computed with true nuisances)
    assert abs(pt.psi1.value - 1.4036) <= 3 * pt.psi1.se
    assert abs(pt.psi2.value - 0.2808) <= 3 * pt.psi2.se


def test_lagrangian_solution_from_fit(sim):
    data = sim[0]
    fit = fit_nuisance(data, AnalysisConfig())
    sol = lagrangian_solution(fit, data.covariates[:6], 2.0)
    np.testing.assert_allclose(2.0 * (sol.xi * sol.m0 - sol.m1), 1.0, atol=1e-6)
    grid = fit.outcome.y_grid(data.covariates[:6])
    assert sol.h_star(grid).shape == grid.shape


# -- sensitivity value ----------------------------------------------------------


@pytest.fixture(scope="module")
def uniform_data():
    rng = np.random.default_rng(0)
    n = 5000
    x = rng.normal(size=(n, 1))
    z = (rng.uniform(size=n) < 0.5).astype(int)
    return ObservationalDataset(x, z, rng.uniform(size=n), ("x",))


def test_psi0_uniform(uniform_data):
    cfg = AnalysisConfig(K=5, mean_shift=False)
    folds = make_folds(uniform_data.n, 5, 0)
    cf = cross_fit(uniform_data, folds, cfg)
    est = estimate_psi0(uniform_data, folds, 0.25, cfg, cf)
    assert abs(est.value - 16 / 9) <= 3 * est.se
    values = [estimate_psi0(uniform_data, folds, t, cfg, cf) for t in (0.05, 0.15, 0.25, 0.35)]
    for a, b in zip(values, values[1:]):
        assert b.value >= a.value - 2 * max(a.se, b.se)


def test_psi0_nonpositive_theta(uniform_data):
    est = estimate_psi0(uniform_data, make_folds(uniform_data.n, 5, 0), -0.1)
    assert est.value == 1.0 and est.se == 0.0
