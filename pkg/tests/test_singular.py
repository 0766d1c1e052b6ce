import math
import time

import numpy as np
import pytest
from scipy.optimize import bisect

from crstokes import checks, singular
from crstokes.checks import divergence_residual, momentum_residual, sample_interior_points
from crstokes.singular import (
    EvaluationError,
    ExactCase,
    PolynomialCase,
    angular_pressure,
    cylindrical,
    eval_exact,
    eval_gradient_phi2,
    solve_lambda,
)

OMEGA = 1.5 * math.pi


def test_lambda_three_halves_pi():
    ex = solve_lambda(OMEGA)
    assert ex.lam == pytest.approx(0.54448, abs=1e-4)
    assert 0.5 < ex.lam < math.pi / OMEGA
    assert ex.residual <= 1e-12
    # frozen from a 50-digit mpmath root
    assert ex.lam == pytest.approx(0.5444837367824639, abs=1e-15)


def test_lambda_is_fast():
    t0 = time.perf_counter()
    for _ in range(20):
        solve_lambda(OMEGA)
    assert (time.perf_counter() - t0) / 20 < 1e-3


def test_lambda_matches_brute_force_scan():
    omega = 1.75 * math.pi
    f = lambda t: np.sin(t * omega) + t * np.sin(omega)  # noqa: E731
    grid = np.arange(0.5, math.pi / omega, 1e-7)
    vals = f(grid)
    k = np.flatnonzero(np.sign(vals[:-1]) != np.sign(vals[1:]))[0]
    ref = bisect(f, grid[k], grid[k + 1], xtol=1e-16)
    assert solve_lambda(omega).lam == pytest.approx(ref, abs=1e-13)


@pytest.mark.parametrize("omega", [1.1 * math.pi, 1.5 * math.pi, 1.9 * math.pi])
def test_lambda_residual_over_range(omega):
    ex = solve_lambda(omega)
    assert ex.residual <= 1e-12
    assert 0.5 < ex.lam < math.pi / omega


@pytest.mark.parametrize("omega", [math.pi, 2 * math.pi, 0.5])
def test_lambda_rejects_invalid_angle(omega):
    with pytest.raises(ValueError):
        solve_lambda(omega)


def test_cylindrical_rejections_and_clamp():
    with pytest.raises(EvaluationError):
        cylindrical(np.array([0.0, 0.0, 0.3]), OMEGA)
    with pytest.raises(EvaluationError):  # phi = 7 pi / 4 lies outside the sector
        cylindrical(np.array([1.0, -1.0, 0.0]), OMEGA)
    r, phi, z = cylindrical(np.array([0.5, -1e-15, 0.2]), OMEGA)
    assert phi == 0.0 and r == pytest.approx(0.5)


def test_third_component_vanishes_on_walls():
    case = ExactCase()
    pts = np.array([[0.4, 0.0, 0.3], [0.0, -0.4, 0.7], [1e-17, -0.8, 0.1]])
    np.testing.assert_allclose(case.velocity(pts)[:, 2], 0.0, atol=1e-15)


def test_velocity_vanishes_on_walls():
    # full no-slip on both walls for the in-plane components as well
    case = ExactCase()
    pts = np.array([[0.4, 0.0, 0.3], [0.0, -0.4, 0.7]])
    np.testing.assert_allclose(case.velocity(pts), 0.0, atol=1e-15)


def test_pressure_has_factor_z():
    case = ExactCase()
    x = sample_interior_points(5)
    x[:, 2] = 0.0
    np.testing.assert_array_equal(case.pressure(x), 0.0)


def test_example1_in_plane_data_vanishes_for_unit_viscosity():
    x = sample_interior_points(10)
    np.testing.assert_allclose(ExactCase(1, 1.0).data(x)[:, :2], 0.0, atol=1e-14)
    assert np.abs(ExactCase(1, 0.1).data(x)[:, :2]).max() > 1e-2
    assert ExactCase(1, 1.0).data_in_l2 and not ExactCase(1, 0.1).data_in_l2


def _fd(func, x, k, h):
    e = np.zeros(3)
    e[k] = h
    return (func(x + e) - func(x - e)) / (2 * h)


def test_velocity_gradient_matches_finite_differences():
    case = ExactCase()
    for x in sample_interior_points(20, seed=3):
        h = 1e-6 * np.hypot(x[0], x[1])
        fd = np.column_stack([_fd(case.velocity, x, k, h) for k in range(3)])
        g = case.velocity_gradient(x)
        assert np.abs(g - fd).max() <= 1e-6 * np.abs(g).max()


def test_exact_velocity_divergence_free():
    x = sample_interior_points(20, seed=4)
    assert divergence_residual(ExactCase(), x).max() <= 1e-8
    assert np.abs(np.trace(ExactCase().velocity_gradient(x), axis1=1, axis2=2)).max() <= 1e-12


@pytest.mark.parametrize("nu", [1.0, 0.1])
def test_momentum_consistency_example1(nu):
    assert momentum_residual(ExactCase(1, nu), sample_interior_points(20)).max() <= 1e-5


@pytest.mark.parametrize("variant", [1, 2])
@pytest.mark.parametrize("nu", [1.0, 1e-3])
def test_momentum_consistency_example2(variant, nu):
    assert momentum_residual(ExactCase(2, nu, phi_variant=variant), sample_interior_points(20)).max() <= 1e-5


def test_sign_error_hook_breaks_momentum():
    x = sample_interior_points(20)
    with checks.inject_pressure_sign_error():
        assert singular.angular_pressure is not angular_pressure
        assert momentum_residual(ExactCase(1, 1.0), x).max() > 1e-2
    assert singular.angular_pressure is angular_pressure


def test_phi2_gradient():
    case = ExactCase(2, 1.0, phi_variant=2)
    for x in sample_interior_points(20, seed=5):
        g = eval_gradient_phi2(case, x)
        assert g[2] == 0.0
        h = 1e-6 * np.hypot(x[0], x[1])
        fd = np.array([_fd(case.potential, x, k, h) for k in range(3)])
        assert np.abs(g - fd).max() <= 1e-6 * np.abs(g).max()


def test_phi1_perturbation_zero():
    x = sample_interior_points(5)
    np.testing.assert_array_equal(eval_gradient_phi2(ExactCase(2, 1.0, phi_variant=1), x), 0.0)


def test_helmholtz_split_identity():
    x = sample_interior_points(10)
    c1, c2 = ExactCase(2, 1.0, phi_variant=1), ExactCase(2, 1.0, phi_variant=2)
    np.testing.assert_array_equal(c2.data(x) - c1.data(x), eval_gradient_phi2(c2, x))
    # f0 = (0, 0, r^(lam - 1) Phi)
    r, phi, _ = cylindrical(x, OMEGA)
    np.testing.assert_allclose(c1.data(x), np.column_stack([0 * r, 0 * r, r ** (c1.lam - 1) * angular_pressure(phi, c1.lam, OMEGA)[0]]), atol=1e-14)


def test_example2_scaling():
    x = sample_interior_points(5)
    a, b = ExactCase(2, 1.0, phi_variant=2), ExactCase(2, 1e-3, phi_variant=2)
    np.testing.assert_allclose(b.velocity(x), 1e3 * a.velocity(x), rtol=1e-14)
    np.testing.assert_array_equal(b.pressure(x), a.pressure(x))
    np.testing.assert_array_equal(b.data(x), a.data(x))


def test_eval_exact_sample_finite():
    s = eval_exact(ExactCase(), [0.3, 0.2, 0.5])
    assert s.velocity.shape == (3,) and s.velocity_gradient.shape == (3, 3)
    assert np.all(np.isfinite(s.velocity_gradient)) and np.isfinite(s.pressure)


@pytest.mark.parametrize("kwargs", [dict(example=3), dict(nu=0.0), dict(phi_variant=3)])
def test_invalid_case(kwargs):
    with pytest.raises(ValueError):
        ExactCase(**kwargs)


def test_polynomial_case_base_divergence_free():
    pc = PolynomialCase()
    x = np.random.default_rng(0).uniform(-1, 1, (10, 3))
    for xi in x:
        div = sum(_fd(pc.base, xi, k, 1e-6)[k] for k in range(3))
        assert abs(div) < 1e-8
    for pot in ("const", "x2+y2", "cubic"):
        PolynomialCase(potential=pot).potential_gradient(x)
    with pytest.raises(ValueError):
        PolynomialCase(potential="quartic").potential_gradient(x)
