import csv
import io
import json
import math

import numpy as np
import pytest

from crstokes import study
from crstokes.fem import interpolate_cr
from crstokes.mesh import GradingConfig, TetMesh, build_mesh
from crstokes.quadrature import QuadratureConfig, TetQuadrature
from crstokes.singular import ExactCase
from crstokes.study import (
    Discretization,
    StudyConfig,
    StudyError,
    compute_eoc,
    element_means,
    error_pressure_l2,
    error_velocity_h1,
    estimate_infsup,
    gradient_invariance_test,
    run_study,
)

from conftest import box_mesh, cached_study

CASE = ExactCase(1, 1.0)


@pytest.fixture(scope="module")
def coarse_solution(graded_mesh):
    disc = Discretization(graded_mesh, QuadratureConfig())
    u, p, _ = disc.solve(CASE.data, "cr-rt", 1.0, CASE.velocity)
    return disc, u, p


# -- error functionals --------------------------------------------------------


def test_velocity_error_vanishes_for_linear_field(graded_mesh):
    M = np.array([[1.0, -2.0, 0.5], [0.0, 1.0, 3.0], [2.0, 0.0, -1.0]])
    u_h = interpolate_cr(lambda x: x @ M.T, graded_mesh)
    grad = lambda x: np.broadcast_to(M, x.shape[:-1] + (3, 3))  # noqa: E731
    assert error_velocity_h1(graded_mesh, u_h, grad, QuadratureConfig(4, 0)) <= 1e-12


def test_velocity_error_quadrature_converged(coarse_solution):
    disc, u, _ = coarse_solution
    base = error_velocity_h1(disc.mesh, u, CASE.velocity_gradient, tq=disc.tq)
    fine = error_velocity_h1(disc.mesh, u, CASE.velocity_gradient, QuadratureConfig().refined())
    assert abs(base - fine) <= 1e-4 * fine


def test_zero_field_error_is_level_independent():
    norms = []
    for h in (0.354, 0.25):
        m = build_mesh(GradingConfig(h=h, mu=0.4))
        norms.append(error_velocity_h1(m, np.zeros(3 * m.n_facets), CASE.velocity_gradient))
    assert np.all(np.isfinite(norms))
    assert norms[1] == pytest.approx(norms[0], rel=1e-3)
    # measured once; the singular integral of |grad u|^2 over the inscribed polygon
    assert norms[0] == pytest.approx(2.668238, rel=1e-5)


def test_pressure_projection_is_best_approximation(graded_mesh, rng):
    tq = TetQuadrature(graded_mesh, QuadratureConfig())
    proj = element_means(graded_mesh, CASE.pressure, tq=tq)
    best = error_pressure_l2(graded_mesh, proj, CASE.pressure, tq=tq)
    for _ in range(5):
        other = proj + 0.05 * rng.standard_normal(graded_mesh.n_tets)
        assert error_pressure_l2(graded_mesh, other, CASE.pressure, tq=tq) > best


def test_pressure_error_shift_invariant(coarse_solution):
    disc, _, p = coarse_solution
    a = error_pressure_l2(disc.mesh, p, CASE.pressure, tq=disc.tq)
    b = error_pressure_l2(disc.mesh, p + 3.7, CASE.pressure, tq=disc.tq)
    assert b == pytest.approx(a, rel=1e-12)


# -- EOC ----------------------------------------------------------------------


@pytest.mark.parametrize("errors, ndofs, expect", [
    ((0.69908, 0.48222), (894, 4137), 0.73),
    ((0.48222, 0.29154), (4137, 25650), 0.83),
])
def test_eoc_from_table_values(errors, ndofs, expect):
    assert compute_eoc(errors, ndofs)[0] == pytest.approx(expect, abs=0.005)


def test_eoc_exact_halving():
    assert compute_eoc([1.0, 0.5, 0.25], [10, 80, 640]) == pytest.approx([1.0, 1.0], abs=1e-14)


@pytest.mark.parametrize("errors, ndofs", [((1.0,), (10,)), ((1.0, 0.0), (10, 80)), ((1.0, -1.0), (10, 80)),
                                           ((1.0, 0.5), (10,))])
def test_eoc_rejects_bad_input(errors, ndofs):
    with pytest.raises(ValueError):
        compute_eoc(errors, ndofs)


# -- studies ------------------------------------------------------------------


@pytest.mark.parametrize("kwargs", [dict(levels=1), dict(method="p2"), dict(example=3), dict(phi_variant=0),
                                    dict(nu=0.0), dict(refinement=1.0), dict(mu=1.2)])
def test_study_config_validation(kwargs):
    with pytest.raises(ValueError):
        StudyConfig(**kwargs)


def test_study_config_sizes():
    cfg = StudyConfig(levels=3, h0=0.5, refinement=2.0, method="CR-BDM")
    assert cfg.method == "cr-bdm"
    assert cfg.mesh_sizes() == [0.5, 0.25, 0.125]
    assert cfg.quad == QuadratureConfig(8, 4)


def test_graded_cr_rt_rates_after_four_levels():
    rep = cached_study(example=1, method="cr-rt", nu=1.0, mu=0.4, levels=5, phi_variant=1)
    levels = rep.levels[:4]
    assert levels[-1].eoc_u >= 0.9
    ndof = [lv.ndof for lv in levels]
    assert all(b > a for a, b in zip(ndof, ndof[1:]))
    ep = [lv.err_p_0 for lv in levels]
    assert all(b < a for a, b in zip(ep, ep[1:]))
    assert levels[0].eoc_u is None and levels[0].eoc_p is None
    assert all(lv.solver_residual <= 1e-10 for lv in levels)


def test_uniform_mesh_rates_degraded():
    rep = cached_study(example=1, method="cr-rt", nu=1.0, mu=1.0, levels=5, phi_variant=1)
    assert rep.levels[-1].eoc_u <= 0.75
    assert "velocity_rate_optimal" not in rep.flags


def test_example2_robust_method_ignores_gradient_part():
    a = run_study(StudyConfig(example=2, method="cr-rt", levels=2, phi_variant=1))
    b = run_study(StudyConfig(example=2, method="cr-rt", levels=2, phi_variant=2))
    for la, lb in zip(a.levels, b.levels):
        assert lb.err_u_1h == pytest.approx(la.err_u_1h, rel=1e-3)


def test_report_formats():
    rep = cached_study(example=1, method="cr-rt", nu=1.0, mu=0.4, levels=5, phi_variant=1)
    d = json.loads(rep.to_json())
    assert d["config"]["method"] == "cr-rt" and len(d["levels"]) == 5
    assert "wall_time" in d["levels"][0]
    assert "wall_time" not in json.loads(rep.to_json(timing=False))["levels"][0]
    rows = list(csv.reader(io.StringIO(rep.to_csv())))
    assert rows[0] == ["ndof", "err_u", "eoc_u", "err_p", "eoc_p"]
    assert len(rows) == 6 and rows[1][2] == ""
    md = rep.to_markdown()
    assert md.count("\n|") == 2 + 5
    assert "flags:" in md and rep.format("md") == md
    assert rep.passed == all(rep.flags.values())


def test_failed_level_keeps_partial_report(monkeypatch):
    real = study.run_level
    calls = []

    def flaky(cfg, h, case, data=None):
        calls.append(h)
        if len(calls) == 2:
            raise ArithmeticError("boom")
        return real(cfg, h, case, data)

    monkeypatch.setattr(study, "run_level", flaky)
    with pytest.raises(StudyError) as err:
        run_study(StudyConfig(levels=3, h0=0.5, refinement=2.0))
    assert len(err.value.report.levels) == 1
    assert "boom" in str(err.value)


# -- inf-sup and invariance -----------------------------------------------------


def test_infsup_positive_and_matches_dense(graded_mesh):
    beta = estimate_infsup(graded_mesh)
    assert beta > 0
    assert beta == pytest.approx(estimate_infsup(graded_mesh, dense=True), rel=1e-6)
    # measured once with the dense eigensolve
    assert beta == pytest.approx(0.2696, abs=5e-4)


def test_infsup_scale_invariant():
    m = box_mesh(3)
    big = TetMesh(2.0 * m.vertices, m.tets)
    assert estimate_infsup(big) == pytest.approx(estimate_infsup(m), rel=1e-6)


def test_infsup_dense_size_guard():
    m = build_mesh(GradingConfig(h=0.25, mu=0.4))
    with pytest.raises(ValueError):
        estimate_infsup(m, dense=True)


@pytest.mark.parametrize("method", ["cr", "cr-rt", "cr-bdm"])
def test_constant_potential_changes_nothing(graded_mesh, method):
    assert gradient_invariance_test(graded_mesh, method, "const").deviation == 0.0


@pytest.mark.parametrize("method", ["cr-rt", "cr-bdm"])
def test_quadratic_potential_invariance(graded_mesh, method):
    res = gradient_invariance_test(graded_mesh, method, "x2+y2")
    assert res.deviation <= 1e-9 and res.norm > 0


def test_quadratic_potential_moves_standard_cr(graded_mesh):
    assert gradient_invariance_test(graded_mesh, "cr", "x2+y2").deviation >= 1e-3


def test_cubic_potential_invariance(graded_mesh):
    # cubic data needs a degree-4 rule against P1 test functions
    assert gradient_invariance_test(graded_mesh, "cr-bdm", "cubic").deviation <= 1e-9


def test_lambda_consistency_for_other_angles():
    cfg = StudyConfig(omega=1.25 * math.pi)
    assert cfg.case().lam > 0.5
