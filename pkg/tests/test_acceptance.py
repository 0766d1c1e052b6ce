"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py -v``; the studies behind
criteria 5 and 6 dominate the runtime (a few minutes in total).
"""

import math
import time

import numpy as np
import pytest

from crstokes.checks import (
    TABLE_EOC_P,
    TABLE_EOC_U,
    TABLE_ERRORS_P,
    TABLE_ERRORS_U,
    TABLE_NDOF,
    boundary_flux,
    divergence_defect,
    divergence_residual,
    momentum_residual,
    normal_jump,
    random_cr_field,
    sample_interior_points,
)
from crstokes.fem import p1_load
from crstokes.mesh import GradingConfig, build_mesh, mesh_quality
from crstokes.quadrature import QuadratureConfig
from crstokes.reconstruction import bdm_interpolate, rt_interpolate
from crstokes.singular import ExactCase, solve_lambda
from crstokes.study import (
    Discretization,
    compute_eoc,
    error_pressure_l2,
    error_velocity_h1,
    estimate_infsup,
    gradient_invariance_test,
)

from conftest import cached_study

OMEGA = 1.5 * math.pi
METHODS = ("cr", "cr-rt", "cr-bdm")
GRADED_LEVELS = (0.5, 0.354, 0.25)
PSI_BAR = 2.8


def verdict(capsys, number, title, ok, detail):
    with capsys.disabled():
        print(f"\n[{'PASS' if ok else 'FAIL'}] criterion {number:2d} {title}: {detail}")
    assert ok, detail


def final_eocs(mu):
    return {m: cached_study(example=1, method=m, nu=1.0, mu=mu, levels=5, phi_variant=1) for m in METHODS}


def test_c01_singular_exponent(capsys):
    ex = solve_lambda(OMEGA)
    t0 = time.perf_counter()
    for _ in range(100):
        solve_lambda(OMEGA)
    ms = (time.perf_counter() - t0) / 100 * 1e3
    ok = 0.5443 <= ex.lam <= 0.5446 and ex.residual <= 1e-12 and ms < 1.0
    verdict(capsys, 1, "singular exponent", ok, f"lambda={ex.lam:.10f} residual={ex.residual:.1e} time={ms:.3f} ms")


def test_c02_reconstruction_divergence(capsys):
    t0 = time.perf_counter()
    rng = np.random.default_rng(2)
    meshes = [build_mesh(GradingConfig(h=h, mu=0.4)) for h in GRADED_LEVELS]
    meshes.append(build_mesh(GradingConfig(h=0.25, mu=1.0)))
    worst = max(divergence_defect(m, [random_cr_field(m, rng) for _ in range(50)]) for m in meshes)
    dt = time.perf_counter() - t0
    ok = worst <= 1e-12 and dt < 30.0
    verdict(capsys, 2, "reconstruction divergence", ok, f"max defect={worst:.2e} over {len(meshes)} meshes, {dt:.1f} s")


def test_c03_hdiv_conformity(capsys):
    rng = np.random.default_rng(3)
    jump = flux = 0.0
    for h in GRADED_LEVELS:
        m = build_mesh(GradingConfig(h=h, mu=0.4))
        v, vh = random_cr_field(m, rng), random_cr_field(m, rng, homogeneous=True)
        for interp in (rt_interpolate, bdm_interpolate):
            jump = max(jump, normal_jump(interp(v, m)))
            w = interp(vh, m)
            # RT0 traces are constant per facet, BDM1 traces vanish pointwise
            flux = max(flux, boundary_flux(w))
    ok = jump <= 1e-12 and flux <= 1e-12
    verdict(capsys, 3, "H(div) conformity", ok, f"max normal jump={jump:.2e}, max boundary trace={flux:.2e}")


def test_c04_exact_solution(capsys):
    t0 = time.perf_counter()
    x = sample_interior_points(20, seed=4)
    mom = max(momentum_residual(ExactCase(1, nu), x).max() for nu in (1.0, 0.1))
    div = max(divergence_residual(ExactCase(1, nu), x).max() for nu in (1.0, 0.1))
    dt = time.perf_counter() - t0
    ok = mom <= 1e-5 and div <= 1e-8 and dt < 5.0
    verdict(capsys, 4, "exact solution", ok, f"momentum={mom:.1e} divergence={div:.1e} time={dt:.2f} s")


def test_c05_graded_rates(capsys):
    reports = final_eocs(0.4)
    parts, ok = [], True
    for m, rep in reports.items():
        last = rep.levels[-1]
        good = last.eoc_u >= 0.90 and last.eoc_p >= 1.00 and last.ndof >= 1e5 and len(rep.levels) >= 4
        ok &= good
        parts.append(f"{m} eoc_u={last.eoc_u:.3f} eoc_p={last.eoc_p:.3f}")
    ndof = reports["cr-rt"].levels[-1].ndof
    verdict(capsys, 5, "graded-mesh rates", ok, "; ".join(parts) + f" (final ndof {ndof})")


def test_c06_uniform_degradation(capsys):
    graded, uniform = final_eocs(0.4), final_eocs(1.0)
    parts, ok = [], True
    for m in METHODS:
        eu, eg = uniform[m].levels[-1].eoc_u, graded[m].levels[-1].eoc_u
        ok &= eu <= 0.75 and eg - eu >= 0.15
        parts.append(f"{m} eoc_u={eu:.3f} (graded {eg:.3f})")
    verdict(capsys, 6, "uniform-mesh degradation", ok, "; ".join(parts))


def test_c07_pressure_robustness(capsys):
    cases = {phi: ExactCase(2, 1.0, phi_variant=phi) for phi in (1, 2)}
    errors = {(m, phi): [] for m in METHODS for phi in (1, 2)}
    for h in GRADED_LEVELS:
        disc = Discretization(build_mesh(GradingConfig(h=h, mu=0.4)), QuadratureConfig())
        for phi, case in cases.items():
            load = p1_load(disc.mesh, case.data, tq=disc.tq)
            for m in METHODS:
                u, _, _ = disc.solve(case.data, m, 1.0, case.velocity, load=load)
                errors[m, phi].append(error_velocity_h1(disc.mesh, u, case.velocity_gradient, tq=disc.tq))
    rel = {m: np.abs(np.array(errors[m, 2]) / np.array(errors[m, 1]) - 1.0) for m in METHODS}
    ok = rel["cr-rt"].max() <= 1e-3 and rel["cr-bdm"].max() <= 1e-3 and rel["cr"].min() >= 0.5
    detail = (f"robust max rel diff {max(rel['cr-rt'].max(), rel['cr-bdm'].max()):.1e}; "
              f"CR min rel diff {rel['cr'].min():.2f}")
    verdict(capsys, 7, "pressure robustness", ok, detail)


def test_c08_gradient_invariance(capsys):
    mesh = build_mesh(GradingConfig(h=0.5, mu=0.4))
    dev = {m: gradient_invariance_test(mesh, m, "x2+y2").deviation for m in METHODS}
    ok = dev["cr-rt"] <= 1e-9 and dev["cr-bdm"] <= 1e-9 and dev["cr"] >= 1e-3
    verdict(capsys, 8, "polynomial-gradient invariance", ok, ", ".join(f"{m}={d:.1e}" for m, d in dev.items()))


def test_c09_viscosity_scaling(capsys):
    mesh = build_mesh(GradingConfig(h=0.5, mu=0.4))
    disc = Discretization(mesh, QuadratureConfig())
    c1, c3 = ExactCase(2, 1.0, phi_variant=2), ExactCase(2, 1e-3, phi_variant=2)
    load = p1_load(mesh, c1.data, tq=disc.tq)
    worst, ratios = 0.0, []
    for m in ("cr-rt", "cr-bdm"):
        u1, p1, _ = disc.solve(c1.data, m, 1.0, c1.velocity, load=load)
        u3, p3, _ = disc.solve(c3.data, m, 1e-3, c3.velocity, load=load)
        worst = max(worst, np.abs(u3 - 1e3 * u1).max() / np.abs(1e3 * u1).max())
        e1 = error_velocity_h1(mesh, u1, c1.velocity_gradient, tq=disc.tq)
        e3 = error_velocity_h1(mesh, u3, c3.velocity_gradient, tq=disc.tq)
        ep1 = error_pressure_l2(mesh, p1, c1.pressure, tq=disc.tq)
        ep3 = error_pressure_l2(mesh, p3, c3.pressure, tq=disc.tq)
        ratios += [e3 / (1e3 * e1) - 1.0, ep3 / ep1 - 1.0]
    err_dev = float(np.abs(ratios).max())
    ok = worst <= 1e-9 and err_dev <= 1e-9
    verdict(capsys, 9, "viscosity scaling", ok, f"dof deviation={worst:.1e}, error-scaling deviation={err_dev:.1e}")


def test_c10_eoc_formula(capsys):
    eu = compute_eoc(TABLE_ERRORS_U, TABLE_NDOF)
    ep = compute_eoc(TABLE_ERRORS_P, TABLE_NDOF)
    dev = max(np.abs(np.subtract(eu, TABLE_EOC_U)).max(), np.abs(np.subtract(ep, TABLE_EOC_P)).max())
    verdict(capsys, 10, "EOC formula", dev <= 0.005,
            f"velocity {np.round(eu, 4).tolist()}, pressure {np.round(ep, 4).tolist()}, max dev {dev:.4f}")


def test_c11_infsup(capsys):
    t0 = time.perf_counter()
    betas = [estimate_infsup(build_mesh(GradingConfig(h=h, mu=0.4))) for h in GRADED_LEVELS]
    dt = time.perf_counter() - t0
    ratio = max(betas) / min(betas)
    ok = ratio <= 2.0 and min(betas) > 0 and dt < 120.0
    verdict(capsys, 11, "inf-sup non-degeneration", ok,
            f"beta={[round(b, 4) for b in betas]} ratio={ratio:.3f} time={dt:.1f} s")


@pytest.mark.parametrize("mu", [0.4, 1.0])
def test_c12_mesh_family(capsys, mu):
    sizes = (0.5, 0.25, 0.125)
    meshes = [build_mesh(GradingConfig(h=h, mu=mu)) for h in sizes]
    counts = [m.n_tets for m in meshes]
    growth = [b / a for a, b in zip(counts, counts[1:])]
    angles = [mesh_quality(m).max_dihedral_angle for m in meshes]
    # non-degrading: no growth at the fine end and a level-independent bound below pi
    ok = all(6.5 <= g <= 9.5 for g in growth) and angles[-1] <= max(angles[:-1]) + 0.05 and max(angles) < PSI_BAR
    verdict(capsys, 12, f"mesh family (mu={mu:g})", ok,
            f"growth={[round(g, 2) for g in growth]} max dihedral={[round(a, 4) for a in angles]}")
