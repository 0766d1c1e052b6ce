"""Error measurement, experimental orders of convergence and the study harness."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import __version__
from .fem import (
    METHODS,
    assemble_b,
    assemble_rhs,
    assemble_stiffness,
    correct_boundary_flux,
    interpolate_cr,
    p1_load,
)
from .mesh import GradingConfig, TetMesh, build_mesh, mesh_quality
from .quadrature import QuadratureConfig, TetQuadrature
from .reconstruction import broken_gradient
from .singular import ExactCase, PolynomialCase, solve_lambda
from .solver import build_system, solve

log = logging.getLogger(__name__)


# -- errors -----------------------------------------------------------------


def error_velocity_h1(mesh: TetMesh, u_h: np.ndarray, grad_exact, quad: QuadratureConfig | None = None,
                      tq: TetQuadrature | None = None) -> float:
    """Broken H1 seminorm ``||grad u - grad_h u_h||_0``; ``grad_exact(x) -> (..., 3, 3)``."""
    tq = tq or TetQuadrature(mesh, quad)
    G = broken_gradient(mesh, u_h)

    def integrand(pts, sel, bary):
        d = grad_exact(pts) - G[sel][:, None]
        return np.einsum("bqck,bqck->bq", d, d)

    return float(np.sqrt(tq.integrate(integrand).sum()))


def error_pressure_l2(mesh: TetMesh, p_h: np.ndarray, p_exact, quad: QuadratureConfig | None = None,
                      tq: TetQuadrature | None = None) -> float:
    """L2 error with both pressures shifted to zero mean over the mesh."""
    tq = tq or TetQuadrature(mesh, quad)
    vol = mesh.volumes
    mean_exact = tq.integrate(lambda pts, sel, bary: p_exact(pts)).sum() / vol.sum()
    ph = p_h - np.dot(vol, p_h) / vol.sum()

    def integrand(pts, sel, bary):
        d = p_exact(pts) - mean_exact - ph[sel][:, None]
        return d * d

    return float(np.sqrt(tq.integrate(integrand).sum()))


def element_means(mesh: TetMesh, func, quad: QuadratureConfig | None = None, tq: TetQuadrature | None = None):
    tq = tq or TetQuadrature(mesh, quad)
    return tq.integrate(lambda pts, sel, bary: func(pts)) / mesh.volumes


def compute_eoc(errors, ndofs) -> list[float]:
    """``3 ln(e_{k-1} / e_k) / ln(N_k / N_{k-1})`` for k >= 1."""
    e = np.asarray(errors, dtype=float)
    n = np.asarray(ndofs, dtype=float)
    if len(e) < 2 or len(e) != len(n):
        raise ValueError("need at least two levels with matching errors and ndofs")
    if np.any(e <= 0) or np.any(n <= 0):
        raise ValueError("errors and ndofs must be positive")
    return (3.0 * np.log(e[:-1] / e[1:]) / np.log(n[1:] / n[:-1])).tolist()


# -- discrete problems -------------------------------------------------------


@dataclass
class Discretization:
    """Mesh-level data shared by several solves (matrices, quadrature, factorisation)."""

    mesh: TetMesh
    quad: QuadratureConfig
    tq: TetQuadrature = field(init=False)
    K: sp.csr_matrix = field(init=False)
    B: sp.csr_matrix = field(init=False)

    def __post_init__(self):
        self.tq = TetQuadrature(self.mesh, self.quad)
        self.K = assemble_stiffness(self.mesh)
        self.B = assemble_b(self.mesh)
        self._systems = {}

    @property
    def ndof(self) -> int:
        return 3 * self.mesh.n_facets + self.mesh.n_tets

    def boundary_values(self, velocity) -> np.ndarray:
        bf = self.mesh.boundary_facets
        g = interpolate_cr(velocity, self.mesh, bf)
        g, _ = correct_boundary_flux(self.mesh, g)
        return g

    def solve(self, data, method: str, nu: float, velocity=None, tol: float = 1e-10, solver: str = "auto",
              load: np.ndarray | None = None):
        if velocity is None:
            g = np.zeros((self.mesh.n_facets, 3))
        else:
            g = self.boundary_values(velocity)
        if load is None:
            load = p1_load(self.mesh, data, tq=self.tq)
        rhs = assemble_rhs(self.mesh, data, method, load=load)
        system = build_system(self.mesh, nu, rhs, g, stiffness=self.K, B_full=self.B)
        cached = self._systems.get("lu")
        if cached is not None:
            system._lu = cached
        u, p, report = solve(system, tol=tol, method=solver)
        if system._lu is not None:
            self._systems["lu"] = system._lu
        return u, p, report


# -- studies -----------------------------------------------------------------


@dataclass
class StudyConfig:
    example: int = 1
    method: str = "cr-rt"
    nu: float = 1.0
    mu: float = 0.4
    levels: int = 4
    phi_variant: int = 1
    h0: float = 0.5
    refinement: float = math.sqrt(2.0)
    omega: float = 1.5 * math.pi
    base_degree: int = 8
    subdivision_levels: int = 4
    tol: float = 1e-10
    solver: str = "auto"

    def __post_init__(self):
        self.method = self.method.lower()
        if self.levels < 2:
            raise ValueError("a study needs at least two levels")
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}")
        if self.example not in (1, 2):
            raise ValueError("example must be 1 or 2")
        if self.phi_variant not in (1, 2):
            raise ValueError("phi_variant must be 1 or 2")
        if not self.nu > 0:
            raise ValueError("nu must be positive")
        if self.refinement <= 1.0:
            raise ValueError("refinement factor must exceed 1")
        GradingConfig(h=self.h0, mu=self.mu, omega=self.omega)

    @property
    def quad(self) -> QuadratureConfig:
        return QuadratureConfig(self.base_degree, self.subdivision_levels)

    def mesh_sizes(self) -> list[float]:
        return [self.h0 / self.refinement**k for k in range(self.levels)]

    def case(self) -> ExactCase:
        return ExactCase(self.example, self.nu, solve_lambda(self.omega), self.phi_variant, self.omega)


@dataclass
class LevelResult:
    h: float
    ndof: int
    n_tets: int
    err_u_1h: float
    err_p_0: float
    eoc_u: float | None
    eoc_p: float | None
    max_dihedral_angle: float
    solver_iterations: int
    solver_residual: float
    wall_time: float


@dataclass
class StudyReport:
    config: dict
    levels: list[LevelResult]
    flags: dict
    version: str = __version__

    @property
    def passed(self) -> bool:
        return all(self.flags.values())

    def to_dict(self) -> dict:
        return {"version": self.version, "config": self.config,
                "levels": [asdict(lv) for lv in self.levels], "flags": self.flags}

    def to_json(self, timing: bool = True) -> str:
        d = self.to_dict()
        if not timing:
            for lv in d["levels"]:
                lv.pop("wall_time")
        return json.dumps(d, indent=2, sort_keys=True)

    def rows(self):
        for lv in self.levels:
            yield (lv.ndof, lv.err_u_1h, lv.eoc_u, lv.err_p_0, lv.eoc_p)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["ndof", "err_u", "eoc_u", "err_p", "eoc_p"])
        for nd, eu, ou, ep, op in self.rows():
            w.writerow([nd, f"{eu:.6e}", "" if ou is None else f"{ou:.4f}", f"{ep:.6e}",
                        "" if op is None else f"{op:.4f}"])
        return buf.getvalue()

    def to_markdown(self) -> str:
        c = self.config
        title = (f"example {c['example']}, {c['method'].upper()}, nu={c['nu']:g}, mu={c['mu']:g}"
                 + (f", phi_{c['phi_variant']}" if c["example"] == 2 else ""))
        lines = [f"**{title}**", "", "|    ndof | \\|u-u_h\\|_1,h |  eoc | \\|p-p_h\\|_0 |  eoc |",
                 "|--------:|-------------:|-----:|-----------:|-----:|"]
        for nd, eu, ou, ep, op in self.rows():
            fo = lambda v: "" if v is None else f"{v:.2f}"  # noqa: E731
            lines.append(f"| {nd:7d} | {eu:12.4e} | {fo(ou):>4} | {ep:10.4e} | {fo(op):>4} |")
        lines.append("")
        lines.append("flags: " + ", ".join(f"{k}={'pass' if v else 'FAIL'}" for k, v in self.flags.items()))
        return "\n".join(lines)

    def format(self, fmt: str) -> str:
        return {"json": self.to_json, "csv": self.to_csv, "md": self.to_markdown}[fmt]()


def summary_flags(cfg: StudyConfig, levels: list[LevelResult]) -> dict:
    eu = [lv.err_u_1h for lv in levels]
    ep = [lv.err_p_0 for lv in levels]
    flags = {
        "velocity_error_decreases": all(b < a for a, b in zip(eu, eu[1:])),
        "pressure_error_decreases": all(b < a for a, b in zip(ep, ep[1:])),
    }
    lam = solve_lambda(cfg.omega).lam
    if cfg.mu < lam:
        flags["velocity_rate_optimal"] = levels[-1].eoc_u >= 0.90
        flags["pressure_rate_optimal"] = levels[-1].eoc_p >= 1.00
    return flags


def run_level(cfg: StudyConfig, h: float, case: ExactCase, data=None):
    t0 = time.perf_counter()
    gcfg = GradingConfig(h=h, mu=cfg.mu, omega=cfg.omega)
    mesh = build_mesh(gcfg)
    disc = Discretization(mesh, cfg.quad)
    u, p, report = disc.solve(data or case.data, cfg.method, cfg.nu, case.velocity, cfg.tol, cfg.solver)
    eu = error_velocity_h1(mesh, u, case.velocity_gradient, tq=disc.tq)
    ep = error_pressure_l2(mesh, p, case.pressure, tq=disc.tq)
    q = mesh_quality(mesh)
    return LevelResult(h, disc.ndof, mesh.n_tets, eu, ep, None, None, q.max_dihedral_angle,
                       report.iterations, report.residual, time.perf_counter() - t0)


class StudyError(RuntimeError):
    """A level failed; ``report`` holds the levels completed before it."""

    def __init__(self, message: str, report: StudyReport):
        super().__init__(message)
        self.report = report


def run_study(cfg: StudyConfig, progress=None) -> StudyReport:
    case = cfg.case()
    results: list[LevelResult] = []
    for h in cfg.mesh_sizes():
        try:
            lv = run_level(cfg, h, case)
        except Exception as exc:
            partial = StudyReport(asdict(cfg), results, {})
            raise StudyError(f"level h={h:.4f} failed: {type(exc).__name__}: {exc}", partial) from exc
        if results:
            eu = compute_eoc([results[-1].err_u_1h, lv.err_u_1h], [results[-1].ndof, lv.ndof])[0]
            ep = compute_eoc([results[-1].err_p_0, lv.err_p_0], [results[-1].ndof, lv.ndof])[0]
            lv.eoc_u, lv.eoc_p = eu, ep
        results.append(lv)
        log.info("level h=%.4f ndof=%d err_u=%.4e err_p=%.4e (%.1fs)", h, lv.ndof, lv.err_u_1h, lv.err_p_0, lv.wall_time)
        if progress is not None:
            progress(lv)
    return StudyReport(asdict(cfg), results, summary_flags(cfg, results))


# -- inf-sup and invariance ----------------------------------------------------


def estimate_infsup(mesh: TetMesh, tol: float = 1e-8, max_iter: int = 500, block: int = 6, seed: int = 0,
                    dense: bool = False) -> float:
    """Discrete inf-sup constant of CR/P0 with homogeneous velocity dofs.

    Smallest nonzero eigenvalue ``beta^2`` of ``B A^-1 B^T q = beta^2 M q`` with
    ``A`` the unit-viscosity CR Laplacian and ``M`` the P0 mass, on zero-mean
    pressures.  The spectrum of ``M^-1 S`` lies in ``[beta^2, 3]``, so LOBPCG
    preconditioned by ``M^-1`` converges quickly; ``dense=True`` uses a full
    generalized eigensolve instead (small meshes only).
    """
    system = build_system(mesh, 1.0, np.zeros(3 * mesh.n_facets))
    vol = mesh.volumes
    nt = mesh.n_tets
    B = system.B

    def schur(Q):
        Q = np.asarray(Q).reshape(nt, -1)
        out = np.empty_like(Q)
        for j in range(Q.shape[1]):
            out[:, j] = B @ system.solve_a(B.T @ Q[:, j])
        return out

    if dense:
        if nt > 4000:
            raise ValueError(f"mesh too large for the dense inf-sup estimate ({nt} pressure dofs)")
        S = schur(np.eye(nt))
        S = 0.5 * (S + S.T)
        evals = scipy.linalg.eigh(S, np.diag(vol), eigvals_only=True)
        return float(math.sqrt(max(evals[1], 0.0)))
    k = min(block, nt - 2)
    S_op = spla.LinearOperator((nt, nt), matvec=schur, matmat=schur, dtype=float)
    M_op = sp.diags(vol)
    P_op = sp.diags(1.0 / vol)
    X = np.random.default_rng(seed).standard_normal((nt, k))
    vals, _, hist = spla.lobpcg(S_op, X, B=M_op, M=P_op, Y=np.ones((nt, 1)), tol=tol, maxiter=max_iter,
                                largest=False, retResidualNormsHistory=True)
    if np.max(hist[-1][:1]) > 10 * tol * max(1.0, float(vals.max())):
        raise ArithmeticError(f"inf-sup eigen solve did not converge (residual {np.max(hist[-1][:1]):.2e})")
    return float(math.sqrt(max(float(np.min(vals)), 0.0)))


@dataclass
class InvarianceResult:
    method: str
    deviation: float
    norm: float


def gradient_invariance_test(mesh: TetMesh, method: str, potential: str = "x2+y2", nu: float = 1.0,
                             quad: QuadratureConfig | None = None, tol: float = 1e-12) -> InvarianceResult:
    """Max relative change of the velocity dofs when ``grad(phi)`` is added to the data."""
    quad = quad or QuadratureConfig(base_degree=4, edge_subdivision_levels=0)
    disc = Discretization(mesh, quad)
    base = PolynomialCase(nu, False, potential)
    pert = PolynomialCase(nu, True, potential)
    u0, _, _ = disc.solve(base.data, method, nu, tol=tol)
    u1, _, _ = disc.solve(pert.data, method, nu, tol=tol)
    scale = np.abs(u0).max()
    return InvarianceResult(method, float(np.abs(u1 - u0).max() / scale), float(scale))
