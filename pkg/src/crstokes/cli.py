"""Command-line interface: ``crstokes {mesh,solve,study,verify}``.

Option precedence is command-line flag, then the ``--config`` file (JSON or
TOML, keys named like the long flags with dashes or underscores), then the
built-in defaults.  The thread count falls back to ``CRSTOKES_THREADS``.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
import time
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path

from . import __version__

log = logging.getLogger("crstokes")

THREAD_ENV = "CRSTOKES_THREADS"
_THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS")


@dataclass
class RunManifest:
    command: str
    config: dict
    version: str = __version__
    timestamp: str = field(default_factory=lambda: datetime.now(timezone.utc).isoformat(timespec="seconds"))
    outputs: list[str] = field(default_factory=list)
    timings: dict = field(default_factory=dict)

    def write(self, path: Path) -> Path:
        path.write_text(json.dumps(asdict(self), indent=2, sort_keys=True) + "\n")
        return path


def load_config(path: str | None) -> dict:
    if not path:
        return {}
    p = Path(path)
    text = p.read_text()
    if p.suffix.lower() == ".toml":
        try:
            import tomllib
        except ModuleNotFoundError:  # Python < 3.11
            import tomli as tomllib
        data = tomllib.loads(text)
    else:
        data = json.loads(text)
    if not isinstance(data, dict):
        raise ValueError("config file must hold a table/object of option values")
    return {k.replace("-", "_"): v for k, v in data.items()}


def configure_threads(n: int | None) -> int | None:
    """Cap BLAS/OpenMP threads; must run before numpy-heavy imports to take full effect."""
    if n is None:
        env = os.environ.get(THREAD_ENV)
        n = int(env) if env else None
    if n is not None:
        if n < 1:
            raise ValueError("thread count must be positive")
        for var in _THREAD_VARS:
            os.environ[var] = str(n)
    return n


def _positive(kind):
    def parse(text):
        value = kind(text)
        if not value > 0:
            raise argparse.ArgumentTypeError(f"must be positive, got {text}")
        return value

    return parse


def _add_common(p: argparse.ArgumentParser):
    p.add_argument("--config", help="JSON or TOML file with option values")
    p.add_argument("--threads", type=int, help=f"thread count (fallback: ${THREAD_ENV})")
    p.add_argument("-v", "--verbose", action="count", default=0)


def _add_grading(p: argparse.ArgumentParser, h_default: float | None = 0.25, mu_default: float = 1.0):
    p.add_argument("--mu", type=float, default=mu_default, help="grading parameter in (0, 1]")
    p.add_argument("--omega", type=float, default=1.5 * math.pi, help="opening angle in (pi, 2 pi)")
    p.add_argument("--big-r", type=float, default=1.0, help="radius of the refinement zone")
    p.add_argument("--z-len", type=float, default=1.0)
    p.add_argument("--size-constant", type=float, default=2.0)
    if h_default is not None:
        p.add_argument("--h", type=float, default=h_default, help="target mesh size")


def _add_discretization(p: argparse.ArgumentParser):
    p.add_argument("--example", type=int, choices=(1, 2), default=1)
    p.add_argument("--method", choices=("cr", "cr-rt", "cr-bdm"), default="cr-rt")
    p.add_argument("--nu", type=_positive(float), default=1.0)
    p.add_argument("--phi", type=int, choices=(1, 2), default=1, help="gradient perturbation of example 2")
    p.add_argument("--quad-degree", type=int, default=8, help="base quadrature degree")
    p.add_argument("--subdiv", type=int, default=4, help="geometric subdivision levels near the axis")
    p.add_argument("--tol", type=float, default=1e-10, help="relative solver residual")
    p.add_argument("--solver", choices=("auto", "direct", "schur"), default="auto")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="crstokes", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("mesh", help="generate a graded mesh, write VTK and a quality report")
    _add_grading(p)
    p.add_argument("--out", default="mesh", help="output prefix")
    _add_common(p)

    p = sub.add_parser("solve", help="single solve; writes the solution (VTK) and its errors (JSON)")
    _add_grading(p)
    _add_discretization(p)
    p.add_argument("--out", default="solution", help="output prefix")
    p.add_argument("--dump-system", action="store_true", help="also write the system in Matrix Market format")
    _add_common(p)

    p = sub.add_parser("study", help="convergence study over a mesh family")
    _add_grading(p, h_default=None, mu_default=0.4)
    _add_discretization(p)
    p.add_argument("--levels", type=int, default=4)
    p.add_argument("--h0", type=float, default=0.5, help="coarsest mesh size")
    p.add_argument("--refinement", type=float, default=math.sqrt(2.0), help="mesh size ratio between levels")
    p.add_argument("--format", choices=("json", "csv", "md"), default="json")
    p.add_argument("--out", default="study", help="output prefix")
    _add_common(p)

    p = sub.add_parser("verify", help="run the property suite, print JSON")
    p.add_argument("--quick", action="store_true", help="reduced sizes (under a minute)")
    p.add_argument("--out", help="also write the JSON summary here")
    p.add_argument("--inject-fault", choices=("pressure-sign",), help=argparse.SUPPRESS)
    _add_common(p)
    return parser


def parse_args(argv=None) -> argparse.Namespace:
    parser = build_parser()
    args = parser.parse_args(argv)
    cfg = load_config(args.config)
    if cfg:
        subparser = parser._subparsers._group_actions[0].choices[args.command]
        known = {a.dest for a in subparser._actions}
        unknown = sorted(set(cfg) - known)
        if unknown:
            parser.error(f"unknown config keys: {', '.join(unknown)}")
        subparser.set_defaults(**cfg)
        args = parser.parse_args(argv)
    args._parser = parser
    return args


def _grading(args):
    from .mesh import GradingConfig

    return GradingConfig(h=args.h, mu=args.mu, big_r=args.big_r, omega=args.omega, z_len=args.z_len,
                         size_constant=args.size_constant)


def cmd_mesh(args) -> int:
    from .mesh import build_mesh, mesh_quality
    from .vtk import write_vtk

    cfg = _grading(args)
    t0 = time.perf_counter()
    mesh = build_mesh(cfg)
    report = mesh_quality(mesh, cfg)
    prefix = Path(args.out)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    vtk = write_vtk(mesh, prefix.with_name(prefix.name + ".vtk"), cell_data={"r_T": mesh.axis_distance()},
                    title=f"graded sector mesh h={cfg.h:g} mu={cfg.mu:g}")
    quality = prefix.with_name(prefix.name + "_quality.json")
    quality.write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")
    manifest = RunManifest("mesh", asdict(cfg), outputs=[str(vtk), str(quality)],
                           timings={"total": time.perf_counter() - t0})
    manifest.write(prefix.with_name(prefix.name + "_manifest.json"))
    print(json.dumps(report.to_dict(), sort_keys=True))
    return 0


def cmd_solve(args) -> int:
    from .mesh import build_mesh
    from .quadrature import QuadratureConfig
    from .singular import ExactCase
    from .solver import build_system, dump_system
    from .study import Discretization, error_pressure_l2, error_velocity_h1
    from .vtk import write_solution

    cfg = _grading(args)
    t0 = time.perf_counter()
    mesh = build_mesh(cfg)
    case = ExactCase(args.example, args.nu, phi_variant=args.phi, omega=args.omega)
    disc = Discretization(mesh, QuadratureConfig(args.quad_degree, args.subdiv))
    u, p, report = disc.solve(case.data, args.method, args.nu, case.velocity, args.tol, args.solver)
    result = {
        "ndof": disc.ndof,
        "err_u_1h": error_velocity_h1(mesh, u, case.velocity_gradient, tq=disc.tq),
        "err_p_0": error_pressure_l2(mesh, p, case.pressure, tq=disc.tq),
        "solver": asdict(report),
    }
    prefix = Path(args.out)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    outputs = [str(write_solution(mesh, u, p, prefix.with_name(prefix.name + ".vtk")))]
    res_path = prefix.with_name(prefix.name + "_errors.json")
    res_path.write_text(json.dumps(result, indent=2, sort_keys=True) + "\n")
    outputs.append(str(res_path))
    if args.dump_system:
        from .fem import assemble_rhs, p1_load

        rhs = assemble_rhs(mesh, case.data, args.method, load=p1_load(mesh, case.data, tq=disc.tq))
        system = build_system(mesh, args.nu, rhs, disc.boundary_values(case.velocity), disc.K, disc.B)
        outputs += [str(x) for x in dump_system(system, prefix)]
    config = {k: v for k, v in vars(args).items() if not k.startswith("_")}
    RunManifest("solve", config, outputs=outputs, timings={"total": time.perf_counter() - t0}).write(
        prefix.with_name(prefix.name + "_manifest.json"))
    print(json.dumps(result, sort_keys=True))
    return 0


def cmd_study(args) -> int:
    from .study import StudyConfig, StudyError, run_study

    cfg = StudyConfig(example=args.example, method=args.method, nu=args.nu, mu=args.mu, levels=args.levels,
                      phi_variant=args.phi, h0=args.h0, refinement=args.refinement, omega=args.omega,
                      base_degree=args.quad_degree, subdivision_levels=args.subdiv, tol=args.tol,
                      solver=args.solver)
    t0 = time.perf_counter()
    prefix = Path(args.out)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    try:
        report = run_study(cfg, progress=lambda lv: log.info("ndof %d done in %.1fs", lv.ndof, lv.wall_time))
    except StudyError as exc:
        partial = prefix.with_name(prefix.name + "_partial.json")
        partial.write_text(exc.report.to_json(timing=False) + "\n")
        print(f"error: {exc} (partial report: {partial})", file=sys.stderr)
        return 1
    path = prefix.with_name(prefix.name + "." + args.format)
    text = report.to_json(timing=False) if args.format == "json" else report.format(args.format)
    path.write_text(text if text.endswith("\n") else text + "\n")
    RunManifest("study", asdict(cfg), outputs=[str(path)],
                timings={"total": time.perf_counter() - t0,
                         "levels": [lv.wall_time for lv in report.levels]}).write(
        prefix.with_name(prefix.name + "_manifest.json"))
    print(report.to_markdown())
    return 0 if report.passed else 1


def cmd_verify(args) -> int:
    import contextlib

    from .checks import inject_pressure_sign_error, results_to_dict, run_checks

    hook = inject_pressure_sign_error() if args.inject_fault == "pressure-sign" else contextlib.nullcontext()
    with hook:
        summary = results_to_dict(run_checks(quick=args.quick))
    text = json.dumps(summary, indent=2, sort_keys=True, default=float)
    if args.out:
        Path(args.out).write_text(text + "\n")
    print(text)
    if not summary["passed"]:
        print("failed: " + ", ".join(summary["failed"]), file=sys.stderr)
        return 1
    return 0


COMMANDS = {"mesh": cmd_mesh, "solve": cmd_solve, "study": cmd_study, "verify": cmd_verify}


def main(argv=None) -> int:
    args = parse_args(argv)
    parser = args._parser
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    try:
        configure_threads(args.threads)
    except ValueError as exc:
        parser.error(str(exc))
    if args.command == "study" and args.levels < 2:
        parser.error("--levels must be at least 2")
    if hasattr(args, "tol") and not 0.0 < args.tol <= 1e-6:
        parser.error("--tol must lie in (0, 1e-6]")
    try:
        return COMMANDS[args.command](args)
    except ValueError as exc:  # invalid configuration values
        parser.error(str(exc))
    except Exception as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
