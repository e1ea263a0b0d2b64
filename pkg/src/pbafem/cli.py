"""Command line interface.

    pbafem verify-grid --grid square|cube5|cube6 --n N
    pbafem solve|adapt|reference-solve|convergence-study [--config FILE] [--set key=value ...] [--out DIR]

Exit codes: 0 success, 1 usage or configuration error, 2 a grid assumption or
verification failed, 3 the solver failed.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .adapt import MarkingConfig, Problem, StopCriteria, afem_loop
from .assembly import assemble_stiffness, check_A1, error_norms
from .errors import AssumptionError, ConfigError, MeshError, ModelError, OverflowGuardError, SolverError
from .estimator import estimate
from .geometry import (CircleInterface, DielectricModel, DomainBox, PolygonInterface, check_sigma, make_charges,
                       read_charges)
from .io import load_config, parse_value, write_csv, write_history_csv, write_trace_csv, write_vtk
from .mesh import (assign_regions, build_cube_5tet_grid, build_cube_6tet_grid, build_square_grid,
                   uniform_refine)
from .problems import manufactured_problem
from .solver import SolveConfig, solve_rpbe

log = logging.getLogger("pbafem")

EXIT_OK, EXIT_CONFIG, EXIT_ASSUMPTION, EXIT_SOLVER = 0, 1, 2, 3

GRIDS = {"square": (2, build_square_grid), "cube5": (3, build_cube_5tet_grid), "cube6": (3, build_cube_6tet_grid)}


@dataclasses.dataclass
class RunConfig:
    dimension: int = 2
    box: list = dataclasses.field(default_factory=lambda: [[-2.0, -2.0], [2.0, 2.0]])
    grid: str = "square"
    n: int = 16
    interface: str = "circle"  # "circle" (sphere in 3D) or "polygon"
    center: list = dataclasses.field(default_factory=lambda: [0.0, 0.0])
    radius: float = 0.5
    polygon_file: str | None = None
    charge_file: str | None = None
    charges: list = dataclasses.field(default_factory=lambda: [[0.0, 0.0, 50.0]])  # used without charge_file
    eps_m: float = 2.0
    eps_s: float = 80.0
    kappa: float = 1.0
    sigma: float = 0.1
    snap: bool = False
    tol: float = 1e-10
    max_newton: int = 50
    linear_method: str = "pcg"
    theta1: float = 0.5
    theta2: float = 0.8
    switch_constant: float = 1.0
    depth: int = 3
    max_iterations: int = 25
    eta_tol: float = 1e-4
    max_dofs: int = 200_000
    reference_levels: int = 2
    n0: int = 8  # convergence study: coarsest grid
    levels: int = 5  # convergence study: number of grids
    vtk_each_iteration: bool = False
    out: str = "pbafem_out"
    seed: int = 0
    base_dir: str = "."

    @classmethod
    def from_dict(cls, values: dict, base_dir=".") -> "RunConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(values) - names)
        if unknown:
            raise ConfigError(f"unknown configuration key(s): {', '.join(unknown)}")
        cfg = cls(**{**values, "base_dir": str(base_dir)})
        cfg.validate()
        return cfg

    def validate(self):
        def need(cond, msg):
            if not cond:
                raise ConfigError(msg)

        for name in ("dimension", "n", "max_newton", "depth", "max_iterations", "max_dofs", "reference_levels",
                     "n0", "levels", "seed"):
            v = getattr(self, name)
            need(isinstance(v, int) and not isinstance(v, bool), f"{name} must be an integer, got {v!r}")
        for name in ("radius", "eps_m", "eps_s", "kappa", "sigma", "tol", "theta1", "theta2", "switch_constant",
                     "eta_tol"):
            v = getattr(self, name)
            need(isinstance(v, (int, float)) and not isinstance(v, bool) and math.isfinite(v),
                 f"{name} must be a finite number, got {v!r}")
            setattr(self, name, float(v))
        need(self.dimension in (2, 3), "dimension must be 2 or 3")
        need(self.grid in GRIDS, f"grid must be one of {sorted(GRIDS)}")
        need(GRIDS[self.grid][0] == self.dimension, f"grid {self.grid!r} does not match dimension {self.dimension}")
        need(self.n >= 1 and self.n0 >= 1 and self.levels >= 2, "grid sizes must be positive and levels >= 2")
        for name in ("eps_m", "eps_s", "radius", "sigma", "tol"):
            need(getattr(self, name) > 0, f"{name} must be positive")
        need(self.kappa >= 0, "kappa must be nonnegative")
        need(0 < self.theta1 < 1 and 0 < self.theta2 < 1, "theta1 and theta2 must lie in (0, 1)")
        need(self.interface in ("circle", "polygon"), "interface must be 'circle' or 'polygon'")
        need(self.linear_method in ("pcg", "direct", "dense"), "linear_method must be pcg, direct or dense")
        try:
            box = np.asarray(self.box, dtype=float)
            center = np.asarray(self.center, dtype=float)
        except (TypeError, ValueError):
            raise ConfigError("box and center must be numeric lists") from None
        need(box.shape == (2, self.dimension), f"box must be [[lower...], [upper...]] with {self.dimension} entries")
        need(center.shape == (self.dimension,), "center has the wrong dimension")
        if self.interface == "polygon":
            need(self.dimension == 2, "polygon interfaces are two dimensional")
            need(self.polygon_file is not None, "polygon interface needs polygon_file")
            need(self.resolve(self.polygon_file).is_file(), f"polygon file not found: {self.polygon_file}")
        if self.charge_file is not None:
            need(self.resolve(self.charge_file).is_file(), f"charge file not found: {self.charge_file}")
        else:
            rows = self.charges
            need(isinstance(rows, (list, tuple)) and all(isinstance(r, (list, tuple)) and len(r) == self.dimension + 1
                                                         for r in rows),
                 f"charges must be a list of [x, y{', z' if self.dimension == 3 else ''}, q] rows")

    def resolve(self, path) -> Path:
        p = Path(path)
        return p if p.is_absolute() else Path(self.base_dir) / p

    # -- builders ---------------------------------------------------------

    def domain(self):
        return DomainBox(self.box[0], self.box[1])

    def interface_geometry(self):
        if self.interface == "polygon":
            try:
                verts = np.loadtxt(self.resolve(self.polygon_file), ndmin=2)
            except ValueError as exc:
                raise ConfigError(f"cannot parse polygon file: {exc}") from None
            return PolygonInterface(verts)
        return CircleInterface(self.center, self.radius)

    def charge_system(self):
        if self.charge_file is not None:
            return read_charges(self.resolve(self.charge_file), self.dimension, self.eps_m, self.sigma)
        rows = np.asarray(self.charges, dtype=float)
        return make_charges(rows[:, :-1], rows[:, -1], eps_m=self.eps_m, sigma=self.sigma)

    def problem(self) -> Problem:
        box = self.domain()
        ig = self.interface_geometry()
        if not ig.within(box):
            raise ConfigError("the interface must lie strictly inside the box")
        cs = self.charge_system()
        check_sigma(cs, ig)
        dm = DielectricModel.from_kappa(self.eps_m, self.eps_s, self.kappa)
        mesh = assign_regions(GRIDS[self.grid][1](self.n, box), ig, snap=self.snap)
        return Problem(mesh, dm, cs, self.kappa, interface=ig, snap=self.snap)

    def solve_config(self, verbose=False):
        return SolveConfig(tol=self.tol, max_newton=self.max_newton, linear_method=self.linear_method,
                           verbose=verbose)

    def marking(self):
        return MarkingConfig(self.theta1, self.theta2, self.switch_constant, self.depth)

    def stop(self):
        return StopCriteria(self.max_iterations, self.eta_tol, self.max_dofs)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(f"{self.prog}: {message}")


def build_parser():
    common = _Parser(add_help=False)
    common.add_argument("--config", help="flat key = value configuration file")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override a configuration entry (repeatable)")
    common.add_argument("--out", help="output directory (overrides 'out')")
    common.add_argument("--verbose", action="store_true", help="log solver progress")
    common.add_argument("--fast", action="store_true",
                        help="sparse direct linear solves; results may differ in the last bits between machines")
    parser = _Parser(prog="pbafem", description="Adaptive P1 finite elements for the regularized "
                                                "Poisson-Boltzmann equation.")
    parser.add_argument("--version", action="version", version=f"pbafem {__version__}")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    g = sub.add_parser("verify-grid", parents=[common], help="check the stiffness sign conditions of a grid")
    g.add_argument("--grid", choices=sorted(GRIDS))
    g.add_argument("--n", type=int)
    sub.add_parser("solve", parents=[common], help="solve on the initial mesh")
    sub.add_parser("adapt", parents=[common], help="run the adaptive loop")
    sub.add_parser("convergence-study", parents=[common], help="manufactured-solution error table")
    sub.add_parser("reference-solve", parents=[common], help="solve on uniformly refined meshes")
    return parser


def load_run_config(args) -> RunConfig:
    values, base = {}, "."
    if args.config:
        values = load_config(args.config)
        base = str(Path(args.config).resolve().parent)
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        key, value = item.split("=", 1)
        values[key.strip()] = parse_value(value)
    if args.out:
        values["out"] = args.out
    if getattr(args, "grid", None):
        values["grid"] = args.grid
        values["dimension"] = GRIDS[args.grid][0]
        values.setdefault("box", [[0.0] * values["dimension"], [1.0] * values["dimension"]])
        values.setdefault("center", [0.5] * values["dimension"])
        values.setdefault("radius", 0.25)
        values.setdefault("charges", [[0.5] * values["dimension"] + [1.0]])
    if getattr(args, "n", None) is not None:
        values["n"] = args.n
    if args.fast:
        values["linear_method"] = "direct"
    return RunConfig.from_dict(values, base)


def _outdir(cfg: RunConfig) -> Path:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _report(**items):
    print(" ".join(f"{k}={v}" for k, v in items.items()))


# ----------------------------------------------------------------------------
# subcommands


def cmd_verify_grid(cfg: RunConfig, args) -> int:
    dim, builder = GRIDS[cfg.grid]
    mesh = builder(cfg.n, cfg.domain())
    rep = check_A1(assemble_stiffness(mesh, DielectricModel(1.0, 1.0)), mesh)
    required = "A1" if dim == 3 else "A1'"
    ok = rep.a1_pass if dim == 3 else rep.a1prime_pass
    _report(grid=cfg.grid, n=cfg.n, dim=dim, elements=mesh.n_elements, vertices=mesh.n_vertices)
    _report(check="A1", status="pass" if rep.a1_pass else "fail", rho=f"{rep.rho:.6g}",
            zero_pairs=rep.n_zero_pairs, positive_pairs=rep.n_positive_pairs, pairs=rep.n_pairs)
    _report(check="A1'", status="pass" if rep.a1prime_pass else "fail", max_offdiag=f"{rep.max_offdiag:.6g}")
    _report(required=required, result="pass" if ok else "fail")
    if args.out:
        write_csv(_outdir(cfg) / "verify_grid.csv",
                  ("grid", "n", "rho", "a1", "a1prime", "pairs", "zero_pairs", "positive_pairs", "max_offdiag"),
                  [[cfg.grid, cfg.n, repr(rep.rho), int(rep.a1_pass), int(rep.a1prime_pass), rep.n_pairs,
                    rep.n_zero_pairs, rep.n_positive_pairs, repr(rep.max_offdiag)]])
    return EXIT_OK if ok else EXIT_ASSUMPTION


def _snapshot(path, mesh, u, est=None):
    cell = {"region": mesh.region}
    if est is not None:
        cell["eta_sq"] = est.eta_sq
        cell["osc_sq"] = est.osc_sq
    write_vtk(path, mesh, {"u": u}, cell)


def cmd_solve(cfg: RunConfig, args) -> int:
    p = cfg.problem()
    bundle = solve_rpbe(p.mesh, p.dm, p.cs, p.kappa, cfg.solve_config(args.verbose), system=p.system())
    est = estimate(p.mesh, p.dm, p.cs, bundle.u, bundle.system.quad, data=bundle.system.data)
    out = _outdir(cfg)
    _snapshot(out / "solution.vtk", p.mesh, bundle.u, est)
    write_trace_csv(out / "newton_trace.csv", bundle.trace)
    rep = check_A1(bundle.system.A, p.mesh)
    _report(dofs=bundle.system.dofs.n_free, newton=bundle.iterations, residual=f"{bundle.residual:.3e}",
            energy=repr(bundle.energy), eta_sq=repr(est.eta_global_sq), osc_sq=repr(est.osc_global_sq))
    _report(a1="pass" if rep.a1_pass else "fail", a1prime="pass" if rep.a1prime_pass else "fail")
    return EXIT_OK


def cmd_adapt(cfg: RunConfig, args) -> int:
    if cfg.dimension != 2:
        raise ConfigError("adaptive refinement is available for two dimensional meshes only")
    p = cfg.problem()
    out = _outdir(cfg)

    def snapshot(k, mesh, u, est):
        if cfg.vtk_each_iteration:
            _snapshot(out / f"afem_{k:03d}.vtk", mesh, u, est)

    hist = afem_loop(p, cfg.marking(), cfg.stop(), solve_cfg=cfg.solve_config(args.verbose), callback=snapshot)
    write_history_csv(out / "history.csv", hist)
    _snapshot(out / "final.vtk", hist.meshes[-1], hist.solutions[-1], hist.estimates[-1])
    for r in hist.records:
        _report(k=r.k, dofs=r.dofs, eta_sq=f"{r.eta_sq:.6e}", osc_sq=f"{r.osc_sq:.6e}", energy=repr(r.energy),
                marked1=r.marked1, marked2=r.marked2, switch=int(r.switch))
    _report(stop=hist.stop_reason, iterations=len(hist))
    return EXIT_OK


def cmd_convergence_study(cfg: RunConfig, args) -> int:
    out = _outdir(cfg)
    scfg = cfg.solve_config(args.verbose)
    rows, prev = [], None
    for level in range(cfg.levels):
        n = cfg.n0 * 2**level
        problem, exact, grad = manufactured_problem(n)
        b = solve_rpbe(problem.mesh, problem.dm, problem.cs, 0.0, scfg, source=problem.source)
        l2, h1 = error_norms(problem.mesh, b.u, exact, grad)
        h = 1.0 / n
        o2 = o1 = ""
        if prev is not None:
            o2 = repr(math.log(prev[1] / l2) / math.log(prev[0] / h))
            o1 = repr(math.log(prev[2] / h1) / math.log(prev[0] / h))
        rows.append([level, repr(h), b.system.dofs.n_free, repr(l2), repr(h1), o2, o1])
        _report(h=f"1/{n}", dofs=b.system.dofs.n_free, l2=f"{l2:.4e}", h1=f"{h1:.4e}",
                l2_order=o2 and f"{float(o2):.3f}", h1_order=o1 and f"{float(o1):.3f}")
        prev = (h, l2, h1)
    write_csv(out / "convergence.csv", ("level", "h", "dofs", "l2_error", "h1_error", "l2_order", "h1_order"), rows)
    return EXIT_OK


def cmd_reference_solve(cfg: RunConfig, args) -> int:
    p = cfg.problem()
    if cfg.dimension != 2 and cfg.reference_levels:
        raise ConfigError("uniform refinement is available for two dimensional meshes only")
    mesh = uniform_refine(p.mesh, cfg.reference_levels) if cfg.reference_levels else p.mesh
    bundle = solve_rpbe(mesh, p.dm, p.cs, p.kappa, cfg.solve_config(args.verbose))
    out = _outdir(cfg)
    _snapshot(out / "reference.vtk", mesh, bundle.u)
    write_csv(out / "reference.csv", ("levels", "elements", "dofs", "energy", "residual"),
              [[cfg.reference_levels, mesh.n_elements, bundle.system.dofs.n_free, repr(bundle.energy),
                repr(bundle.residual)]])
    _report(levels=cfg.reference_levels, dofs=bundle.system.dofs.n_free, energy=repr(bundle.energy))
    return EXIT_OK


COMMANDS = {"verify-grid": cmd_verify_grid, "solve": cmd_solve, "adapt": cmd_adapt,
            "convergence-study": cmd_convergence_study, "reference-solve": cmd_reference_solve}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        if args.command is None:
            raise ConfigError("missing subcommand; see pbafem --help")
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(name)s: %(message)s", stream=sys.stderr)
        cfg = load_run_config(args)
        return COMMANDS[args.command](cfg, args)
    except (ConfigError, ModelError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except AssumptionError as exc:
        print(f"assumption failed: {exc}", file=sys.stderr)
        return EXIT_ASSUMPTION
    except (SolverError, OverflowGuardError) as exc:
        print(f"solver failed: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except MeshError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
