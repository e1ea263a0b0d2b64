"""Linear solves, damped Newton minimization of the discrete energy, and L-infinity bounds."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .assembly import FemSystem
from .errors import OverflowGuardError, SolverError
from .geometry import ChargeSystem, DielectricModel, eval_G
from .mesh import Mesh

log = logging.getLogger(__name__)


@dataclass
class SolveConfig:
    tol: float = 1e-10  # absolute, 2-norm of the free-dof residual
    max_newton: int = 50
    backtrack: float = 0.5
    max_halvings: int = 30
    linear_tol: float = 1e-12  # relative
    linear_maxiter: int | None = None
    linear_method: str = "pcg"  # "pcg", "direct" or "dense"
    verbose: bool = False

    def __post_init__(self):
        for name in ("tol", "max_newton", "backtrack", "max_halvings", "linear_tol"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if not 0 < self.backtrack < 1:
            raise ValueError("backtrack factor must lie in (0, 1)")
        if self.linear_method not in ("pcg", "direct", "dense"):
            raise ValueError(f"unknown linear method {self.linear_method!r}")


@dataclass
class NewtonStep:
    iteration: int
    residual: float
    step: float
    energy: float


@dataclass
class SolutionBundle:
    u: np.ndarray  # full vertex vector of the regularized solution
    trace: list
    system: FemSystem
    u_l: np.ndarray | None = None
    u_n: np.ndarray | None = None
    split_discrepancy: float | None = None

    @property
    def energy(self):
        return self.trace[-1].energy

    @property
    def iterations(self):
        return self.trace[-1].iteration

    @property
    def residual(self):
        return self.trace[-1].residual


@dataclass
class LInftyBounds:
    alpha: float
    beta: float
    alpha_prime: float
    beta_prime: float
    sup_solvent: float  # sup of u^l + G over the solvent samples
    inf_solvent: float
    sup_boundary: float  # sup of g - G over boundary vertices
    inf_boundary: float
    extras: dict = field(default_factory=dict)


def pcg(A, b, tol=1e-12, maxiter=None, M_diag=None):
    """Jacobi-preconditioned conjugate gradients; returns ``(x, iterations)``.

    Stops when ``||r|| <= tol * ||b||``.  Raises :class:`SolverError` on
    non-positive curvature or when ``maxiter`` is exhausted.
    """
    A = sp.csr_matrix(A)
    n = A.shape[0]
    b = np.asarray(b, float)
    x = np.zeros(n)
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return x, 0
    diag = A.diagonal() if M_diag is None else M_diag
    if np.any(diag <= 0):
        raise SolverError("operator has a non-positive diagonal entry; not SPD")
    inv_d = 1.0 / diag
    maxiter = maxiter or max(100, 10 * n)
    r = b.copy()
    z = inv_d * r
    p = z.copy()
    rz = r @ z
    for k in range(1, maxiter + 1):
        Ap = A @ p
        curv = p @ Ap
        if curv <= 0:
            raise SolverError(f"negative curvature {curv:.3g} in CG at iteration {k}")
        alpha = rz / curv
        x += alpha * p
        r -= alpha * Ap
        if np.linalg.norm(r) <= tol * bnorm:
            return x, k
        z = inv_d * r
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
    raise SolverError(f"CG did not reach relative residual {tol:g} in {maxiter} iterations")


def solve_linear(op, rhs, cfg: SolveConfig | None = None):
    """Solve the SPD system ``op x = rhs``."""
    cfg = cfg or SolveConfig()
    rhs = np.asarray(rhs, float)
    if rhs.size == 0:
        return rhs.copy()
    if cfg.linear_method == "dense" or (cfg.linear_method == "direct" and rhs.size < 2000):
        dense = op.toarray() if sp.issparse(op) else np.asarray(op, float)
        return np.linalg.solve(dense, rhs)
    if cfg.linear_method == "direct":
        return spla.spsolve(sp.csc_matrix(op), rhs)
    x, _ = pcg(op, rhs, cfg.linear_tol, cfg.linear_maxiter)
    return x


def _energy_slack(E):
    return 1e-13 * max(1.0, abs(E))


def newton(system: FemSystem, u0, cfg: SolveConfig | None = None, shift=None, with_fG=True):
    """Minimize the discrete energy by Newton's method with backtracking.

    A step is accepted when it does not increase the energy.  Once the energy
    change drops below round-off, a step that lowers the residual norm is
    accepted as well.  Returns ``(u, trace)``.
    """
    cfg = cfg or SolveConfig()
    free = system.free
    u = np.array(u0, dtype=float)

    def state(v):
        E = system.energy(v, shift, with_fG)
        r = system.residual(v, shift, with_fG)
        return E, r

    E, r = state(u)
    rn = float(np.linalg.norm(r))
    trace = [NewtonStep(0, rn, 0.0, E)]
    if cfg.verbose:
        log.info("newton %3d residual %.3e energy %.15g", 0, rn, E)
    for it in range(1, cfg.max_newton + 1):
        if rn <= cfg.tol:
            break
        J = system.jacobian(u, shift)
        du = solve_linear(J, -r, cfg)
        t = 1.0
        for _ in range(cfg.max_halvings + 1):
            trial = u.copy()
            trial[free] += t * du
            try:
                E_t, r_t = state(trial)
            except OverflowGuardError:
                t *= cfg.backtrack
                continue
            rn_t = float(np.linalg.norm(r_t))
            if E_t <= E or (E_t <= E + _energy_slack(E) and rn_t < rn):
                break
            t *= cfg.backtrack
        else:
            raise SolverError(f"line search stalled at Newton iteration {it} (residual {rn:.3e})")
        u, E, r, rn = trial, E_t, r_t, rn_t
        trace.append(NewtonStep(it, rn, t, E))
        if cfg.verbose:
            log.info("newton %3d residual %.3e step %.3g energy %.15g", it, rn, t, E)
    if rn > cfg.tol:
        raise SolverError(f"Newton did not converge in {cfg.max_newton} iterations (residual {rn:.3e})")
    return u, trace


def solve_rpbe(mesh: Mesh, dm: DielectricModel, cs: ChargeSystem, kappa: float, cfg: SolveConfig | None = None,
               *, quad=None, source=None, boundary=None, u0=None, split=False, system=None) -> SolutionBundle:
    """Solve the discrete RPBE on a fixed mesh.

    ``u0`` is an optional initial guess (vertex vector; its Dirichlet entries
    are overwritten).  With ``split=True`` the linear and nonlinear parts are
    computed as well and the sup-norm of ``u - (u_l + u_n)`` is recorded.
    """
    cfg = cfg or SolveConfig()
    system = system or FemSystem(mesh, dm, cs, kappa, quad=quad, source=source, boundary=boundary)
    start = system.dofs.full() if u0 is None else system.dofs.full(np.asarray(u0, float)[system.free])
    u, trace = newton(system, start, cfg)
    bundle = SolutionBundle(u, trace, system)
    if split:
        u_l = solve_linear_part(mesh, dm, cs, cfg, system=system)
        u_n = solve_nonlinear_part(mesh, dm, cs, kappa, u_l, cfg, system=system)
        bundle.u_l = u_l
        bundle.u_n = u_n
        bundle.split_discrepancy = float(np.max(np.abs(u - (u_l + u_n))))
    return bundle


def solve_linear_part(mesh: Mesh, dm: DielectricModel, cs: ChargeSystem, cfg: SolveConfig | None = None,
                      *, quad=None, system=None):
    """Linear part ``u_l``: ``A u_l + f_G = 0`` with homogeneous Dirichlet data."""
    cfg = cfg or SolveConfig()
    system = system or FemSystem(mesh, dm, cs, 0.0, quad=quad)
    rhs = -system.fG[system.free]
    if not np.any(rhs):
        return np.zeros(mesh.n_vertices)
    return system.dofs.homogeneous(solve_linear(system.A_ff, rhs, cfg))


def solve_nonlinear_part(mesh: Mesh, dm: DielectricModel, cs: ChargeSystem, kappa: float, u_l,
                         cfg: SolveConfig | None = None, *, quad=None, source=None, boundary=None, system=None):
    """Nonlinear part ``u_n``: ``A u_n + B(u_n + u_l) = 0`` with Dirichlet data ``g - G``."""
    cfg = cfg or SolveConfig()
    system = system or FemSystem(mesh, dm, cs, kappa, quad=quad, source=source, boundary=boundary)
    u, _ = newton(system, system.dofs.full(), cfg, shift=np.asarray(u_l, float), with_fG=False)
    return u


def compute_linfty_bounds(mesh: Mesh, cs: ChargeSystem, dm: DielectricModel, kappa: float, u_h_l,
                          *, quad=None, boundary=None, system=None) -> LInftyBounds:
    """Bounds ``alpha <= u_n <= beta`` from the sign structure of ``sinh``.

    ``alpha' = -sup_{solvent}(u_l + G)`` and ``beta' = -inf_{solvent}(u_l + G)``,
    with the suprema sampled at solvent quadrature points and vertices; the
    boundary data ``g - G`` then widens the interval.  Without a nonlinear
    term ``alpha'`` and ``beta'`` are infinite and only the boundary counts.
    """
    system = system or FemSystem(mesh, dm, cs, kappa, quad=quad, boundary=boundary)
    u_l = np.asarray(u_h_l, float)
    data = system.data
    solvent = None
    if data.elements.size and dm.kappa_bar_sq_s > 0:
        verts = np.unique(mesh.elements[data.elements].ravel())
        at_v = u_l[verts] + (eval_G(cs, mesh.vertices[verts], mesh.dim) if len(cs) else 0.0)
        solvent = np.concatenate([(data.values(u_l) + data.G).ravel(), np.atleast_1d(at_v)])
    return bounds_from_samples(solvent, system.dofs.values)


def bounds_from_samples(solvent_values, boundary_values) -> LInftyBounds:
    """Apply the bound formulas to samples of ``u_l + G`` on the solvent and ``g - G`` on the boundary.

    ``solvent_values=None`` means there is no nonlinear term, so only the
    boundary data constrain ``u_n``.
    """
    b = np.asarray(boundary_values, float)
    sup_b, inf_b = float(b.max()), float(b.min())
    if solvent_values is None or np.size(solvent_values) == 0:
        sup_s = inf_s = math.nan
        a_p, b_p = math.inf, -math.inf
    else:
        s = np.asarray(solvent_values, float)
        sup_s, inf_s = float(s.max()), float(s.min())
        a_p, b_p = -sup_s, -inf_s
    return LInftyBounds(min(a_p, inf_b), max(b_p, sup_b), a_p, b_p, sup_s, inf_s, sup_b, inf_b)
