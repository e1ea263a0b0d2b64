"""Adaptive loop SOLVE -> ESTIMATE -> MARK -> REFINE with Dörfler marking.

Marking is done in two steps.  The first selects a greedy bulk set for the
error indicator.  The second extends it by a bulk set for the oscillation,
but only when the oscillation switch fires, i.e. when oscillation is not
negligible compared with the indicator.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .assembly import FemSystem, assemble_stiffness, check_A1, h1_norm
from .errors import AssumptionError, InvalidReferenceError, SolverError
from .estimator import ErrorEstimate, estimate
from .geometry import ChargeSystem, DielectricModel
from .mesh import (Mesh, bisect, check_interior_nodes, check_nested, is_conforming, prolongate,
                   refine_to_generation, uniform_refine)
from .solver import SolveConfig, solve_rpbe

log = logging.getLogger(__name__)

DEGENERATE_FLOOR = 1e-12


@dataclass
class MarkingConfig:
    theta1: float = 0.5
    theta2: float = 0.8
    switch_constant: float = 1.0
    depth: int = 3

    def __post_init__(self):
        for name in ("theta1", "theta2"):
            t = getattr(self, name)
            if not 0.0 < t < 1.0:
                raise ValueError(f"{name} must lie strictly between 0 and 1, got {t}")
        if self.switch_constant < 0:
            raise ValueError("switch_constant must be nonnegative")
        if self.depth < 1:
            raise ValueError("refinement depth must be at least 1")


@dataclass
class StopCriteria:
    max_iterations: int = 25
    eta_tol: float = 1e-4  # on eta_h, not squared
    max_dofs: int = 200_000


@dataclass
class Problem:
    """Everything the adaptive loop needs besides the marking parameters."""

    mesh: Mesh
    dm: DielectricModel
    cs: ChargeSystem
    kappa: float = 0.0
    interface: object = None
    source: object = None
    boundary: object = None
    quad: object = None
    snap: bool = False

    def system(self, mesh=None):
        return FemSystem(mesh or self.mesh, self.dm, self.cs, self.kappa, quad=self.quad,
                         source=self.source, boundary=self.boundary)


@dataclass
class AfemRecord:
    k: int
    dofs: int
    eta_sq: float
    osc_sq: float
    energy: float
    ref_error: float | None
    marked1: int
    marked2: int
    switch: bool
    newton_iterations: int = 0
    a1_pass: bool = False
    a1prime_pass: bool = False
    integrity: dict | None = None

    CSV_FIELDS = ("k", "dofs", "eta_sq", "osc_sq", "energy", "ref_error", "marked1", "marked2", "switch")

    def csv_row(self):
        ref = "" if self.ref_error is None else repr(self.ref_error)
        return [str(self.k), str(self.dofs), repr(self.eta_sq), repr(self.osc_sq), repr(self.energy), ref,
                str(self.marked1), str(self.marked2), str(int(self.switch))]


@dataclass
class AfemHistory:
    records: list = field(default_factory=list)
    meshes: list = field(default_factory=list)
    solutions: list = field(default_factory=list)
    estimates: list = field(default_factory=list)
    marks: list = field(default_factory=list)
    stop_reason: str = ""

    def __len__(self):
        return len(self.records)

    def column(self, name):
        return np.array([getattr(r, name) for r in self.records], dtype=float)

    @property
    def energies(self):
        return self.column("energy")

    @property
    def dofs(self):
        return self.column("dofs").astype(int)


# ----------------------------------------------------------------------------
# marking


def dorfler(values, theta):
    """Greedy prefix of the indices sorted by decreasing value carrying ``theta`` of the total.

    Ties are broken by element index.  The bulk inequality is checked with
    correctly rounded sums, so ``fsum(values[M]) >= theta * fsum(values)``
    holds exactly and dropping the last element breaks it.
    """
    values = np.asarray(values, float)
    if values.size == 0:
        return np.zeros(0, dtype=np.int64)
    if np.any(values < 0) or not np.all(np.isfinite(values)):
        raise ValueError("indicator values must be finite and nonnegative")
    target = theta * math.fsum(values)
    if target <= 0.0:
        return np.zeros(0, dtype=np.int64)
    order = np.argsort(-values, kind="stable")
    csum = np.cumsum(values[order])
    k = int(np.searchsorted(csum, target)) + 1
    k = min(max(k, 1), values.size)
    while k < values.size and math.fsum(values[order[:k]]) < target:
        k += 1
    while k > 1 and math.fsum(values[order[:k - 1]]) >= target:
        k -= 1
    return np.sort(order[:k])


def oscillation_switch(est: ErrorEstimate, M1, cfg: MarkingConfig, mesh: Mesh | None = None) -> bool:
    """Whether oscillation must be marked as well.

    Fires when ``osc_h >= eta_h`` or, given a mesh, when
    ``switch_constant * sum of osc^2 over the patches of M1 >= 1/2 sum_{M1} eta^2``.
    Never fires when the oscillation vanishes identically.
    """
    osc_total = est.osc_global_sq
    if osc_total <= 0.0:
        return False
    if osc_total >= est.eta_global_sq:
        return True
    M1 = np.asarray(M1, dtype=np.int64)
    if mesh is None or M1.size == 0:
        return False
    patch = mesh.patch(M1)
    lhs = cfg.switch_constant * math.fsum(est.osc_sq[patch])
    return lhs >= 0.5 * math.fsum(est.eta_sq[M1])


def mark(est: ErrorEstimate, cfg: MarkingConfig, mesh: Mesh | None = None):
    """Return ``(M1, M2, switch_fired)`` as sorted element index arrays."""
    M1 = dorfler(est.eta_sq, cfg.theta1)
    fired = oscillation_switch(est, M1, cfg, mesh)
    if fired:
        M2 = np.union1d(M1, dorfler(est.osc_sq, cfg.theta2))
    else:
        M2 = M1.copy()
    return M1, M2, fired


# ----------------------------------------------------------------------------
# reference solutions


@dataclass
class FixedReference:
    """A fine solution on a mesh that refines every mesh it is compared with."""

    mesh: Mesh
    u: np.ndarray
    energy: float

    def error(self, mesh: Mesh, u_h) -> float:
        return h1_norm(self.mesh, self.u - prolongate(mesh, u_h, self.mesh))


class LocalReference:
    """Reference obtained by solving on ``levels`` uniform refinements of each compared mesh."""

    def __init__(self, problem: Problem, levels: int = 2, solve_cfg: SolveConfig | None = None):
        self.problem = problem
        self.levels = levels
        self.solve_cfg = solve_cfg

    def solve(self, mesh: Mesh, u_h=None) -> FixedReference:
        fine = uniform_refine(mesh, self.levels)
        u0 = None if u_h is None else prolongate(mesh, u_h, fine)
        p = self.problem
        bundle = solve_rpbe(fine, p.dm, p.cs, p.kappa, self.solve_cfg, quad=p.quad, source=p.source,
                            boundary=p.boundary, u0=u0)
        return FixedReference(fine, bundle.u, bundle.energy)

    def error(self, mesh: Mesh, u_h) -> float:
        return self.solve(mesh, u_h).error(mesh, u_h)


def reference_solution(problem: Problem, mesh: Mesh | None = None, levels: int = 2,
                       solve_cfg: SolveConfig | None = None, generation: int | None = None) -> FixedReference:
    """Solve on ``levels`` uniform refinements of ``mesh``.

    With ``generation`` the mesh is first bisected until every element has at
    least that generation, so the result also refines the uniform mesh of that
    generation.
    """
    mesh = mesh or problem.mesh
    if generation is not None:
        mesh = refine_to_generation(mesh, generation)
    return LocalReference(problem, levels, solve_cfg).solve(mesh)


def element_errors_sq(coarse: Mesh, u_h, ref: FixedReference):
    """Squared H1 error of ``u_h`` per coarse element; ``ref.mesh.parent`` must index ``coarse``."""
    fine = ref.mesh
    e = ref.u - prolongate(coarse, u_h, fine)
    g = np.einsum("ei,eik->ek", e[fine.elements], fine.basis_gradients)
    ebar = e[fine.elements]
    d1 = fine.dim + 1
    # exact P1 mass on each element: |T| (sum e_i^2 + (sum e_i)^2) / ((d+1)(d+2))
    l2 = fine.volumes * (np.sum(ebar**2, axis=1) + np.sum(ebar, axis=1) ** 2) / (d1 * (d1 + 1))
    local = fine.volumes * np.sum(g**2, axis=1) + l2
    out = np.zeros(coarse.n_elements)
    np.add.at(out, fine.parent, local)
    return out


def patch_sums(mesh: Mesh, values):
    """``sum over omega_tau`` of a per-element quantity for every element ``tau``."""
    V = mesh.vertex_patches.astype(np.int32)
    adj = (V.T @ V).tocsr()
    adj.data[:] = 1
    return np.asarray(adj @ np.asarray(values, float)).ravel()


def efficiency_ratio(mesh: Mesh, est: ErrorEstimate, err_sq):
    """``max_tau eta_tau^2 / (sum_{omega_tau} err^2 + sum_{omega_tau} osc^2)``."""
    denom = patch_sums(mesh, np.asarray(err_sq) + est.osc_sq)
    ok = denom > 0
    if not ok.any():
        return math.inf if np.any(est.eta_sq > 0) else 0.0
    return float(np.max(est.eta_sq[ok] / denom[ok]))


# ----------------------------------------------------------------------------
# the loop


def _a1(mesh: Mesh, dm: DielectricModel):
    return check_A1(assemble_stiffness(mesh, dm), mesh)


def afem_loop(problem: Problem, cfg: MarkingConfig | None = None, stop: StopCriteria | None = None, *,
              solve_cfg: SolveConfig | None = None, reference=None, check_integrity: bool = False,
              keep: bool = True, warm_start: bool = True, callback=None) -> AfemHistory:
    """Run the adaptive loop until a stop criterion is met.

    ``reference`` is any object with ``error(mesh, u_h)`` (see
    :class:`FixedReference`, :class:`LocalReference`).  With
    ``check_integrity`` every refinement is audited for conformity, nesting,
    volume conservation and the interior-node property; the results are kept
    on the record of the refined mesh.  ``callback(k, mesh, u, est)`` is
    called after each estimate.
    """
    cfg = cfg or MarkingConfig()
    stop = stop or StopCriteria()
    solve_cfg = solve_cfg or SolveConfig()
    mesh = problem.mesh
    rep = _a1(mesh, problem.dm)
    if not (rep.a1_pass or rep.a1prime_pass):
        raise AssumptionError(f"initial mesh fails the grid assumptions: {rep.summary()}")
    hist = AfemHistory()
    prev_mesh = prev_u = None
    integrity = None
    for k in range(stop.max_iterations):
        system = problem.system(mesh)
        u0 = prolongate(prev_mesh, prev_u, mesh) if (warm_start and prev_u is not None) else None
        try:
            bundle = solve_rpbe(mesh, problem.dm, problem.cs, problem.kappa, solve_cfg, u0=u0, system=system)
        except SolverError as exc:
            raise SolverError(f"AFEM iteration {k} ({mesh.n_elements} elements): {exc}") from exc
        u = bundle.u
        est = estimate(mesh, problem.dm, problem.cs, u, system.quad, source=problem.source, data=system.data)
        ref_err = reference.error(mesh, u) if reference is not None else None
        rec = AfemRecord(k, system.dofs.n_free, est.eta_global_sq, est.osc_global_sq, bundle.energy, ref_err,
                         0, 0, False, bundle.iterations, rep.a1_pass, rep.a1prime_pass, integrity)
        hist.records.append(rec)
        if keep:
            hist.meshes.append(mesh)
            hist.solutions.append(u)
            hist.estimates.append(est)
        if callback is not None:
            callback(k, mesh, u, est)
        log.info("afem %2d dofs %7d eta^2 %.4e osc^2 %.4e E %.12g", k, rec.dofs, rec.eta_sq, rec.osc_sq, rec.energy)

        if math.sqrt(est.eta_global_sq) < stop.eta_tol:
            hist.stop_reason = "eta_tol"
            break
        if k == stop.max_iterations - 1:
            hist.stop_reason = "max_iterations"
            break
        if rec.dofs >= stop.max_dofs:
            hist.stop_reason = "max_dofs"
            break

        M1, M2, fired = mark(est, cfg, mesh)
        rec.marked1, rec.marked2, rec.switch = int(M1.size), int(M2.size), bool(fired)
        if keep:
            hist.marks.append((M1, M2))
        new = bisect(mesh, M2, depth=cfg.depth, ig=problem.interface, snap=problem.snap)
        if check_integrity:
            integrity = {
                "conforming": is_conforming(new),
                "nested": check_nested(mesh, new)["ok"],
                "volume": bool(np.isclose(new.total_volume(), mesh.total_volume(), rtol=1e-12, atol=0)),
                "interior_nodes": check_interior_nodes(mesh, new, M2) if cfg.depth >= 3 else None,
            }
        rep = _a1(new, problem.dm)
        if not (rep.a1_pass or rep.a1prime_pass):
            warnings.warn(f"AFEM iteration {k}: refined mesh violates the grid assumptions ({rep.summary()})",
                          RuntimeWarning, stacklevel=2)
        prev_mesh, prev_u, mesh = mesh, u, new
    return hist


# ----------------------------------------------------------------------------
# convergence monitor


@dataclass
class ContractionReport:
    delta: np.ndarray  # E(u_k) - E_ref
    osc_sq: np.ndarray
    quantity: np.ndarray  # delta + gamma * osc^2
    factors: list  # q_{k+1} / q_k, None when q_k is below the floor
    flagged: list  # indices k with factor >= 1
    monotone: bool
    gamma: float


def contraction_monitor(history: AfemHistory, gamma: float = 1.0, E_ref: float | None = None,
                        slack: float = 1e-12) -> ContractionReport:
    """Observed contraction of ``delta_k + gamma osc_k^2`` against a reference energy.

    Raises :class:`InvalidReferenceError` when ``E_ref`` exceeds some
    ``E(u_k)`` by more than round-off.
    """
    if E_ref is None:
        raise InvalidReferenceError("a reference energy is required")
    E = history.energies
    osc = history.column("osc_sq")
    if E.size and E_ref > E.min() + slack * max(1.0, abs(E_ref)):
        raise InvalidReferenceError(f"reference energy {E_ref!r} lies above E(u_k) = {E.min()!r}")
    delta = np.maximum(E - E_ref, 0.0)
    q = delta + gamma * osc
    factors, flagged = [], []
    for k in range(len(q) - 1):
        if q[k] < DEGENERATE_FLOOR:
            factors.append(None)
            continue
        f = float(q[k + 1] / q[k])
        factors.append(f)
        if f >= 1.0:
            flagged.append(k)
    monotone = bool(np.all(np.diff(q) <= 0)) if q.size > 1 else True
    return ContractionReport(delta, osc, q, factors, flagged, monotone, gamma)

