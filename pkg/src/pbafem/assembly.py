"""P1 assembly of the regularized Poisson-Boltzmann weak form.

All vectors produced here are indexed by mesh vertex; :class:`DofMap`
splits them into free and Dirichlet parts.  The nonlinear terms and the
singular source are integrated over solvent elements only, where ``kappa_bar``
and ``eps - eps_m`` are nonzero.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import MeshError, OverflowGuardError
from .geometry import SOLVENT, ChargeSystem, DielectricModel, eval_boundary_g, eval_G, eval_grad_G
from .mesh import Mesh
from .quadrature import QuadratureRule, simplex_rule

OVERFLOW_GUARD = 300.0
DEFAULT_DEGREE = 4


def default_rule(dim: int) -> QuadratureRule:
    return simplex_rule(dim, DEFAULT_DEGREE)


@dataclass(frozen=True)
class DofMap:
    """Free/Dirichlet split of the mesh vertices."""

    free: np.ndarray
    dirichlet: np.ndarray
    values: np.ndarray
    n_vertices: int

    @property
    def n_free(self):
        return len(self.free)

    def full(self, u_free=None):
        """Vertex vector with the Dirichlet values filled in (free part zero if omitted)."""
        u = np.zeros(self.n_vertices)
        if u_free is not None:
            u[self.free] = u_free
        u[self.dirichlet] = self.values
        return u

    def homogeneous(self, u_free):
        u = np.zeros(self.n_vertices)
        u[self.free] = u_free
        return u


def interpolate_dirichlet(mesh: Mesh, cs: ChargeSystem, dm: DielectricModel, kappa: float,
                          boundary=None) -> DofMap:
    """Dirichlet data ``g - G`` interpolated at boundary vertices.

    ``boundary`` optionally overrides the data with a callable of the
    boundary points (used for manufactured solutions).
    """
    bnd = np.flatnonzero(mesh.boundary_vertex)
    if bnd.size == 0:
        raise MeshError("mesh has no boundary vertices")
    x = mesh.vertices[bnd]
    if boundary is not None:
        values = np.asarray(boundary(x), dtype=float)
    else:
        values = eval_boundary_g(cs, dm, kappa, x, mesh.dim) - eval_G(cs, x, mesh.dim)
    free = np.flatnonzero(~mesh.boundary_vertex)
    return DofMap(free, bnd, np.atleast_1d(values).astype(float), mesh.n_vertices)


def _scatter_matrix(mesh: Mesh, local):
    ne, d1 = mesh.elements.shape
    rows = np.repeat(mesh.elements, d1, axis=1).ravel()
    cols = np.tile(mesh.elements, (1, d1)).ravel()
    M = sp.coo_matrix((local.ravel(), (rows, cols)), shape=(mesh.n_vertices,) * 2).tocsr()
    M.sum_duplicates()
    # exact symmetry regardless of the duplicate summation order
    return (0.5 * (M + M.T)).tocsr()


def _scatter_vector(mesh: Mesh, local, elements=None):
    out = np.zeros(mesh.n_vertices)
    els = mesh.elements if elements is None else mesh.elements[elements]
    np.add.at(out, els.ravel(), local.ravel())
    return out


def assemble_stiffness(mesh: Mesh, dm: DielectricModel, coefficient=None):
    """Stiffness matrix ``a_ij = sum_tau eps|_tau int grad phi_i . grad phi_j`` on all vertices."""
    if np.any(mesh.volumes <= 0):
        raise MeshError("degenerate element")
    eps = dm.eps(mesh.region) if coefficient is None else np.broadcast_to(coefficient, mesh.n_elements)
    g = mesh.basis_gradients
    local = np.einsum("e,eik,ejk->eij", eps * mesh.volumes, g, g)
    return _scatter_matrix(mesh, local)


def assemble_mass(mesh: Mesh, elements=None, weight=None):
    """Consistent P1 mass matrix, optionally restricted to a subset of elements."""
    d = mesh.dim
    ref = (np.ones((d + 1, d + 1)) + np.eye(d + 1)) / ((d + 1) * (d + 2))
    vol = mesh.volumes.copy()
    if weight is not None:
        vol = vol * weight
    if elements is not None:
        mask = np.zeros(mesh.n_elements, bool)
        mask[elements] = True
        vol = np.where(mask, vol, 0.0)
    local = vol[:, None, None] * ref[None]
    return _scatter_matrix(mesh, local)


class SolventQuadrature:
    """Quadrature data on solvent elements: points, scaled weights, G and grad G."""

    def __init__(self, mesh: Mesh, cs: ChargeSystem, quad: QuadratureRule | None = None):
        quad = quad or default_rule(mesh.dim)
        if quad.dim != mesh.dim:
            raise ValueError("quadrature rule dimension does not match the mesh")
        self.mesh = mesh
        self.quad = quad
        self.elements = np.flatnonzero(mesh.region == SOLVENT)
        X = mesh.element_vertices[self.elements]
        self.points = quad.points(X)
        self.wdet = quad.weights[None, :] * (mesh.volumes[self.elements] * _fact(mesh.dim))[:, None]
        self.phi = np.asarray(quad.bary)
        flat = self.points.reshape(-1, mesh.dim)
        n = len(self.elements)
        if len(cs) and n:
            self.G = eval_G(cs, flat, mesh.dim).reshape(n, -1)
            self.gradG = eval_grad_G(cs, flat, mesh.dim).reshape(n, len(quad), mesh.dim)
        else:
            self.G = np.zeros((n, len(quad)))
            self.gradG = np.zeros((n, len(quad), mesh.dim))

    def values(self, u):
        """P1 function ``u`` (vertex vector) at the quadrature points, ``(ns, nq)``."""
        return u[self.mesh.elements[self.elements]] @ self.phi.T

    def argument(self, u, guard=OVERFLOW_GUARD):
        arg = self.values(u) + self.G
        if arg.size:
            peak = np.abs(arg).max(axis=1)
            bad = peak > guard
            if np.any(bad):
                k = int(np.argmax(bad))
                raise OverflowGuardError(self.elements[k], peak[k], guard)
        return arg


def _fact(d):
    return 2 if d == 2 else 6


def assemble_fG(mesh: Mesh, dm: DielectricModel, cs: ChargeSystem, quad: QuadratureRule | None = None,
                data: SolventQuadrature | None = None):
    """Singular source ``<f_G, phi_i> = int (eps - eps_m) grad G . grad phi_i``."""
    data = data or SolventQuadrature(mesh, cs, quad)
    if data.elements.size == 0 or dm.eps_s == dm.eps_m or len(cs) == 0:
        return np.zeros(mesh.n_vertices)
    g = mesh.basis_gradients[data.elements]  # (ns, d+1, d)
    flux = np.einsum("eq,eqk->ek", data.wdet, data.gradG)  # int grad G over the element
    local = (dm.eps_s - dm.eps_m) * np.einsum("ek,eik->ei", flux, g)
    return _scatter_vector(mesh, local, data.elements)


def assemble_B(mesh: Mesh, dm: DielectricModel, cs: ChargeSystem, u_h, quad: QuadratureRule | None = None,
               data: SolventQuadrature | None = None, guard=OVERFLOW_GUARD):
    """Nonlinear term ``(kappa_bar^2 sinh(u_h + G), phi_i)`` over solvent elements."""
    data = data or SolventQuadrature(mesh, cs, quad)
    if data.elements.size == 0 or dm.kappa_bar_sq_s == 0:
        return np.zeros(mesh.n_vertices)
    arg = data.argument(np.asarray(u_h, float), guard)
    local = dm.kappa_bar_sq_s * np.einsum("eq,eq,qi->ei", data.wdet, np.sinh(arg), data.phi)
    return _scatter_vector(mesh, local, data.elements)


def assemble_B_jacobian(mesh: Mesh, dm: DielectricModel, cs: ChargeSystem, u_h,
                        quad: QuadratureRule | None = None, data: SolventQuadrature | None = None,
                        guard=OVERFLOW_GUARD):
    """Derivative of :func:`assemble_B`: the ``kappa_bar^2 cosh(u_h + G)`` weighted mass matrix."""
    data = data or SolventQuadrature(mesh, cs, quad)
    n = mesh.n_vertices
    if data.elements.size == 0 or dm.kappa_bar_sq_s == 0:
        return sp.csr_matrix((n, n))
    arg = data.argument(np.asarray(u_h, float), guard)
    local = dm.kappa_bar_sq_s * np.einsum("eq,eq,qi,qj->eij", data.wdet, np.cosh(arg), data.phi, data.phi)
    sub = np.zeros((mesh.n_elements,) + local.shape[1:])
    sub[data.elements] = local
    return _scatter_matrix(mesh, sub)


def cosh_integral(dm: DielectricModel, data: SolventQuadrature, u_h, guard=OVERFLOW_GUARD):
    if data.elements.size == 0 or dm.kappa_bar_sq_s == 0:
        return 0.0
    arg = data.argument(np.asarray(u_h, float), guard)
    return float(dm.kappa_bar_sq_s * np.sum(data.wdet * np.cosh(arg)))


def assemble_source(mesh: Mesh, source, quad: QuadratureRule | None = None):
    """Load vector ``(f, phi_i)`` for a volumetric source callable ``f(points)``."""
    quad = quad or default_rule(mesh.dim)
    pts = quad.points(mesh.element_vertices)
    vals = np.asarray(source(pts.reshape(-1, mesh.dim)), float).reshape(pts.shape[:2])
    wdet = quad.weights[None, :] * (mesh.volumes * _fact(mesh.dim))[:, None]
    local = np.einsum("eq,eq,qi->ei", wdet, vals, quad.bary)
    return _scatter_vector(mesh, local)


def energy(mesh: Mesh, dm: DielectricModel, cs: ChargeSystem, u_h, quad: QuadratureRule | None = None):
    """Discrete energy ``int eps/2 |grad u|^2 + kappa_bar^2 cosh(u + G) + <f_G, u>``."""
    u_h = np.asarray(u_h, float)
    data = SolventQuadrature(mesh, cs, quad)
    A = assemble_stiffness(mesh, dm)
    fG = assemble_fG(mesh, dm, cs, data=data)
    return 0.5 * float(u_h @ (A @ u_h)) + cosh_integral(dm, data, u_h) + float(fG @ u_h)


class FemSystem:
    """Discrete RPBE on one mesh: Dirichlet data, stiffness, sources and nonlinear callbacks.

    ``source`` adds a volumetric right-hand side ``f`` (the equation becomes
    ``-div(eps grad u) + kappa_bar^2 sinh(u + G) = f + div((eps - eps_m) grad G)``);
    it is used for manufactured solutions.  ``boundary`` overrides the Dirichlet
    data ``g - G``.
    """

    def __init__(self, mesh: Mesh, dm: DielectricModel, cs: ChargeSystem, kappa: float = 0.0,
                 quad: QuadratureRule | None = None, source=None, boundary=None, guard=OVERFLOW_GUARD):
        self.mesh = mesh
        self.dm = dm
        self.cs = cs
        self.kappa = kappa
        self.quad = quad or default_rule(mesh.dim)
        self.guard = guard
        self.dofs = interpolate_dirichlet(mesh, cs, dm, kappa, boundary)
        self.data = SolventQuadrature(mesh, cs, self.quad)
        self.A = assemble_stiffness(mesh, dm)
        self.fG = assemble_fG(mesh, dm, cs, data=self.data)
        self.load = assemble_source(mesh, source, self.quad) if source is not None else np.zeros(mesh.n_vertices)
        free = self.dofs.free
        self.A_ff = self.A[free][:, free].tocsr()

    @property
    def free(self):
        return self.dofs.free

    def B(self, u):
        return assemble_B(self.mesh, self.dm, self.cs, u, data=self.data, guard=self.guard)

    def residual(self, u, shift=None, with_fG=True):
        """Free-dof residual ``A u + B(u + shift) + f_G - F``."""
        arg = u if shift is None else u + shift
        r = self.A @ u + self.B(arg) - self.load
        if with_fG:
            r = r + self.fG
        return r[self.free]

    def jacobian(self, u, shift=None):
        arg = u if shift is None else u + shift
        J = assemble_B_jacobian(self.mesh, self.dm, self.cs, arg, data=self.data, guard=self.guard)
        free = self.free
        return (self.A_ff + J[free][:, free]).tocsr()

    def energy(self, u, shift=None, with_fG=True):
        arg = u if shift is None else u + shift
        e = 0.5 * float(u @ (self.A @ u)) + cosh_integral(self.dm, self.data, arg, self.guard)
        e -= float(self.load @ u)
        if with_fG:
            e += float(self.fG @ u)
        return e


@dataclass
class A1Report:
    rho: float  # smallest admissible margin over adjacent pairs
    h: float
    a1_pass: bool
    a1prime_pass: bool
    n_pairs: int
    n_zero_pairs: int
    n_positive_pairs: int
    max_offdiag: float
    rho_floor: float
    tol: float

    def summary(self):
        return (f"(A1) {'pass' if self.a1_pass else 'FAIL'} rho={self.rho:.6g}  "
                f"(A1') {'pass' if self.a1prime_pass else 'FAIL'} max_offdiag={self.max_offdiag:.3g}  "
                f"pairs={self.n_pairs} zero={self.n_zero_pairs} positive={self.n_positive_pairs}")


def check_A1(stiff, mesh: Mesh, rho_floor: float = 0.0, slack: float = 1e-12) -> A1Report:
    """Audit the sign conditions on the stiffness matrix.

    For every pair of vertices joined by a mesh edge, the margin
    ``rho_ij = -a_ij h^2 / sum_{T contains ij} |T|`` is computed with ``h`` the
    largest element diameter.  (A1) passes when every ``a_ij`` is negative
    beyond the slack and ``min rho_ij >= rho_floor``; (A1') passes when no
    off-diagonal entry exceeds the slack.  The slack is relative to the
    largest diagonal entry.
    """
    stiff = sp.csr_matrix(stiff)
    diag = stiff.diagonal()
    tol = slack * float(np.max(np.abs(diag))) if diag.size else slack
    edges = mesh.edges
    a = np.asarray(stiff[edges[:, 0], edges[:, 1]]).ravel()
    d1 = mesh.dim + 1
    pairs = np.array([(i, j) for i in range(d1) for j in range(i + 1, d1)])
    el_edges = np.sort(mesh.elements[:, pairs], axis=2).reshape(-1, 2)
    keys_all = el_edges[:, 0] * mesh.n_vertices + el_edges[:, 1]
    keys = edges[:, 0] * mesh.n_vertices + edges[:, 1]
    pos = np.searchsorted(keys, keys_all)
    patch_vol = np.zeros(len(edges))
    np.add.at(patch_vol, pos, np.repeat(mesh.volumes, len(pairs)))
    h = float(mesh.diameters.max())
    a_eff = np.where(np.abs(a) <= tol, 0.0, a)
    rho = -a_eff * h**2 / patch_vol + 0.0
    rho_min = float(rho.min()) if rho.size else float("inf")
    off = stiff.tocoo()
    offmask = off.row != off.col
    max_off = float(off.data[offmask].max()) if offmask.any() else 0.0
    n_zero = int(np.sum(a_eff == 0.0))
    n_pos = int(np.sum(a_eff > 0))
    a1 = bool(np.all(a_eff < 0) and rho_min > 0 and rho_min >= rho_floor)
    a1p = bool(max_off <= tol)
    return A1Report(rho_min, h, a1, a1p, len(edges), n_zero, n_pos, max_off, rho_floor, tol)


def write_matrix_market(path, matrix, comment=""):
    """Dump a sparse operator in Matrix Market coordinate format."""
    from scipy.io import mmwrite

    mmwrite(str(path), sp.coo_matrix(matrix), comment=comment)


def h1_norm(mesh: Mesh, v) -> float:
    """Full H1 norm of a P1 function, ``sqrt(|v|_1^2 + ||v||_0^2)``."""
    v = np.asarray(v, float)
    g = np.einsum("ei,eik->ek", v[mesh.elements], mesh.basis_gradients)
    semi = float(np.sum(mesh.volumes * np.sum(g**2, axis=1)))
    l2 = float(v @ (assemble_mass(mesh) @ v))
    return float(np.sqrt(max(semi + l2, 0.0)))


def error_norms(mesh: Mesh, u_h, exact, grad_exact, quad: QuadratureRule | None = None):
    """``(L2 error, H1 error)`` of ``u_h`` against an exact solution given by callables."""
    quad = quad or simplex_rule(mesh.dim, 8)
    u_h = np.asarray(u_h, float)
    pts = quad.points(mesh.element_vertices)
    flat = pts.reshape(-1, mesh.dim)
    wdet = quad.weights[None, :] * (mesh.volumes * _fact(mesh.dim))[:, None]
    uq = u_h[mesh.elements] @ quad.bary.T
    ue = np.asarray(exact(flat), float).reshape(uq.shape)
    ge = np.asarray(grad_exact(flat), float).reshape(pts.shape)
    gh = np.einsum("ei,eik->ek", u_h[mesh.elements], mesh.basis_gradients)
    l2_sq = float(np.sum(wdet * (uq - ue) ** 2))
    semi_sq = float(np.sum(wdet * np.sum((ge - gh[:, None, :]) ** 2, axis=2)))
    return np.sqrt(l2_sq), np.sqrt(l2_sq + semi_sq)
