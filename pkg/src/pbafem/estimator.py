"""Residual a posteriori error indicators and data oscillation.

For an element ``tau`` with diameter ``h``::

    eta_tau^2 = h^2 ||B(u_h)||_tau^2
                + 1/2 sum_{S interior face of tau} h_S ||[n_S . (eps grad u_h + (eps - eps_m) grad G)]_S||_S^2
    osc_tau^2 = h^4 (||grad u_h||_tau^2 + ||grad G||_tau^2)      (solvent elements only)

``grad G`` is continuous away from the charges, so its part of the flux jump
only survives on faces where ``eps`` jumps, i.e. on the discrete interface.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .assembly import OVERFLOW_GUARD, SolventQuadrature, default_rule
from .geometry import ChargeSystem, DielectricModel, eval_grad_G
from .mesh import BOUNDARY, INTERFACE, FaceInfo, Mesh
from .quadrature import simplex_rule

FACE_DEGREE = 4


@dataclass
class ErrorEstimate:
    eta_sq: np.ndarray
    osc_sq: np.ndarray
    bulk_sq: np.ndarray
    jump_sq: np.ndarray

    @property
    def eta_global_sq(self) -> float:
        return float(self.eta_sq.sum())

    @property
    def osc_global_sq(self) -> float:
        return float(self.osc_sq.sum())

    @property
    def eta(self):
        return math.sqrt(self.eta_global_sq)

    @property
    def osc(self):
        return math.sqrt(self.osc_global_sq)


def element_gradients(mesh: Mesh, u_h):
    """Constant gradient of the P1 function ``u_h`` on every element, ``(ne, d)``."""
    return np.einsum("ei,eik->ek", np.asarray(u_h, float)[mesh.elements], mesh.basis_gradients)


def _face_jumps_sq(mesh, faces, idx, grad_u, eps, cs, face_rule):
    """Squared L2 norms of the flux jump over the faces ``idx``."""
    e0 = faces.elements[idx, 0]
    e1 = faces.elements[idx, 1]
    n = faces.normals[idx]
    const = np.einsum("fk,fk->f", n, eps[e1, None] * grad_u[e1] - eps[e0, None] * grad_u[e0])
    deps = eps[e1] - eps[e0]
    out = const**2 * faces.measures[idx]
    hot = np.flatnonzero((deps != 0) & (len(cs) > 0))
    if hot.size:
        X = mesh.vertices[faces.vertices[idx[hot]]]  # (nf, d, d)
        pts = np.einsum("qi,fik->fqk", face_rule.bary, X)
        gG = eval_grad_G(cs, pts.reshape(-1, mesh.dim), mesh.dim).reshape(pts.shape)
        vals = const[hot, None] + deps[hot, None] * np.einsum("fqk,fk->fq", gG, n[hot])
        scale = faces.measures[idx[hot]] * math.factorial(mesh.dim - 1)
        out[hot] = scale * np.einsum("q,fq->f", face_rule.weights, vals**2)
    return out


def estimate(mesh: Mesh, dm: DielectricModel, cs: ChargeSystem, u_h, quad=None, *, source=None,
             face_quad=None, data: SolventQuadrature | None = None, guard=OVERFLOW_GUARD) -> ErrorEstimate:
    """Per-element indicators for the P1 solution ``u_h`` (vertex vector).

    ``source`` is the optional volumetric right-hand side used with
    manufactured solutions; the bulk residual is then ``f - B(u_h)``.
    """
    u_h = np.asarray(u_h, float)
    quad = quad or default_rule(mesh.dim)
    face_rule = face_quad or simplex_rule(mesh.dim - 1, FACE_DEGREE)
    data = data or SolventQuadrature(mesh, cs, quad)
    ne = mesh.n_elements
    h = mesh.diameters

    bulk = np.zeros(ne)
    if source is not None:
        pts = quad.points(mesh.element_vertices)
        fvals = np.asarray(source(pts.reshape(-1, mesh.dim)), float).reshape(pts.shape[:2])
        wdet_all = quad.weights[None, :] * (mesh.volumes * math.factorial(mesh.dim))[:, None]
        res = fvals.copy()
    else:
        res = None
    if data.elements.size and dm.kappa_bar_sq_s > 0:
        Bq = dm.kappa_bar_sq_s * np.sinh(data.argument(u_h, guard))
        if res is None:
            bulk[data.elements] = np.sum(data.wdet * Bq**2, axis=1)
        else:
            res[data.elements] -= Bq
    if res is not None:
        bulk = np.sum(wdet_all * res**2, axis=1)
    bulk *= h**2

    faces = mesh.faces
    grad_u = element_gradients(mesh, u_h)
    eps = dm.eps(mesh.region).astype(float)
    interior = np.flatnonzero(faces.kind != BOUNDARY)
    jumps = _face_jumps_sq(mesh, faces, interior, grad_u, eps, cs, face_rule)
    contrib = 0.5 * faces.diameters[interior] * jumps
    jump = np.zeros(ne)
    np.add.at(jump, faces.elements[interior, 0], contrib)
    np.add.at(jump, faces.elements[interior, 1], contrib)

    osc = np.zeros(ne)
    if data.elements.size:
        s = data.elements
        gu2 = np.sum(grad_u[s] ** 2, axis=1) * mesh.volumes[s]
        gG2 = np.sum(data.wdet * np.sum(data.gradG**2, axis=2), axis=1)
        osc[s] = h[s] ** 4 * (gu2 + gG2)
    return ErrorEstimate(bulk + jump, osc, bulk, jump)


def face_jump(mesh: Mesh, face: FaceInfo | int, u_h, dm: DielectricModel, cs: ChargeSystem,
              quad=None, normal=None) -> float:
    """Squared L2 norm over one face of the normal flux jump.

    Boundary faces return 0.  ``normal`` may override the stored orientation;
    the result does not depend on it.
    """
    faces = mesh.faces
    if isinstance(face, FaceInfo):
        key = tuple(sorted(face.vertices))
        matches = np.flatnonzero(np.all(np.sort(faces.vertices, axis=1) == key, axis=1))
        if matches.size != 1:
            raise ValueError("face does not belong to this mesh")
        i = int(matches[0])
    else:
        i = int(face)
    if faces.kind[i] == BOUNDARY:
        return 0.0
    face_rule = quad or simplex_rule(mesh.dim - 1, FACE_DEGREE)
    grad_u = element_gradients(mesh, u_h)
    eps = dm.eps(mesh.region).astype(float)
    if normal is not None:
        from copy import copy

        faces = copy(faces)
        faces.normals = faces.normals.copy()
        faces.normals[i] = np.asarray(normal, float)
    return float(_face_jumps_sq(mesh, faces, np.array([i]), grad_u, eps, cs, face_rule)[0])


def is_interface_face(mesh: Mesh, i: int) -> bool:
    return bool(mesh.faces.kind[i] == INTERFACE)
