"""Conforming simplicial meshes.

Triangles follow the newest-vertex convention: for ``elements[k] = (a, b, c)``
the refinement edge is ``(a, b)`` and ``c`` is the newest vertex.  Bisection
replaces ``(a, b, c)`` by ``(c, a, m)`` and ``(b, c, m)`` with ``m`` the
midpoint of ``ab``; both children keep the positive orientation of the parent.

Meshes are immutable.  Refinement appends new vertices after the existing
ones, so the vertex array of a coarse mesh is always a prefix of the vertex
array of any mesh obtained from it by :func:`bisect`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import MeshError
from .geometry import MOLECULAR, SOLVENT, DomainBox, region_of

INTERIOR, BOUNDARY, INTERFACE = 0, 1, 2
_FACE_KIND_NAMES = {INTERIOR: "interior", BOUNDARY: "boundary", INTERFACE: "interface"}


def _readonly(a, dtype):
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


class Mesh:
    """Immutable simplicial mesh with region labels and bisection genealogy.

    Parameters
    ----------
    vertices : (nv, d) array
    elements : (ne, d+1) int array, positively oriented
    box : DomainBox
        The axis-aligned domain the mesh triangulates.
    region : (ne,) labels, ``MOLECULAR`` or ``SOLVENT`` (default all solvent)
    generation : (ne,) bisection depth relative to the initial mesh
    parent : (ne,) index of the element this one came from in the mesh it
        was refined from, ``-1`` for initial meshes
    vertex_parents : (nv, 2) endpoints of the edge each vertex bisects,
        ``-1`` for vertices of the initial mesh
    """

    def __init__(self, vertices, elements, box, region=None, generation=None, parent=None,
                 vertex_parents=None, check=True):
        self.vertices = _readonly(vertices, float)
        self.elements = _readonly(elements, np.int64)
        self.box = box
        ne, nv = len(self.elements), len(self.vertices)
        if self.elements.ndim != 2 or self.elements.shape[1] != self.dim + 1:
            raise MeshError("elements must have d+1 vertex indices")
        self.region = _readonly(np.full(ne, SOLVENT) if region is None else region, np.int8)
        self.generation = _readonly(np.zeros(ne) if generation is None else generation, np.int64)
        self.parent = _readonly(np.full(ne, -1) if parent is None else parent, np.int64)
        vp = np.full((nv, 2), -1) if vertex_parents is None else vertex_parents
        self.vertex_parents = _readonly(vp, np.int64)
        if check:
            if self.elements.size and (self.elements.min() < 0 or self.elements.max() >= nv):
                raise MeshError("element vertex index out of range")
            if np.any(self.signed_volumes <= 0):
                bad = int(np.argmax(self.signed_volumes <= 0))
                raise MeshError(f"element {bad} has non-positive signed volume")

    @property
    def dim(self):
        return self.vertices.shape[1]

    @property
    def n_vertices(self):
        return len(self.vertices)

    @property
    def n_elements(self):
        return len(self.elements)

    def __repr__(self):
        return f"Mesh(dim={self.dim}, vertices={self.n_vertices}, elements={self.n_elements})"

    def replace(self, **changes):
        kw = dict(vertices=self.vertices, elements=self.elements, box=self.box, region=self.region,
                  generation=self.generation, parent=self.parent, vertex_parents=self.vertex_parents)
        kw.update(changes)
        return Mesh(**kw)

    @cached_property
    def element_vertices(self):
        """Coordinates of element vertices, shape ``(ne, d+1, d)``."""
        return self.vertices[self.elements]

    @cached_property
    def jacobians(self):
        X = self.element_vertices
        return X[:, 1:, :] - X[:, :1, :]

    @cached_property
    def signed_volumes(self):
        return np.linalg.det(self.jacobians) / math.factorial(self.dim)

    @property
    def volumes(self):
        return np.abs(self.signed_volumes)

    @cached_property
    def barycenters(self):
        return self.element_vertices.mean(axis=1)

    @cached_property
    def diameters(self):
        """Element diameters ``h_tau`` (longest edge)."""
        X = self.element_vertices
        d = np.linalg.norm(X[:, :, None, :] - X[:, None, :, :], axis=3)
        return d.reshape(len(X), -1).max(axis=1)

    @cached_property
    def basis_gradients(self):
        """Constant gradients of the d+1 barycentric basis functions, ``(ne, d+1, d)``."""
        inv = np.linalg.inv(self.jacobians)
        g = np.empty((self.n_elements, self.dim + 1, self.dim))
        g[:, 1:, :] = np.swapaxes(inv, 1, 2)
        g[:, 0, :] = -g[:, 1:, :].sum(axis=1)
        return g

    @cached_property
    def edges(self):
        """Unique vertex pairs ``(i, j)`` with ``i < j``."""
        d1 = self.dim + 1
        pairs = np.array([(i, j) for i in range(d1) for j in range(i + 1, d1)])
        e = self.elements[:, pairs].reshape(-1, 2)
        e = np.sort(e, axis=1)
        return np.unique(e, axis=0)

    @property
    def refinement_edge(self):
        """Global vertex pairs of each triangle's refinement edge (2D only)."""
        if self.dim != 2:
            raise MeshError("refinement edges are tracked for triangles only")
        return self.elements[:, :2]

    @cached_property
    def faces(self):
        return compute_faces(self)

    @cached_property
    def boundary_vertex(self):
        flag = np.zeros(self.n_vertices, dtype=bool)
        f = self.faces
        flag[f.vertices[f.kind == BOUNDARY].ravel()] = True
        flag.setflags(write=False)
        return flag

    @cached_property
    def vertex_patches(self):
        """CSR-style incidence: element indices touching each vertex."""
        from scipy.sparse import csr_matrix

        ne, d1 = self.elements.shape
        rows = self.elements.ravel()
        cols = np.repeat(np.arange(ne), d1)
        return csr_matrix((np.ones(rows.size, dtype=np.int8), (rows, cols)), shape=(self.n_vertices, ne))

    def patch(self, elements):
        """Union of the patches ``omega_tau`` (elements sharing a vertex) of ``elements``."""
        elements = np.atleast_1d(np.asarray(elements, dtype=np.int64))
        verts = np.unique(self.elements[elements].ravel())
        touched = self.vertex_patches[verts].indices
        return np.unique(touched)

    def total_volume(self):
        return float(self.volumes.sum())


# ----------------------------------------------------------------------------
# faces


@dataclass(frozen=True)
class FaceInfo:
    vertices: tuple
    elements: tuple  # one or two adjacent elements
    normal: np.ndarray
    diameter: float
    measure: float
    kind: str


class Faces:
    """All (d-1)-faces of a mesh in array form.

    ``elements[:, 1] == -1`` marks boundary faces.  ``normals`` point out of
    ``elements[:, 0]`` (hence outward on the boundary); this fixes the
    arbitrary orientation of interior faces once and for all.
    """

    def __init__(self, vertices, elements, local, normals, diameters, measures, kind):
        self.vertices = vertices
        self.elements = elements
        self.local = local  # local index of the face in each adjacent element (opposite vertex)
        self.normals = normals
        self.diameters = diameters
        self.measures = measures
        self.kind = kind

    def __len__(self):
        return len(self.vertices)

    def info(self, i) -> FaceInfo:
        els = tuple(int(e) for e in self.elements[i] if e >= 0)
        return FaceInfo(tuple(int(v) for v in self.vertices[i]), els, self.normals[i].copy(),
                        float(self.diameters[i]), float(self.measures[i]),
                        _FACE_KIND_NAMES[int(self.kind[i])])

    def __iter__(self):
        return (self.info(i) for i in range(len(self)))

    def element_faces(self, n_elements, d1):
        """Face index for each (element, local face) pair, ``(ne, d+1)``."""
        out = np.full((n_elements, d1), -1, dtype=np.int64)
        for side in (0, 1):
            e = self.elements[:, side]
            ok = e >= 0
            out[e[ok], self.local[ok, side]] = np.flatnonzero(ok)
        return out


def _face_keys(sorted_faces):
    k = np.zeros(len(sorted_faces), dtype=np.int64)
    for col in range(sorted_faces.shape[1]):
        k = k * (1 << 21) + sorted_faces[:, col]
    return k


def compute_faces(mesh: Mesh) -> Faces:
    """Enumerate faces; raises :class:`MeshError` for non-conforming meshes."""
    d = mesh.dim
    d1 = d + 1
    ne = mesh.n_elements
    if mesh.n_vertices >= (1 << 21):
        raise MeshError("mesh too large for face hashing")
    others = np.array([[j for j in range(d1) if j != i] for i in range(d1)])
    local_faces = mesh.elements[:, others]  # (ne, d1, d)
    flat = np.sort(local_faces.reshape(-1, d), axis=1)
    keys = _face_keys(flat)
    uniq, first, inv, counts = np.unique(keys, return_index=True, return_inverse=True, return_counts=True)
    if np.any(counts > 2):
        raise MeshError("a face is shared by more than two elements")
    nf = len(uniq)
    owner = np.repeat(np.arange(ne), d1)
    local = np.tile(np.arange(d1), ne)
    order = np.argsort(inv, kind="stable")
    starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
    elements = np.full((nf, 2), -1, dtype=np.int64)
    loc = np.full((nf, 2), -1, dtype=np.int64)
    elements[:, 0] = owner[order[starts]]
    loc[:, 0] = local[order[starts]]
    two = counts == 2
    elements[two, 1] = owner[order[starts[two] + 1]]
    loc[two, 1] = local[order[starts[two] + 1]]
    fverts = flat[first]

    X = mesh.vertices[fverts]  # (nf, d, d)
    if d == 2:
        t = X[:, 1] - X[:, 0]
        normal = np.column_stack([t[:, 1], -t[:, 0]])
        measure = np.linalg.norm(t, axis=1)
        diam = measure
    elif d == 3:
        normal = np.cross(X[:, 1] - X[:, 0], X[:, 2] - X[:, 0])
        measure = 0.5 * np.linalg.norm(normal, axis=1)
        diam = np.max(np.stack([np.linalg.norm(X[:, 1] - X[:, 0], axis=1),
                                np.linalg.norm(X[:, 2] - X[:, 0], axis=1),
                                np.linalg.norm(X[:, 2] - X[:, 1], axis=1)]), axis=0)
    else:
        raise MeshError("only 2D and 3D meshes are supported")
    normal = normal / np.linalg.norm(normal, axis=1, keepdims=True)
    opposite = mesh.vertices[mesh.elements[elements[:, 0], loc[:, 0]]]
    flip = np.einsum("fk,fk->f", opposite - X[:, 0], normal) > 0
    normal[flip] *= -1

    kind = np.full(nf, INTERIOR, dtype=np.int8)
    bnd = ~two
    kind[bnd] = BOUNDARY
    reg = mesh.region
    kind[two & (reg[elements[:, 0]] != reg[np.maximum(elements[:, 1], 0)])] = INTERFACE
    if np.any(bnd):
        centroids = X[bnd].mean(axis=1)
        on_box = mesh.box.on_boundary(centroids, tol=1e-10)
        if not np.all(on_box):
            raise MeshError("non-conforming mesh: unmatched face in the interior of the domain")
    return Faces(fverts, elements, loc, normal, diam, measure, kind)


def is_conforming(mesh: Mesh) -> bool:
    try:
        compute_faces(mesh)
    except MeshError:
        return False
    return True


# ----------------------------------------------------------------------------
# structured generators


def build_square_grid(n: int, box: DomainBox | None = None) -> Mesh:
    """Uniform grid of ``n x n`` cells, each split into two isosceles right triangles.

    All diagonals run from the lower-left to the upper-right corner of a cell and
    are the refinement edges of both triangles sharing them.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    box = box or DomainBox.unit(2)
    if box.dim != 2:
        raise ValueError("square grid needs a 2D box")
    xs = np.linspace(box.lower[0], box.upper[0], n + 1)
    ys = np.linspace(box.lower[1], box.upper[1], n + 1)
    X, Y = np.meshgrid(xs, ys, indexing="xy")
    vertices = np.column_stack([X.ravel(), Y.ravel()])
    i, j = np.meshgrid(np.arange(n), np.arange(n), indexing="xy")
    i, j = i.ravel(), j.ravel()
    p00 = j * (n + 1) + i
    p10 = p00 + 1
    p01 = p00 + n + 1
    p11 = p01 + 1
    lower = np.column_stack([p11, p00, p10])
    upper = np.column_stack([p00, p11, p01])
    elements = np.empty((2 * n * n, 3), dtype=np.int64)
    elements[0::2] = lower
    elements[1::2] = upper
    return Mesh(vertices, elements, box)


def _cube_vertices(n, box):
    axes = [np.linspace(box.lower[k], box.upper[k], n + 1) for k in range(3)]
    X, Y, Z = np.meshgrid(*axes, indexing="ij")
    vertices = np.column_stack([X.ravel(), Y.ravel(), Z.ravel()])

    def vid(i, j, k):
        return (i * (n + 1) + j) * (n + 1) + k

    return vertices, vid


def _orient(vertices, tets):
    tets = np.array(tets, dtype=np.int64)
    X = vertices[tets]
    det = np.linalg.det(X[:, 1:] - X[:, :1])
    neg = det < 0
    tets[neg, 0], tets[neg, 1] = tets[neg, 1].copy(), tets[neg, 0].copy()
    return tets


def build_cube_5tet_grid(n: int, box: DomainBox | None = None) -> Mesh:
    """Cube grid with every cell cut into 5 tetrahedra (one regular, four corners).

    The central tetrahedron of a cell uses the four cell corners with even
    global index parity, so neighbouring cells are mirror images and the face
    diagonals match.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    box = box or DomainBox.unit(3)
    vertices, vid = _cube_vertices(n, box)
    corners = [(a, b, c) for a in (0, 1) for b in (0, 1) for c in (0, 1)]
    tets = []
    for i in range(n):
        for j in range(n):
            for k in range(n):
                even = [c for c in corners if (i + j + k + sum(c)) % 2 == 0]
                odd = [c for c in corners if (i + j + k + sum(c)) % 2 == 1]
                tets.append([vid(i + a, j + b, k + c) for a, b, c in even])
                for o in odd:
                    nbrs = [e for e in even if sum(abs(x - y) for x, y in zip(o, e)) == 1]
                    tets.append([vid(i + o[0], j + o[1], k + o[2])]
                                + [vid(i + a, j + b, k + c) for a, b, c in nbrs])
    return Mesh(vertices, _orient(vertices, tets), box)


def build_cube_6tet_grid(n: int, box: DomainBox | None = None) -> Mesh:
    """Kuhn triangulation: every cell cut into 6 tetrahedra around its main diagonal."""
    if n < 1:
        raise ValueError("n must be >= 1")
    box = box or DomainBox.unit(3)
    vertices, vid = _cube_vertices(n, box)
    perms = [(0, 1, 2), (0, 2, 1), (1, 0, 2), (1, 2, 0), (2, 0, 1), (2, 1, 0)]
    tets = []
    for i in range(n):
        for j in range(n):
            for k in range(n):
                for p in perms:
                    cur = [0, 0, 0]
                    path = [vid(i, j, k)]
                    for axis in p:
                        cur[axis] = 1
                        path.append(vid(i + cur[0], j + cur[1], k + cur[2]))
                    tets.append(path)
    return Mesh(vertices, _orient(vertices, tets), box)


# ----------------------------------------------------------------------------
# regions


def assign_regions(mesh: Mesh, ig, snap: bool = False, max_move: float = 0.5) -> Mesh:
    """Label elements by the region containing their barycenter.

    With ``snap=True`` the vertices on the discrete interface (vertices touching
    both regions) are projected onto the exact interface, provided the move is
    at most ``max_move`` times the shortest incident edge and keeps every
    incident element positively oriented with at least a third of its volume.
    """
    region = region_of(ig, mesh.barycenters).astype(np.int8)
    out = mesh.replace(region=region)
    if not snap:
        return out
    V = out.vertices.copy()
    touches_m = np.zeros(out.n_vertices, bool)
    touches_s = np.zeros(out.n_vertices, bool)
    touches_m[out.elements[region == MOLECULAR].ravel()] = True
    touches_s[out.elements[region == SOLVENT].ravel()] = True
    candidates = np.flatnonzero(touches_m & touches_s & ~out.boundary_vertex)
    patches = out.vertex_patches.tocsr()
    fact = math.factorial(out.dim)
    for v in candidates:
        target = ig.project(V[v])[0]
        incident = patches[v].indices
        tets = out.elements[incident]
        verts = np.unique(tets.ravel())
        verts = verts[verts != v]
        shortest = np.min(np.linalg.norm(V[verts] - V[v], axis=1))
        if np.linalg.norm(target - V[v]) > max_move * shortest:
            continue
        old = V[tets]
        trial = V.copy()
        trial[v] = target
        new = trial[tets]
        old_vol = np.linalg.det(old[:, 1:] - old[:, :1]) / fact
        new_vol = np.linalg.det(new[:, 1:] - new[:, :1]) / fact
        if np.all(new_vol > old_vol / 3):
            V[v] = target
    return out.replace(vertices=V)


# ----------------------------------------------------------------------------
# newest vertex bisection


def _edge_keys(a, b):
    lo = np.minimum(a, b)
    hi = np.maximum(a, b)
    return (lo << 32) | hi


def _bisect_once(mesh: Mesh, marked: np.ndarray, ig=None, snap=False) -> Mesh:
    T = mesh.elements
    ne = len(T)
    nv = mesh.n_vertices
    local_edges = ((0, 1), (1, 2), (2, 0))
    keys = np.concatenate([_edge_keys(T[:, a], T[:, b]) for a, b in local_edges])
    uniq, inv = np.unique(keys, return_inverse=True)
    elem_edges = inv.reshape(3, ne).T
    marked_edge = np.zeros(len(uniq), dtype=bool)
    marked_edge[elem_edges[marked, 0]] = True
    # conforming closure: any element with a marked edge must split its refinement edge
    while True:
        has = marked_edge[elem_edges].any(axis=1)
        newly = has & ~marked_edge[elem_edges[:, 0]]
        if not newly.any():
            break
        marked_edge[elem_edges[newly, 0]] = True

    medges = np.flatnonzero(marked_edge)
    a = (uniq[medges] >> 32).astype(np.int64)
    b = (uniq[medges] & 0xFFFFFFFF).astype(np.int64)
    mid = 0.5 * (mesh.vertices[a] + mesh.vertices[b])
    if snap and ig is not None:
        reg = mesh.region
        rmin = np.full(len(uniq), 2)
        rmax = np.full(len(uniq), -1)
        for col in range(3):
            np.minimum.at(rmin, elem_edges[:, col], reg)
            np.maximum.at(rmax, elem_edges[:, col], reg)
        on_gamma = (rmin[medges] == MOLECULAR) & (rmax[medges] == SOLVENT)
        if np.any(on_gamma):
            mid[on_gamma] = ig.project(mid[on_gamma])
    mid_index = np.full(len(uniq), -1, dtype=np.int64)
    mid_index[medges] = nv + np.arange(len(medges))
    vertices = np.vstack([mesh.vertices, mid])
    vparents = np.vstack([mesh.vertex_parents, np.column_stack([a, b])])

    elems = T.copy()
    parent = np.arange(ne)
    gen = mesh.generation.copy()
    region = mesh.region.copy()
    while True:
        k = _edge_keys(elems[:, 0], elems[:, 1])
        pos = np.searchsorted(uniq, k)
        pos = np.minimum(pos, len(uniq) - 1)
        m = np.where(uniq[pos] == k, mid_index[pos], -1)
        split = np.flatnonzero(m >= 0)
        if split.size == 0:
            break
        a_, b_, c_ = elems[split, 0], elems[split, 1], elems[split, 2]
        m_ = m[split]
        child2 = np.column_stack([b_, c_, m_])
        elems[split] = np.column_stack([c_, a_, m_])
        elems = np.vstack([elems, child2])
        parent = np.concatenate([parent, parent[split]])
        gen[split] += 1
        gen = np.concatenate([gen, gen[split]])
        region = np.concatenate([region, region[split]])
    return Mesh(vertices, elems, mesh.box, region=region, generation=gen, parent=parent,
                vertex_parents=vparents)


def bisect(mesh: Mesh, marked, depth: int = 1, ig=None, snap: bool = False) -> Mesh:
    """Refine marked triangles by ``depth`` generations of newest vertex bisection.

    The closure step keeps the mesh conforming.  Children inherit the region
    label of their parent, so the discrete interface (and hence the discrete
    problem) is unchanged and the finite element spaces are nested.  With
    ``snap=True`` and an interface ``ig``, midpoints of edges separating the two
    regions are projected onto ``ig``; this improves the interface fit but
    breaks exact nestedness.

    ``parent`` of the returned mesh indexes elements of ``mesh``.  With
    ``depth=3`` every marked triangle gets a new vertex in its interior and on
    each of its edges.
    """
    if mesh.dim != 2:
        raise MeshError("bisection is implemented for triangles only")
    if depth < 1:
        raise ValueError("depth must be >= 1")
    marked = np.asarray(marked)
    if marked.dtype == bool:
        if marked.shape != (mesh.n_elements,):
            raise ValueError("boolean mark array has the wrong length")
        mask = marked.copy()
    else:
        if marked.size and (marked.min() < 0 or marked.max() >= mesh.n_elements):
            raise ValueError("marked element index out of range")
        mask = np.zeros(mesh.n_elements, dtype=bool)
        mask[marked.astype(np.int64)] = True
    if not mask.any():
        return mesh.replace(parent=np.arange(mesh.n_elements))
    base_gen = mesh.generation
    cur = mesh
    origin = np.arange(mesh.n_elements)
    for r in range(depth):
        todo = mask[origin] & (cur.generation < base_gen[origin] + r + 1)
        if not todo.any():
            continue
        cur = _bisect_once(cur, todo, ig=ig, snap=snap)
        origin = origin[cur.parent]
    return cur.replace(parent=origin)


def uniform_refine(mesh: Mesh, times: int = 1) -> Mesh:
    """Halve the mesh size ``times`` times (two bisection sweeps each); parent maps compose."""
    origin = np.arange(mesh.n_elements)
    cur = mesh
    for _ in range(times):
        cur = bisect(cur, np.ones(cur.n_elements, bool), depth=2)
        origin = origin[cur.parent]
    return cur.replace(parent=origin)


def refine_to_generation(mesh: Mesh, generation: int) -> Mesh:
    """Bisect until every element has at least the given generation."""
    origin = np.arange(mesh.n_elements)
    cur = mesh
    while True:
        todo = cur.generation < generation
        if not todo.any():
            return cur.replace(parent=origin)
        cur = _bisect_once(cur, todo)
        origin = origin[cur.parent]


# ----------------------------------------------------------------------------
# quality and integrity checks


def shape_regularity_report(mesh: Mesh):
    """Return ``(min_angle_degrees, max_generation)``.

    For triangles the angle is the smallest interior angle; for tetrahedra it
    is the smallest dihedral angle.
    """
    X = mesh.element_vertices
    if mesh.dim == 2:
        angles = []
        for i in range(3):
            p = X[:, i]
            u = X[:, (i + 1) % 3] - p
            v = X[:, (i + 2) % 3] - p
            c = np.einsum("ek,ek->e", u, v) / (np.linalg.norm(u, axis=1) * np.linalg.norm(v, axis=1))
            angles.append(np.degrees(np.arccos(np.clip(c, -1, 1))))
        amin = float(np.min(angles))
    else:
        g = mesh.basis_gradients
        angles = []
        for i in range(4):
            for j in range(i + 1, 4):
                c = -np.einsum("ek,ek->e", g[:, i], g[:, j]) / (
                    np.linalg.norm(g[:, i], axis=1) * np.linalg.norm(g[:, j], axis=1))
                angles.append(np.degrees(np.arccos(np.clip(c, -1, 1))))
        amin = float(np.min(angles))
    return amin, int(mesh.generation.max(initial=0))


def barycentric(points, simplex):
    """Barycentric coordinates of ``points (..., d)`` w.r.t. simplex vertices ``(..., d+1, d)``."""
    J = simplex[..., 1:, :] - simplex[..., :1, :]
    rhs = points - simplex[..., 0, :]
    lam = np.linalg.solve(np.swapaxes(J, -1, -2), rhs[..., None])[..., 0]
    return np.concatenate([1 - lam.sum(axis=-1, keepdims=True), lam], axis=-1)


def check_nested(coarse: Mesh, fine: Mesh, tol: float = 1e-12) -> dict:
    """Verify that ``fine`` (returned by one refinement call) nests ``coarse``.

    Checks that old vertices are unchanged, new vertices are exact midpoints of
    their parent edges, every fine element lies inside its parent and parent
    volumes equal the sum of their children's.
    """
    nvc = coarse.n_vertices
    res = {}
    res["prefix"] = bool(np.array_equal(fine.vertices[:nvc], coarse.vertices))
    vp = fine.vertex_parents[nvc:]
    mids = 0.5 * (fine.vertices[vp[:, 0]] + fine.vertices[vp[:, 1]]) if len(vp) else np.zeros((0, fine.dim))
    res["midpoints"] = bool(np.array_equal(mids, fine.vertices[nvc:]))
    par = fine.parent
    lam = barycentric(fine.element_vertices, coarse.element_vertices[par][:, None, :, :])
    res["inside"] = bool(np.all(lam >= -tol))
    vol = np.zeros(coarse.n_elements)
    np.add.at(vol, par, fine.volumes)
    res["volumes"] = bool(np.allclose(vol, coarse.volumes, rtol=tol, atol=0))
    res["regions"] = bool(np.array_equal(fine.region, coarse.region[par]))
    res["ok"] = all(res.values())
    return res


def check_interior_nodes(coarse: Mesh, fine: Mesh, marked, tol: float = 1e-12) -> bool:
    """Each marked coarse element and each of its faces holds a fine vertex in its interior."""
    marked = np.asarray(marked)
    if marked.dtype == bool:
        marked = np.flatnonzero(marked)
    if marked.size == 0:
        return True
    d1 = coarse.dim + 1
    is_marked = np.zeros(coarse.n_elements, bool)
    is_marked[marked] = True
    sel = np.flatnonzero(is_marked[fine.parent])
    par = fine.parent[sel]
    lam = barycentric(fine.element_vertices[sel], coarse.element_vertices[par][:, None, :, :])
    inside = np.all(lam > tol, axis=2).any(axis=1)
    has_interior = np.zeros(coarse.n_elements, bool)
    np.logical_or.at(has_interior, par, inside)
    face_hit = np.zeros((coarse.n_elements, d1), bool)
    for k in range(d1):
        on_face = (np.abs(lam[..., k]) <= tol) & np.all(np.delete(lam, k, axis=2) > tol, axis=2)
        np.logical_or.at(face_hit[:, k], par, on_face.any(axis=1))
    return bool(has_interior[marked].all() and face_hit[marked].all())


def prolongate(coarse: Mesh, u, fine: Mesh) -> np.ndarray:
    """Values at ``fine`` vertices of the P1 function ``u`` on the nested mesh ``coarse``.

    Vertices shared with ``coarse`` (matched by exact coordinates) keep their
    values; every other vertex takes the mean of the endpoints of the edge it
    bisects, processed in creation order.  Exact when ``fine`` is a newest
    vertex refinement of ``coarse`` without snapping.
    """
    u = np.asarray(u, dtype=float)
    nvf = fine.n_vertices
    out = np.full(nvf, np.nan)
    if coarse.n_vertices <= nvf and np.array_equal(fine.vertices[:coarse.n_vertices], coarse.vertices):
        out[:coarse.n_vertices] = u
    else:
        lookup = {tuple(x): i for i, x in enumerate(coarse.vertices)}
        idx = np.array([lookup.get(tuple(x), -1) for x in fine.vertices])
        hit = idx >= 0
        out[hit] = u[idx[hit]]
    missing = np.flatnonzero(np.isnan(out))
    vp = fine.vertex_parents
    if np.any(vp[missing, 0] < 0):
        raise MeshError("fine mesh is not a refinement of the coarse mesh")
    # fill in waves; each wave handles vertices whose parents are known
    while missing.size:
        ready = ~np.isnan(out[vp[missing]]).any(axis=1)
        if not ready.any():
            raise MeshError("vertex genealogy is inconsistent")
        block = missing[ready]
        out[block] = 0.5 * (out[vp[block, 0]] + out[vp[block, 1]])
        missing = missing[~ready]
    return out
