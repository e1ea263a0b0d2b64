import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from numpy.polynomial.legendre import leggauss

from pbafem.assembly import error_norms
from pbafem.errors import OverflowGuardError
from pbafem.estimator import element_gradients, estimate, face_jump, is_interface_face
from pbafem.geometry import MOLECULAR, SOLVENT, ChargeSystem, DielectricModel, DomainBox, eval_grad_G, make_charges
from pbafem.mesh import BOUNDARY, INTERFACE, Mesh, build_square_grid, uniform_refine
from pbafem.problems import born_problem, manufactured_problem
from pbafem.quadrature import simplex_rule
from pbafem.solver import solve_rpbe

UNIT = DomainBox([0, 0], [1, 1])


def two_triangles(regions=(SOLVENT, MOLECULAR)):
    """Unit square split along the diagonal (0,0)-(1,1)."""
    V = np.array([[0, 0], [1, 0], [1, 1], [0, 1]], float)
    E = np.array([[0, 1, 2], [0, 2, 3]])
    return Mesh(V, E, UNIT, region=np.array(regions, np.int8))


def segment_integral(f, a, b, n=40):
    """Gauss-Legendre integral of ``f(points)`` over the segment ``[a, b]``."""
    t, w = leggauss(n)
    s = 0.5 * (t + 1)
    pts = a[None] + s[:, None] * (b - a)[None]
    return 0.5 * np.linalg.norm(b - a) * float(w @ f(pts))


def test_linear_solution_has_zero_indicator():
    m = build_square_grid(4)
    u = 1.5 * m.vertices[:, 0] - 0.5 * m.vertices[:, 1] + 2
    est = estimate(m, DielectricModel(3.0, 3.0), ChargeSystem(), u)
    np.testing.assert_allclose(est.eta_sq, 0.0, atol=1e-25)
    assert est.osc_global_sq == pytest.approx(np.sum(m.diameters**4 * m.volumes * 2.5), rel=1e-13)


def test_bulk_term_closed_form():
    m = build_square_grid(2)
    c = 0.8
    est = estimate(m, DielectricModel(1.0, 1.0, 1.0), ChargeSystem(), np.full(m.n_vertices, c))
    np.testing.assert_allclose(est.bulk_sq, m.diameters**2 * np.sinh(c) ** 2 * m.volumes, rtol=1e-13)
    np.testing.assert_allclose(est.jump_sq, 0.0, atol=0)
    np.testing.assert_allclose(est.eta_sq, est.bulk_sq, rtol=0)


def test_bulk_term_scaling_under_uniform_refinement():
    m = build_square_grid(2)
    f = uniform_refine(m, 1)
    dm = DielectricModel(1.0, 1.0, 1.0)
    c = -0.3
    a = estimate(m, dm, ChargeSystem(), np.full(m.n_vertices, c)).bulk_sq
    b = estimate(f, dm, ChargeSystem(), np.full(f.n_vertices, c)).bulk_sq
    # h halves and |tau| quarters
    np.testing.assert_allclose(b, a[f.parent] / 16, rtol=1e-13)


def test_two_element_jump():
    m = two_triangles()
    u = np.array([0.0, 1.0, 3.0, 1.0])  # gradients (1, 2) and (2, 1)
    np.testing.assert_allclose(element_gradients(m, u), [[1, 2], [2, 1]], atol=1e-15)
    dm = DielectricModel(2.0, 80.0)
    est = estimate(m, dm, ChargeSystem(), u)
    # flux (80, 160) against (4, 2); n = (1, -1)/sqrt2 on the diagonal of length sqrt2
    # jump^2 = 82^2 / 2, 1/2 h_S ||jump||^2 = 1/2 * sqrt2 * 3362 * sqrt2
    np.testing.assert_allclose(est.jump_sq, [3362.0, 3362.0], rtol=1e-14)
    np.testing.assert_allclose(est.bulk_sq, 0.0)
    diag = int(np.flatnonzero(m.faces.kind != BOUNDARY)[0])
    assert is_interface_face(m, diag)
    assert face_jump(m, diag, u, dm, ChargeSystem()) == pytest.approx(3362 * math.sqrt(2), rel=1e-14)


def test_interface_jump_with_G_matches_independent_quadrature():
    m = two_triangles()
    u = np.array([0.0, 1.0, 3.0, 1.0])
    dm = DielectricModel(2.0, 80.0)
    cs = make_charges([[-0.7, 1.9]], [2.0], eps_m=2.0)
    a, b = m.vertices[0], m.vertices[2]
    i = int(np.flatnonzero(m.faces.kind == INTERFACE)[0])
    n = m.faces.normals[i]
    e0, e1 = m.faces.elements[i]
    eps = dm.eps(m.region)
    g = element_gradients(m, u)
    c = n @ (eps[e1] * g[e1] - eps[e0] * g[e0])
    deps = eps[e1] - eps[e0]
    expected = segment_integral(lambda x: (c + deps * eval_grad_G(cs, x, 2) @ n) ** 2, a, b)
    # the default degree-4 edge rule and a degree-8 rule converge to the 40-point Gauss value
    assert face_jump(m, i, u, dm, cs) == pytest.approx(expected, rel=3e-5)
    assert face_jump(m, i, u, dm, cs, quad=simplex_rule(1, 8)) == pytest.approx(expected, rel=1e-7)
    # the G term is absent on a face between elements of equal eps
    same = two_triangles((SOLVENT, SOLVENT))
    j = int(np.flatnonzero(same.faces.kind != BOUNDARY)[0])
    assert face_jump(same, j, u, dm, cs) == pytest.approx(face_jump(same, j, u, dm, ChargeSystem()), rel=1e-15)


def test_face_jump_orientation_invariant(small_born, rng):
    p = small_born
    u = rng.uniform(-1, 1, p.mesh.n_vertices)
    faces = p.mesh.faces
    for i in rng.choice(np.flatnonzero(faces.kind == INTERFACE), 5, replace=False):
        n = faces.normals[i]
        a = face_jump(p.mesh, int(i), u, p.dm, p.cs)
        b = face_jump(p.mesh, int(i), u, p.dm, p.cs, normal=-n)
        assert a == pytest.approx(b, rel=1e-14)
        assert face_jump(p.mesh, faces.info(int(i)), u, p.dm, p.cs) == a


def test_boundary_face_contributes_nothing(small_born):
    p = small_born
    b = int(np.flatnonzero(p.mesh.faces.kind == BOUNDARY)[0])
    assert face_jump(p.mesh, b, np.ones(p.mesh.n_vertices), p.dm, p.cs) == 0.0


def test_balanced_interface_flux():
    # box [0,1]x[-1,1], solvent above the x axis, molecule below; the charge sits on the
    # line of the interface so grad G . n = 0 there
    V = np.array([[0, 0], [1, 0], [1, 1], [0, 1], [0, -1], [1, -1]], float)
    E = np.array([[0, 1, 2], [0, 2, 3], [0, 5, 1], [0, 4, 5]])
    region = np.array([SOLVENT, SOLVENT, MOLECULAR, MOLECULAR], np.int8)
    m = Mesh(V, E, DomainBox([0, -1], [1, 1]), region=region)
    dm = DielectricModel(2.0, 80.0)
    cs = make_charges([[-0.5, 0.0]], [1.0], eps_m=2.0)
    # u = y above and 40 y below: eps_s * 1 = eps_m * 40
    u = np.where(V[:, 1] >= 0, V[:, 1], 40 * V[:, 1])
    i = int(np.flatnonzero(m.faces.kind == INTERFACE)[0])
    assert face_jump(m, i, u, dm, cs) == pytest.approx(0.0, abs=1e-24)
    est = estimate(m, dm, cs, u)
    np.testing.assert_allclose(est.jump_sq, 0.0, atol=1e-24)
    # unbalanced counterpart: 1/2 h_S ||jump||^2 = 1/2 * (80 - 2)^2
    assert estimate(m, dm, cs, V[:, 1]).jump_sq[0] == pytest.approx(0.5 * 78**2, rel=1e-14)


def test_molecular_elements_have_no_bulk_or_osc(small_born, rng):
    p = small_born
    u = rng.uniform(-1, 1, p.mesh.n_vertices)
    est = estimate(p.mesh, p.dm, p.cs, u)
    mol = p.mesh.region == MOLECULAR
    assert np.all(est.bulk_sq[mol] == 0) and np.all(est.osc_sq[mol] == 0)
    assert np.all(est.osc_sq[~mol] > 0)


@settings(max_examples=25)
@given(arrays(float, 81, elements=st.floats(-3, 3)))
def test_estimate_invariants(u):
    p = born_problem(n=8)
    est = estimate(p.mesh, p.dm, p.cs, u)
    assert np.all(est.eta_sq >= 0) and np.all(est.osc_sq >= 0)
    assert est.eta_global_sq == float(np.sum(est.eta_sq))
    assert np.all(est.osc_sq[p.mesh.region == MOLECULAR] == 0.0)
    assert est.osc_global_sq == pytest.approx(math.fsum(est.osc_sq[p.mesh.region == SOLVENT]), rel=1e-15)
    np.testing.assert_array_equal(est.eta_sq, est.bulk_sq + est.jump_sq)


def test_overflow_guard_propagates():
    m = build_square_grid(2)
    u = np.zeros(m.n_vertices)
    u[4] = 500.0
    with pytest.raises(OverflowGuardError):
        estimate(m, DielectricModel(1.0, 1.0, 1.0), ChargeSystem(), u)


def test_oscillation_decays_like_h_squared():
    p = born_problem(n=4)
    mesh = p.mesh
    osc = []
    for _ in range(5):
        b = solve_rpbe(mesh, p.dm, p.cs, p.kappa)
        osc.append(estimate(mesh, p.dm, p.cs, b.u).osc)
        mesh = uniform_refine(mesh, 1)
    orders = [math.log2(osc[k] / osc[k + 1]) for k in range(4)]
    assert min(orders) >= 1.8, orders


def test_manufactured_estimator_tracks_error():
    ratios, etas = [], []
    for n in (8, 16, 32):
        p, exact, grad = manufactured_problem(n)
        b = solve_rpbe(p.mesh, p.dm, p.cs, 0.0, source=p.source)
        est = estimate(p.mesh, p.dm, p.cs, b.u, source=p.source)
        ratios.append(error_norms(p.mesh, b.u, exact, grad)[1] / est.eta)
        etas.append(est.eta)
    assert max(ratios) / min(ratios) < 1.5
    assert all(0.9 < math.log2(etas[k] / etas[k + 1]) < 1.1 for k in range(2))
