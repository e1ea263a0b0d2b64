import types

import numpy as np
import pytest
import scipy.io
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from pbafem.assembly import (FemSystem, SolventQuadrature, assemble_B, assemble_B_jacobian, assemble_fG,
                             assemble_mass, assemble_stiffness, check_A1, energy, error_norms, h1_norm,
                             interpolate_dirichlet, write_matrix_market)
from pbafem.errors import MeshError, OverflowGuardError
from pbafem.geometry import (MOLECULAR, SOLVENT, ChargeSystem, DielectricModel, DomainBox, eval_boundary_g,
                             eval_G, make_charges)
from pbafem.mesh import Mesh, build_cube_5tet_grid, build_cube_6tet_grid, build_square_grid
from pbafem.quadrature import simplex_rule

UNIT = DomainBox([0, 0], [1, 1])


def unit_triangle(region=SOLVENT):
    V = np.array([[0, 0], [1, 0], [0, 1]], float)
    return Mesh(V, np.array([[0, 1, 2]]), UNIT, region=np.array([region]))


def patch_volumes(mesh):
    out = np.zeros(mesh.n_vertices)
    for el, vol in zip(mesh.elements, mesh.volumes):
        out[el] += vol
    return out


def dense_stiffness(mesh, eps):
    """Reference assembly: explicit inverse Jacobians and a Python loop."""
    n = mesh.n_vertices
    K = np.zeros((n, n))
    ref_grads = np.vstack([-np.ones(mesh.dim), np.eye(mesh.dim)])
    for e, el in enumerate(mesh.elements):
        X = mesh.vertices[el]
        J = (X[1:] - X[0]).T
        grads = ref_grads @ np.linalg.inv(J)
        vol = abs(np.linalg.det(J)) / (2 if mesh.dim == 2 else 6)
        K[np.ix_(el, el)] += eps[e] * vol * grads @ grads.T
    return K


# ----------------------------------------------------------------------------
# stiffness


def test_unit_triangle_element_matrix():
    A = assemble_stiffness(unit_triangle(), DielectricModel(1.0, 1.0)).toarray()
    np.testing.assert_allclose(A, [[1, -0.5, -0.5], [-0.5, 0.5, 0], [-0.5, 0, 0.5]], atol=1e-15)


def test_stiffness_matches_dense_loop(small_born):
    m, dm = small_born.mesh, small_born.dm
    A = assemble_stiffness(m, dm).toarray()
    np.testing.assert_allclose(A, dense_stiffness(m, dm.eps(m.region)), rtol=1e-13, atol=1e-12)
    assert np.abs(A - A.T).max() == 0.0


def test_stiffness_row_sums_and_scaling():
    m = build_square_grid(6)
    A = assemble_stiffness(m, DielectricModel(1.0, 1.0))
    np.testing.assert_allclose(np.asarray(A.sum(axis=1)).ravel(), 0.0, atol=1e-13)
    A2 = assemble_stiffness(m, DielectricModel(2.0, 2.0))
    assert abs(A2 - 2 * A).max() == 0.0


def test_stiffness_3d_matches_dense():
    m = build_cube_5tet_grid(2)
    A = assemble_stiffness(m, DielectricModel(1.0, 1.0)).toarray()
    np.testing.assert_allclose(A, dense_stiffness(m, np.ones(m.n_elements)), atol=1e-13)


def test_mass_matrix_row_sums():
    m = build_square_grid(4)
    M = assemble_mass(m)
    np.testing.assert_allclose(np.asarray(M.sum(axis=1)).ravel(), patch_volumes(m) / 3, rtol=1e-14)
    assert M.sum() == pytest.approx(1.0)


# ----------------------------------------------------------------------------
# singular source


def test_fG_zero_cases(small_born):
    m, cs = small_born.mesh, small_born.cs
    molecular = m.replace(region=np.full(m.n_elements, MOLECULAR, np.int8))
    assert np.all(assemble_fG(molecular, small_born.dm, cs) == 0.0)
    assert np.all(assemble_fG(m, DielectricModel(3.0, 3.0, 1.0), cs) == 0.0)
    assert np.all(assemble_fG(m, small_born.dm, ChargeSystem()) == 0.0)


def test_fG_quadrature_refinement():
    cs = make_charges([[-3.0, -2.0]], [1.0], eps_m=2.0)
    m = unit_triangle()
    dm = DielectricModel(2.0, 80.0)
    lo = assemble_fG(m, dm, cs, simplex_rule(2, 2))
    hi = assemble_fG(m, dm, cs, simplex_rule(2, 5))
    assert np.linalg.norm(lo - hi) <= 1e-4 * np.linalg.norm(hi)


def test_fG_element_sum_vanishes(small_born):
    # sum_i grad phi_i = 0 on every element
    f = assemble_fG(small_born.mesh, small_born.dm, small_born.cs)
    assert abs(f.sum()) <= 1e-12 * np.abs(f).sum()
    assert np.any(f != 0)


# ----------------------------------------------------------------------------
# nonlinear term


def test_B_zero_cases(small_born):
    m = small_born.mesh
    u = np.linspace(-1, 1, m.n_vertices)
    assert np.all(assemble_B(m, DielectricModel(2.0, 80.0, 0.0), small_born.cs, u) == 0.0)
    assert np.all(assemble_B(m, DielectricModel(1.0, 1.0, 1.0), ChargeSystem(), np.zeros(m.n_vertices)) == 0.0)
    molecular = m.replace(region=np.full(m.n_elements, MOLECULAR, np.int8))
    assert np.all(assemble_B(molecular, small_born.dm, small_born.cs, u) == 0.0)
    J = assemble_B_jacobian(molecular, small_born.dm, small_born.cs, u)
    assert J.nnz == 0 or abs(J).max() == 0.0


def test_B_constant_state_matches_mass_rows():
    m = build_square_grid(3)
    dm = DielectricModel(1.0, 1.0, 1.0)
    c = 0.7
    B = assemble_B(m, dm, ChargeSystem(), np.full(m.n_vertices, c), simplex_rule(2, 2))
    np.testing.assert_allclose(B, np.sinh(c) * patch_volumes(m) / 3, rtol=1e-13)


def test_B_cancels_G_at_quadrature_points():
    m = build_square_grid(2)
    cs = make_charges([[3.0, 3.0]], [1.0])
    dm = DielectricModel(1.0, 1.0, 1.0)
    data = SolventQuadrature(m, cs, simplex_rule(2, 2))
    # P1 cannot equal -G pointwise; replace G by the values of a P1 function instead
    u = np.random.default_rng(1).standard_normal(m.n_vertices)
    data.G = -data.values(u)
    np.testing.assert_allclose(assemble_B(m, dm, cs, u, data=data), 0.0, atol=0)


def test_B_jacobian_examples():
    m = build_square_grid(3)
    dm = DielectricModel(1.0, 1.0, 2.5)
    J = assemble_B_jacobian(m, dm, ChargeSystem(), np.zeros(m.n_vertices), simplex_rule(2, 2))
    np.testing.assert_allclose(J.toarray(), 2.5 * assemble_mass(m).toarray(), atol=1e-15)
    assert assemble_B_jacobian(m, DielectricModel(1.0, 1.0), ChargeSystem(), np.zeros(m.n_vertices)).nnz == 0


def test_B_jacobian_directional_derivative(small_born, rng):
    m, dm, cs = small_born.mesh, small_born.dm, small_born.cs
    u = rng.uniform(-1, 1, m.n_vertices)
    v = rng.uniform(-1, 1, m.n_vertices)
    J = assemble_B_jacobian(m, dm, cs, u)
    Jv = J @ v
    errs = []
    for t in (1e-3, 1e-4, 1e-5):
        fd = (assemble_B(m, dm, cs, u + t * v) - assemble_B(m, dm, cs, u)) / t
        errs.append(np.linalg.norm(fd - Jv) / np.linalg.norm(Jv))
    assert errs[0] < 1e-2
    # first-order decay of the forward difference
    assert errs[1] < 0.2 * errs[0] and errs[2] < 0.2 * errs[1]
    assert abs(J - J.T).max() == 0.0
    assert np.linalg.eigvalsh(J.toarray()).min() >= -1e-12


def test_overflow_guard_names_element():
    m = build_square_grid(2)
    dm = DielectricModel(1.0, 1.0, 1.0)
    u = np.zeros(m.n_vertices)
    u[4] = 400.0
    with pytest.raises(OverflowGuardError) as info:
        assemble_B(m, dm, ChargeSystem(), u)
    assert 4 in m.elements[info.value.element]
    assert info.value.value > 300


@settings(max_examples=50)
@given(arrays(float, 25, elements=st.floats(-2, 2)), arrays(float, 25, elements=st.floats(-2, 2)))
def test_B_monotone(u, v):
    m = build_square_grid(4)
    dm = DielectricModel(1.0, 3.0, 2.0)
    cs = make_charges([[-0.5, 0.5]], [0.3])
    d = (assemble_B(m, dm, cs, u) - assemble_B(m, dm, cs, v)) @ (u - v)
    assert d >= -1e-12


# ----------------------------------------------------------------------------
# energy


def test_energy_examples():
    box = DomainBox([0, 0], [2, 1.5])
    m = build_square_grid(3, box)
    z = np.zeros(m.n_vertices)
    assert energy(m, DielectricModel(4.0, 4.0, 1.0), ChargeSystem(), z) == pytest.approx(3.0, rel=1e-14)
    assert energy(m, DielectricModel(4.0, 4.0), ChargeSystem(), z) == 0.0


def test_energy_gradient_is_residual(small_born, rng):
    p = small_born
    sys = FemSystem(p.mesh, p.dm, p.cs, p.kappa)
    u = sys.dofs.full(rng.uniform(-1, 1, sys.dofs.n_free))
    r = sys.residual(u)
    scale = max(1.0, np.abs(u).max())
    step = 1e-6 * scale
    fd = np.empty(sys.dofs.n_free)
    for k, i in enumerate(sys.free):
        e = np.zeros_like(u)
        e[i] = step
        fd[k] = (sys.energy(u + e) - sys.energy(u - e)) / (2 * step)
    big = np.abs(r) > 1e-3 * np.abs(r).max()
    assert np.max(np.abs(fd - r)[big] / np.abs(r)[big]) < 1e-5
    assert np.linalg.norm(fd - r) < 1e-5 * np.linalg.norm(r)


def test_energy_function_matches_system(small_born, rng):
    p = small_born
    sys = FemSystem(p.mesh, p.dm, p.cs, p.kappa)
    u = rng.uniform(-1, 1, p.mesh.n_vertices)
    assert sys.energy(u) == pytest.approx(energy(p.mesh, p.dm, p.cs, u), rel=1e-13)


# ----------------------------------------------------------------------------
# (A1) audit


def test_check_A1_square_grid():
    m = build_square_grid(8)
    rep = check_A1(assemble_stiffness(m, DielectricModel(1.0, 1.0)), m)
    assert rep.a1prime_pass
    # the hypotenuse pairs of the right-isosceles grid have a_ij = 0 exactly
    assert rep.n_zero_pairs == 64 and rep.n_positive_pairs == 0
    assert not rep.a1_pass


def test_check_A1_cube5():
    m = build_cube_5tet_grid(2)
    rep = check_A1(assemble_stiffness(m, DielectricModel(1.0, 1.0)), m)
    assert rep.a1_pass and rep.rho > 0 and rep.a1prime_pass


def test_check_A1_cube6():
    m = build_cube_6tet_grid(2)
    A = assemble_stiffness(m, DielectricModel(1.0, 1.0))
    rep = check_A1(A, m)
    assert not rep.a1_pass and rep.n_zero_pairs > 0
    # sign-scan oracle over the mesh edges
    vals = np.array([A[i, j] for i, j in m.edges])
    assert rep.n_zero_pairs == int(np.sum(np.abs(vals) <= 1e-12 * A.diagonal().max()))


def test_check_A1_margin_formula():
    m = build_cube_5tet_grid(1)
    A = assemble_stiffness(m, DielectricModel(1.0, 1.0))
    rep = check_A1(A, m)
    h = m.diameters.max()
    margins = []
    for i, j in m.edges:
        vol = sum(v for el, v in zip(m.elements, m.volumes) if i in el and j in el)
        margins.append(-A[i, j] * h**2 / vol)
    assert rep.rho == pytest.approx(min(margins), rel=1e-13)


# ----------------------------------------------------------------------------
# Dirichlet data


def test_dirichlet_vanishes_when_g_equals_G():
    m = build_square_grid(4, DomainBox([-1, -1], [1, 1]))
    cs = make_charges([[0.1, 0.0]], [2.0], eps_m=5.0)
    dofs = interpolate_dirichlet(m, cs, DielectricModel(5.0, 5.0), 0.0)
    np.testing.assert_allclose(dofs.values, 0.0, atol=1e-15)


def test_dirichlet_reproduces_eval(rng, small_born):
    p = small_born
    dofs = interpolate_dirichlet(p.mesh, p.cs, p.dm, p.kappa)
    assert sorted(np.concatenate([dofs.free, dofs.dirichlet]).tolist()) == list(range(p.mesh.n_vertices))
    assert np.all(np.diff(dofs.free) > 0)
    for k in rng.choice(len(dofs.dirichlet), 10, replace=False):
        x = p.mesh.vertices[dofs.dirichlet[k]][None]
        expected = eval_boundary_g(p.cs, p.dm, p.kappa, x, 2) - eval_G(p.cs, x, 2)
        assert dofs.values[k] == expected[0]
    u = dofs.full(np.ones(dofs.n_free))
    np.testing.assert_array_equal(u[dofs.dirichlet], dofs.values)


def test_dirichlet_requires_boundary():
    fake = types.SimpleNamespace(boundary_vertex=np.zeros(3, bool))
    with pytest.raises(MeshError):
        interpolate_dirichlet(fake, ChargeSystem(), DielectricModel(1.0, 1.0), 0.0)


# ----------------------------------------------------------------------------
# misc


def test_matrix_market_roundtrip(tmp_path):
    m = build_square_grid(3)
    A = assemble_stiffness(m, DielectricModel(1.0, 2.0))
    write_matrix_market(tmp_path / "A.mtx", A, comment="stiffness")
    B = sp.csr_matrix(scipy.io.mmread(str(tmp_path / "A.mtx")))
    assert abs(A - B).max() == 0.0


def test_norms_of_linear_functions():
    m = build_square_grid(4)
    assert h1_norm(m, np.ones(m.n_vertices)) == pytest.approx(1.0, rel=1e-14)
    lin = 2 * m.vertices[:, 0] - m.vertices[:, 1]
    # |v|_1^2 = 5, ||v||^2 = int (2x - y)^2 = 4/3 - 1 + 1/3 = 2/3
    assert h1_norm(m, lin) == pytest.approx(np.sqrt(5 + 2 / 3), rel=1e-13)
    l2, h1 = error_norms(m, lin, lambda x: 2 * x[:, 0] - x[:, 1],
                         lambda x: np.column_stack([np.full(len(x), 2.0), np.full(len(x), -1.0)]))
    assert l2 < 1e-14 and h1 < 1e-13
