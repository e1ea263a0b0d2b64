"""Standard test problems used by the test suite, the acceptance checks and the CLI."""

from __future__ import annotations

import numpy as np

from .adapt import Problem
from .geometry import ChargeSystem, CircleInterface, DielectricModel, DomainBox, make_charges
from .mesh import assign_regions, build_square_grid

# Born-like fixture: one centered charge inside a circular molecule, in a
# solvent box four molecular diameters wide.  The box size matters for the
# adaptive-versus-uniform comparison: with a box hugging the molecule the
# regular part is resolved at the optimal rate by uniform meshes already.


def born_problem(half_width=2.0, n=16, radius=0.5, charge=50.0, kappa=1.0, eps_m=2.0, eps_s=80.0,
                 sigma=0.1, center=(0.0, 0.0), snap=False) -> Problem:
    """Single charge at the center of a disc in the box ``[-L, L]^2`` on an ``n x n`` grid."""
    box = DomainBox([-half_width, -half_width], [half_width, half_width])
    ig = CircleInterface(center, radius)
    cs = make_charges([center], [charge], eps_m=eps_m, sigma=sigma)
    dm = DielectricModel.from_kappa(eps_m, eps_s, kappa)
    mesh = assign_regions(build_square_grid(n, box), ig, snap=snap)
    return Problem(mesh, dm, cs, kappa, interface=ig)


def manufactured_problem(n=8, kappa_bar_sq=1.0, eps=1.0):
    """Semilinear problem on the unit square with exact solution ``sin(pi x) sin(pi y)``.

    Constant coefficients, no charges and homogeneous Dirichlet data; the
    source is ``-eps Laplace u* + kappa_bar^2 sinh(u*)``.  Returns
    ``(problem, exact, grad_exact)``.
    """
    pi = np.pi

    def exact(x):
        return np.sin(pi * x[:, 0]) * np.sin(pi * x[:, 1])

    def grad_exact(x):
        return np.column_stack([pi * np.cos(pi * x[:, 0]) * np.sin(pi * x[:, 1]),
                                pi * np.sin(pi * x[:, 0]) * np.cos(pi * x[:, 1])])

    def source(x):
        u = exact(x)
        return 2 * pi**2 * eps * u + kappa_bar_sq * np.sinh(u)

    dm = DielectricModel(eps, eps, kappa_bar_sq)
    mesh = build_square_grid(n)
    problem = Problem(mesh, dm, ChargeSystem(), 0.0, source=source)
    return problem, exact, grad_exact
