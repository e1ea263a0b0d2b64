"""Physical model: point charges, dielectric regions and the analytic fields.

Charge magnitudes are taken as fully scaled, i.e. the ``4 pi e_c^2/(k_B T) z_i``
prefactor is already folded in, and the same magnitudes feed both the
singular Coulomb field ``G`` and the screened boundary data ``g``.

In three dimensions ``G_i = q_i / (eps_m |x - x_i|)``.  In two dimensions the
free-space Green's function is used instead,
``G_i = -q_i ln|x - x_i| / (2 pi eps_m)``, and the boundary data follows the
same pattern with the screening factor ``exp(-kappa r)`` and ``eps_s``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigError, ModelError, SingularityError

MOLECULAR = 0
SOLVENT = 1

SINGULARITY_RADIUS = 1e-12
ON_INTERFACE_TOL = 1e-12


@dataclass(frozen=True)
class Charge:
    position: np.ndarray
    magnitude: float

    def __post_init__(self):
        pos = np.asarray(self.position, dtype=float).copy()
        pos.setflags(write=False)
        object.__setattr__(self, "position", pos)
        if not math.isfinite(self.magnitude) or self.magnitude == 0.0:
            raise ModelError(f"charge magnitude must be finite and nonzero, got {self.magnitude}")


@dataclass(frozen=True)
class ChargeSystem:
    """Point charges sharing the molecular dielectric ``eps_m``.

    ``sigma`` is the required minimum distance between any charge and the
    solvent region.  An empty system is allowed and gives ``G == 0``.
    """

    charges: tuple = ()
    eps_m: float = 1.0
    sigma: float = 1e-3

    def __post_init__(self):
        object.__setattr__(self, "charges", tuple(self.charges))
        if self.eps_m <= 0:
            raise ModelError("eps_m must be positive")
        if self.sigma <= 0:
            raise ModelError("sigma must be positive")
        pos = self.positions
        for i in range(len(pos)):
            for j in range(i + 1, len(pos)):
                if np.array_equal(pos[i], pos[j]):
                    raise ModelError(f"charges {i} and {j} share a position")

    @property
    def positions(self) -> np.ndarray:
        if not self.charges:
            return np.zeros((0, 0))
        return np.array([c.position for c in self.charges])

    @property
    def magnitudes(self) -> np.ndarray:
        return np.array([c.magnitude for c in self.charges], dtype=float)

    def __len__(self):
        return len(self.charges)

    def union(self, other: "ChargeSystem") -> "ChargeSystem":
        return ChargeSystem(self.charges + other.charges, self.eps_m, min(self.sigma, other.sigma))


@dataclass(frozen=True)
class DielectricModel:
    """Piecewise constant coefficients.

    ``kappa_bar_sq_s`` is the modified Debye-Hueckel coefficient in the
    solvent; it is zero in the molecule by definition.
    """

    eps_m: float
    eps_s: float
    kappa_bar_sq_s: float = 0.0

    def __post_init__(self):
        if self.eps_m <= 0 or self.eps_s <= 0:
            raise ModelError("dielectric constants must be positive")
        if self.kappa_bar_sq_s < 0:
            raise ModelError("kappa_bar_sq_s must be nonnegative")
        if self.eps_s < self.eps_m:
            warnings.warn("eps_s < eps_m is outside the usual physical regime", stacklevel=2)

    @classmethod
    def from_kappa(cls, eps_m, eps_s, kappa):
        """Build the model with ``kappa_bar^2 = eps_s * kappa^2`` in the solvent."""
        return cls(eps_m, eps_s, eps_s * kappa**2)

    def eps(self, region):
        region = np.asarray(region)
        return np.where(region == SOLVENT, self.eps_s, self.eps_m)

    def kappa_bar_sq(self, region):
        region = np.asarray(region)
        return np.where(region == SOLVENT, self.kappa_bar_sq_s, 0.0)


@dataclass(frozen=True)
class DomainBox:
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.lower, dtype=float)
        hi = np.asarray(self.upper, dtype=float)
        if lo.shape != hi.shape or lo.ndim != 1 or np.any(hi <= lo):
            raise ModelError("box corners must satisfy lower < upper componentwise")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @classmethod
    def unit(cls, dim):
        return cls(np.zeros(dim), np.ones(dim))

    @property
    def dim(self):
        return self.lower.size

    @property
    def volume(self):
        return float(np.prod(self.upper - self.lower))

    def on_boundary(self, x, tol=1e-12):
        x = np.atleast_2d(x)
        scale = tol * max(1.0, float(np.max(np.abs(self.upper - self.lower))))
        return np.any((np.abs(x - self.lower) <= scale) | (np.abs(x - self.upper) <= scale), axis=1)

    def contains_strictly(self, x):
        x = np.atleast_2d(x)
        return np.all((x > self.lower) & (x < self.upper), axis=1)


class CircleInterface:
    """Circle (2D) or sphere (3D) bounding the molecular region."""

    kind = "sphere"

    def __init__(self, center, radius):
        self.center = np.asarray(center, dtype=float)
        self.radius = float(radius)
        if self.radius <= 0:
            raise ModelError("interface radius must be positive")

    @property
    def dim(self):
        return self.center.size

    def signed_distance(self, x):
        """Negative inside the molecule, positive in the solvent."""
        x = np.atleast_2d(x)
        return np.linalg.norm(x - self.center, axis=1) - self.radius

    def project(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        d = x - self.center
        r = np.linalg.norm(d, axis=1, keepdims=True)
        r = np.where(r == 0, 1.0, r)
        return self.center + self.radius * d / r

    def within(self, box: DomainBox):
        return bool(np.all(self.center - self.radius > box.lower) and np.all(self.center + self.radius < box.upper))

    def __repr__(self):
        return f"CircleInterface(center={self.center.tolist()}, radius={self.radius})"


class PolygonInterface:
    """Closed, non-self-intersecting polygon in the plane."""

    kind = "polygon"

    def __init__(self, vertices):
        v = np.asarray(vertices, dtype=float)
        if v.ndim != 2 or v.shape[1] != 2 or len(v) < 3:
            raise ModelError("polygon interface needs at least three planar vertices")
        if np.array_equal(v[0], v[-1]):
            v = v[:-1]
        # store counter-clockwise so the outward normal points into the solvent
        area = 0.5 * np.sum(v[:, 0] * np.roll(v[:, 1], -1) - np.roll(v[:, 0], -1) * v[:, 1])
        if area < 0:
            v = v[::-1]
        self.vertices = v
        self._check_simple()

    dim = 2

    def _check_simple(self):
        a = self.vertices
        b = np.roll(a, -1, axis=0)
        n = len(a)
        for i in range(n):
            for j in range(i + 2, n):
                if i == 0 and j == n - 1:
                    continue
                if _segments_cross(a[i], b[i], a[j], b[j]):
                    raise ModelError("polygon interface self-intersects")

    def _nearest(self, x):
        a = self.vertices
        b = np.roll(a, -1, axis=0)
        ab = b - a
        t = np.einsum("nsk,sk->ns", x[:, None, :] - a[None], ab) / np.einsum("sk,sk->s", ab, ab)
        t = np.clip(t, 0.0, 1.0)
        p = a[None] + t[..., None] * ab[None]
        d = np.linalg.norm(x[:, None, :] - p, axis=2)
        k = np.argmin(d, axis=1)
        rows = np.arange(len(x))
        return p[rows, k], d[rows, k]

    def _inside(self, x):
        a = self.vertices
        b = np.roll(a, -1, axis=0)
        px, py = x[:, 0:1], x[:, 1:2]
        cond = (a[None, :, 1] > py) != (b[None, :, 1] > py)
        with np.errstate(divide="ignore", invalid="ignore"):
            xcross = a[None, :, 0] + (py - a[None, :, 1]) * (b[None, :, 0] - a[None, :, 0]) / (
                b[None, :, 1] - a[None, :, 1]
            )
        crossings = np.sum(cond & (px < xcross), axis=1)
        return crossings % 2 == 1

    def signed_distance(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        _, d = self._nearest(x)
        return np.where(self._inside(x), -d, d)

    def project(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        p, _ = self._nearest(x)
        return p

    def within(self, box: DomainBox):
        return bool(np.all(box.contains_strictly(self.vertices)))


def _segments_cross(p1, p2, p3, p4):
    def orient(a, b, c):
        return np.sign((b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]))

    return (orient(p1, p2, p3) != orient(p1, p2, p4)) and (orient(p3, p4, p1) != orient(p3, p4, p2))


def _distances(cs: ChargeSystem, x, dim):
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if x.shape[1] != dim:
        raise ValueError(f"expected {dim}-dimensional points, got shape {x.shape}")
    pos = cs.positions
    if pos.shape[1] != dim:
        raise ValueError(f"charge positions are {pos.shape[1]}-dimensional, expected {dim}")
    diff = x[:, None, :] - pos[None, :, :]
    r = np.linalg.norm(diff, axis=2)
    if np.any(r < SINGULARITY_RADIUS):
        i, j = np.argwhere(r < SINGULARITY_RADIUS)[0]
        raise SingularityError(f"point {x[i].tolist()} coincides with charge {j}")
    return diff, r


def _maybe_scalar(values, x):
    return float(values[0]) if np.ndim(x) == 1 else values


def eval_G(cs: ChargeSystem, x, dim: int):
    """Singular Coulomb field ``G`` at point(s) ``x`` of shape ``(d,)`` or ``(n, d)``."""
    if len(cs) == 0:
        return _maybe_scalar(np.zeros(len(np.atleast_2d(x))), x)
    _, r = _distances(cs, x, dim)
    q = cs.magnitudes
    if dim == 3:
        vals = (q / (cs.eps_m * r)).sum(axis=1)
    elif dim == 2:
        vals = (-q / (2 * np.pi * cs.eps_m) * np.log(r)).sum(axis=1)
    else:
        raise ValueError("dim must be 2 or 3")
    return _maybe_scalar(vals, x)


def eval_grad_G(cs: ChargeSystem, x, dim: int):
    """Gradient of :func:`eval_G`; shape ``(d,)`` or ``(n, d)``."""
    xa = np.atleast_2d(np.asarray(x, dtype=float))
    if len(cs) == 0:
        out = np.zeros_like(xa)
    else:
        diff, r = _distances(cs, xa, dim)
        q = cs.magnitudes
        if dim == 3:
            coef = -q / (cs.eps_m * r**3)
        elif dim == 2:
            coef = -q / (2 * np.pi * cs.eps_m * r**2)
        else:
            raise ValueError("dim must be 2 or 3")
        out = np.einsum("nc,nck->nk", coef, diff)
    return out[0] if np.ndim(x) == 1 else out


def eval_boundary_g(cs: ChargeSystem, dm: DielectricModel, kappa: float, x, dim: int):
    """Screened-Coulomb Dirichlet data ``g`` for the full potential."""
    if len(cs) == 0:
        return _maybe_scalar(np.zeros(len(np.atleast_2d(x))), x)
    _, r = _distances(cs, x, dim)
    q = cs.magnitudes
    screen = np.exp(-kappa * r)
    if dim == 3:
        vals = (q * screen / (dm.eps_s * r)).sum(axis=1)
    elif dim == 2:
        vals = (-q * screen * np.log(r) / (2 * np.pi * dm.eps_s)).sum(axis=1)
    else:
        raise ValueError("dim must be 2 or 3")
    return _maybe_scalar(vals, x)


def region_of(ig, x):
    """Classify point(s) as MOLECULAR or SOLVENT; points on the interface are molecular."""
    sd = ig.signed_distance(x)
    labels = np.where(sd <= ON_INTERFACE_TOL, MOLECULAR, SOLVENT)
    return int(labels[0]) if np.ndim(x) == 1 else labels


def check_sigma(cs: ChargeSystem, ig) -> float:
    """Return the smallest charge-to-interface distance, raising if it is below ``sigma``."""
    if len(cs) == 0:
        return math.inf
    sd = ig.signed_distance(cs.positions)
    if np.any(sd >= 0):
        bad = int(np.argmax(sd >= 0))
        raise ModelError(f"charge {bad} is not strictly inside the molecular region")
    dist = float(np.min(-sd))
    if dist < cs.sigma:
        raise ModelError(f"charge-solvent separation {dist:.6g} is below sigma = {cs.sigma:g}")
    return dist


def read_charges(path, dim: int, eps_m: float = 1.0, sigma: float = 1e-3) -> ChargeSystem:
    """Read a whitespace separated ``x y [z] q`` charge file."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"charge file not found: {path}")
    charges = []
    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != dim + 1:
            raise ConfigError(f"{path}:{lineno}: expected {dim + 1} columns, got {len(parts)}")
        try:
            vals = [float(p) for p in parts]
        except ValueError as exc:
            raise ConfigError(f"{path}:{lineno}: {exc}") from None
        try:
            charges.append(Charge(np.array(vals[:dim]), vals[dim]))
        except ModelError as exc:
            raise ConfigError(f"{path}:{lineno}: {exc}") from None
    return ChargeSystem(tuple(charges), eps_m=eps_m, sigma=sigma)


def make_charges(positions: Sequence, magnitudes: Sequence, eps_m=1.0, sigma=1e-3) -> ChargeSystem:
    return ChargeSystem(
        tuple(Charge(np.asarray(p, float), float(q)) for p, q in zip(positions, magnitudes)),
        eps_m=eps_m,
        sigma=sigma,
    )
