"""Hilbert-sphere geometry on a discretized function domain.

Points, tangent vectors and tangent operators carry their :class:`Grid` so the
quadrature inner product travels with the data. Function values are stored in
``coef``; operators are stored as symmetric matrices acting on isometric
coordinates (``sqrt(w) * f``), see :class:`TangentOperator`.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from . import _sphere
from .errors import DimensionError, DomainError
from .grid import Grid

UNIT_TOL = 1e-10


def _readonly(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class SpherePoint:
    """Unit-norm function on a grid."""

    grid: Grid
    coef: np.ndarray

    def __post_init__(self):
        coef = _readonly(self.grid.check(self.coef))
        if coef.ndim != 1:
            raise DimensionError("a SpherePoint holds a single function")
        object.__setattr__(self, "coef", coef)
        nrm2 = self.grid.inner(coef, coef)
        if abs(nrm2 - 1.0) > UNIT_TOL:
            raise DomainError(f"SpherePoint must have unit norm, got |f|^2 = {nrm2:.15g}")

    @classmethod
    def from_coords(cls, grid: Grid, c) -> "SpherePoint":
        return cls(grid, grid.from_coords(_sphere.normalize(np.asarray(c, dtype=float))))

    @classmethod
    def normalized(cls, grid: Grid, f) -> "SpherePoint":
        """Project an arbitrary nonzero function onto the sphere."""
        return cls.from_coords(grid, grid.to_coords(f))

    @cached_property
    def coords(self) -> np.ndarray:
        return _readonly(self.grid.to_coords(self.coef))

    def __neg__(self):
        return SpherePoint(self.grid, -self.coef)


@dataclass(frozen=True, eq=False)
class TangentVector:
    """Function orthogonal to ``base`` under the grid inner product."""

    base: SpherePoint
    coef: np.ndarray

    def __post_init__(self):
        coef = _readonly(self.base.grid.check(self.coef))
        object.__setattr__(self, "coef", coef)
        g = self.base.grid
        if abs(g.inner(coef, self.base.coef)) > 1e-8 * (1.0 + g.norm(coef)):
            raise DomainError("vector is not tangent to its base point")

    @classmethod
    def from_coords(cls, base: SpherePoint, c) -> "TangentVector":
        c = np.asarray(c, dtype=float)
        c = c - (c @ base.coords) * base.coords
        return cls(base, base.grid.from_coords(c))

    @classmethod
    def project(cls, base: SpherePoint, f) -> "TangentVector":
        """Orthogonal projection of an ambient function onto ``T_base``."""
        return cls.from_coords(base, base.grid.to_coords(f))

    @cached_property
    def coords(self) -> np.ndarray:
        return _readonly(self.base.grid.to_coords(self.coef))

    @property
    def grid(self) -> Grid:
        return self.base.grid

    def norm(self) -> float:
        return float(np.linalg.norm(self.coords))

    def __add__(self, other: "TangentVector") -> "TangentVector":
        _same_base(self.base, other.base)
        return TangentVector(self.base, self.coef + other.coef)

    def __sub__(self, other: "TangentVector") -> "TangentVector":
        _same_base(self.base, other.base)
        return TangentVector(self.base, self.coef - other.coef)

    def __mul__(self, a: float) -> "TangentVector":
        return TangentVector(self.base, a * self.coef)

    __rmul__ = __mul__


@dataclass(frozen=True, eq=False)
class TangentOperator:
    """Linear operator on ``T_base`` stored as a (d, d) matrix in isometric coordinates.

    For functions ``u`` the action is ``W^{-1/2} mat W^{1/2} u``; a symmetric
    ``mat`` is therefore self-adjoint under the grid inner product. When the
    operator is known to be ``F F^T`` for a thin ``factor`` F the factor is kept
    so eigenproblems can use the Gram matrix ``F^T F`` instead.
    """

    base: SpherePoint
    mat: np.ndarray
    factor: np.ndarray | None = None

    def __post_init__(self):
        d = self.base.grid.size
        mat = _readonly(self.mat)
        if mat.shape != (d, d):
            raise DimensionError(f"operator matrix must be {d}x{d}, got {mat.shape}")
        object.__setattr__(self, "mat", mat)
        if self.factor is not None:
            f = _readonly(self.factor)
            if f.ndim != 2 or f.shape[0] != d:
                raise DimensionError("factor must have shape (d, r)")
            object.__setattr__(self, "factor", f)

    @classmethod
    def from_factor(cls, base: SpherePoint, factor) -> "TangentOperator":
        factor = np.asarray(factor, dtype=float)
        return cls(base, factor @ factor.T, factor)

    @property
    def grid(self) -> Grid:
        return self.base.grid

    def apply(self, v: TangentVector) -> TangentVector:
        _same_base(self.base, v.base)
        return TangentVector.from_coords(self.base, self.mat @ v.coords)

    def __call__(self, v: TangentVector) -> TangentVector:
        return self.apply(v)

    def trace(self) -> float:
        return float(np.trace(self.mat))

    def is_symmetric(self, tol: float = 1e-10) -> bool:
        return bool(np.max(np.abs(self.mat - self.mat.T), initial=0.0) <= tol * max(1.0, np.abs(self.mat).max()))

    def tangent_block(self) -> np.ndarray:
        """The matrix expressed in an orthonormal basis of the tangent space."""
        q = _sphere.tangent_basis(self.base.coords)
        return q.T @ self.mat @ q

    def __add__(self, other: "TangentOperator") -> "TangentOperator":
        _same_base(self.base, other.base)
        factor = None
        if self.factor is not None and other.factor is not None:
            factor = np.hstack([self.factor, other.factor])
        return TangentOperator(self.base, self.mat + other.mat, factor)

    def __mul__(self, a: float) -> "TangentOperator":
        factor = None if self.factor is None or a < 0 else np.sqrt(a) * self.factor
        return TangentOperator(self.base, a * self.mat, factor)

    __rmul__ = __mul__


def _same_grid(a: Grid, b: Grid):
    if not a.same_as(b):
        raise DimensionError("arguments live on different grids")


def _same_base(a: SpherePoint, b: SpherePoint):
    _same_grid(a.grid, b.grid)
    if a is not b and not np.array_equal(a.coef, b.coef):
        raise DomainError("tangent objects are attached to different base points")


def inner(grid: Grid, f, g) -> float:
    """Quadrature inner product ``sum_j w_j f_j g_j``."""
    f = np.asarray(f, dtype=float)
    g = np.asarray(g, dtype=float)
    if f.shape != g.shape:
        raise DimensionError(f"shape mismatch {f.shape} vs {g.shape}")
    return grid.inner(f, g)


def geodesic_distance(p: SpherePoint, q: SpherePoint) -> float:
    _same_grid(p.grid, q.grid)
    return float(_sphere.dist(p.coords, q.coords))


def exp_map(p: SpherePoint, v: TangentVector) -> SpherePoint:
    _same_base(p, v.base)
    if v.norm() < _sphere.SMALL_ANGLE:
        return p
    return SpherePoint.from_coords(p.grid, _sphere.exp(p.coords, v.coords))


def log_map(p: SpherePoint, x: SpherePoint) -> TangentVector:
    _same_grid(p.grid, x.grid)
    return TangentVector.from_coords(p, _sphere.log(p.coords, x.coords))


def parallel_transport(x: SpherePoint, y: SpherePoint, v: TangentVector) -> TangentVector:
    _same_base(x, v.base)
    _same_grid(x.grid, y.grid)
    if x is y or np.array_equal(x.coef, y.coef):
        return TangentVector(y, v.coef)
    return TangentVector.from_coords(y, _sphere.transport(x.coords, y.coords, v.coords))


def transport_operator(x: SpherePoint, y: SpherePoint, a: TangentOperator) -> TangentOperator:
    """Conjugate ``a`` by parallel transport: ``P_x^y a P_y^x``."""
    _same_base(x, a.base)
    _same_grid(x.grid, y.grid)
    r = _sphere.plane_rotation(x.coords, y.coords)
    mat = r @ a.mat @ r.T
    mat = 0.5 * (mat + mat.T)
    factor = None if a.factor is None else r @ a.factor
    return TangentOperator(y, mat, factor)


def rotation_operator(q: SpherePoint, p) -> np.ndarray:
    """Rotate the function ``p`` by the isometry carrying psi_1 to ``q``.

    psi_1 is the constant unit-norm function on the grid. The rotation acts
    in the plane spanned by psi_1 and ``q`` and fixes its orthogonal complement.
    """
    grid = q.grid
    psi1 = grid.to_coords(grid.constant())
    qc = q.coords
    c = float(np.clip(psi1 @ qc, -1.0, 1.0))
    if c < -1.0 + 1e-12:
        raise DomainError("rotation undefined: q is antipodal to the constant function")
    pc = grid.to_coords(p)
    rho = np.arccos(c)
    if rho < _sphere.SMALL_ANGLE:
        return np.array(pc / grid.sqrt_weights)
    u = psi1 - c * qc
    u = u / np.linalg.norm(u)
    up = pc @ u
    qp = pc @ qc
    rot = (
        pc
        + np.sin(rho) * (np.multiply.outer(up, qc) - np.multiply.outer(qp, u))
        + (np.cos(rho) - 1.0) * (np.multiply.outer(qp, qc) + np.multiply.outer(up, u))
    )
    return grid.from_coords(rot)


def hessian_operator(x: SpherePoint, mu: SpherePoint) -> TangentOperator:
    """Hessian at 0 of ``v -> rho^2(x, exp_mu v)`` on ``T_mu``.

    Along ``e = log_mu x / theta`` the eigenvalue is 2, orthogonally it is
    ``2 theta cot(theta)``; ``theta = 0`` gives twice the identity.
    """
    _same_grid(x.grid, mu.grid)
    if _sphere.dist(mu.coords, x.coords) >= _sphere.ANTIPODAL_GUARD:
        raise DomainError("Hessian undefined: x is antipodal to mu")
    return TangentOperator(mu, _sphere.hessian_matrix(x.coords, mu.coords))
