"""Intrinsic mean, tangent covariance and the sandwich covariance of the mean.

The chart used throughout is the logarithm map at the (estimated) mean, under
which the derivative of the squared distance is ``-2 <V, .>`` and the
asymptotic covariance of ``sqrt(n) log_mu(mu_hat)`` is
``4 L^{-1} G L^{-1}`` with ``G`` the tangent covariance and ``L`` the averaged
Hessian of the squared distance.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from . import _sphere
from .errors import ConditioningError, DimensionError, DomainError
from .geometry import (
    SpherePoint,
    TangentOperator,
    TangentVector,
    _readonly,
    _same_base,
    _same_grid,
    transport_operator,
)
from .grid import Grid

LAMBDA_FLOOR = 1e-8
EIGEN_FLOOR = 1e-12


@dataclass(frozen=True, eq=False)
class SampleSet:
    """Observations on the sphere sharing one grid; ``coef`` is (n, d)."""

    grid: Grid
    coef: np.ndarray

    def __post_init__(self):
        coef = np.atleast_2d(self.grid.check(self.coef))
        if coef.shape[0] == 0:
            raise DimensionError("a sample needs at least one observation")
        norms = self.grid.inner(coef, coef)
        bad = np.flatnonzero(np.abs(norms - 1.0) > 1e-10)
        if bad.size:
            raise DomainError(f"observation {int(bad[0])} does not have unit norm")
        object.__setattr__(self, "coef", _readonly(coef))

    @classmethod
    def from_points(cls, points: Sequence[SpherePoint]) -> "SampleSet":
        points = list(points)
        if not points:
            raise DimensionError("a sample needs at least one observation")
        grid = points[0].grid
        for p in points[1:]:
            _same_grid(grid, p.grid)
        return cls(grid, np.stack([p.coef for p in points]))

    @classmethod
    def from_coords(cls, grid: Grid, coords) -> "SampleSet":
        coords = _sphere.normalize(np.atleast_2d(np.asarray(coords, dtype=float)))
        return cls(grid, grid.from_coords(coords))

    @cached_property
    def coords(self) -> np.ndarray:
        return _readonly(self.grid.to_coords(self.coef))

    def __len__(self):
        return self.coef.shape[0]

    def __getitem__(self, i) -> SpherePoint:
        return SpherePoint(self.grid, self.coef[i])

    def __iter__(self):
        return (self[i] for i in range(len(self)))

    def subset(self, idx) -> "SampleSet":
        return SampleSet(self.grid, self.coef[np.asarray(idx)])

    def map(self, fn) -> "SampleSet":
        """Apply a function-valued map row by row and renormalize."""
        return SampleSet.from_coords(self.grid, self.grid.to_coords(fn(self.coef)))

    @cached_property
    def support(self) -> "SupportCheck":
        return _support(self.coords)


class SupportCheck(NamedTuple):
    diameter: float
    satisfied: bool


def _support(x: np.ndarray, chunk: int = 1024) -> SupportCheck:
    lo = 1.0
    for start in range(0, x.shape[0], chunk):
        lo = min(lo, float((x[start : start + chunk] @ x.T).min()))
    diam = float(np.arccos(np.clip(lo, -1.0, 1.0)))
    return SupportCheck(diam, diam <= np.pi / 2 + 1e-12)


def check_support(sample: SampleSet) -> SupportCheck:
    """Largest pairwise geodesic distance and whether it is at most pi/2."""
    return sample.support


@dataclass(frozen=True)
class FrechetMeanResult:
    mean: SpherePoint
    iterations: int
    final_gradient_norm: float
    functional_value: float
    functional_trace: tuple = field(default=(), repr=False)


def frechet_mean(sample: SampleSet, tol: float = 1e-10, max_iter: int = 200, init: SpherePoint | None = None) -> FrechetMeanResult:
    """Sample intrinsic mean by Karcher fixed-point iteration.

    Starts from the extrinsic (normalized linear) mean unless ``init`` is
    given. Raises :class:`~hilbertsphere.errors.ConvergenceError` after
    ``max_iter`` iterations and :class:`~hilbertsphere.errors.DomainError`
    when an observation is antipodal to an iterate.
    """
    start = None if init is None else init.coords
    mu, it, gn, f, trace = _sphere.karcher_mean(sample.coords, tol, max_iter, start)
    return FrechetMeanResult(SpherePoint.from_coords(sample.grid, mu), it, gn, f, tuple(trace))


@dataclass(frozen=True, eq=False)
class TangentVectors:
    """A batch of tangent vectors at one base point; ``coef`` is (n, d)."""

    base: SpherePoint
    coef: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "coef", _readonly(np.atleast_2d(self.base.grid.check(self.coef))))

    @classmethod
    def from_coords(cls, base: SpherePoint, coords) -> "TangentVectors":
        return cls(base, base.grid.from_coords(np.atleast_2d(coords)))

    @cached_property
    def coords(self) -> np.ndarray:
        return _readonly(self.base.grid.to_coords(self.coef))

    def __len__(self):
        return self.coef.shape[0]

    def __getitem__(self, i) -> TangentVector:
        return TangentVector(self.base, self.coef[i])

    def __iter__(self):
        return (self[i] for i in range(len(self)))

    def mean(self) -> TangentVector:
        return TangentVector.from_coords(self.base, self.coords.mean(axis=0))

    def norms(self) -> np.ndarray:
        return np.linalg.norm(self.coords, axis=1)


def tangent_vectors(sample: SampleSet, mean: SpherePoint) -> TangentVectors:
    """``log_mean X_i`` for every observation."""
    _same_grid(sample.grid, mean.grid)
    try:
        v = _sphere.log(mean.coords, sample.coords)
    except DomainError as exc:
        raise DomainError(f"observation antipodal to the mean: {exc}") from None
    return TangentVectors.from_coords(mean, v)


def _as_batch(vectors) -> TangentVectors:
    if isinstance(vectors, TangentVectors):
        return vectors
    vectors = list(vectors)
    if not vectors:
        raise DimensionError("covariance of an empty collection")
    base = vectors[0].base
    for v in vectors[1:]:
        _same_base(base, v.base)
    return TangentVectors(base, np.stack([v.coef for v in vectors]))


def covariance_operator(vectors: TangentVectors | Iterable[TangentVector]) -> TangentOperator:
    """Empirical covariance ``n^{-1} sum_i V_i (x) V_i`` (kept in factored form)."""
    batch = _as_batch(vectors)
    if len(batch) == 0:
        raise DimensionError("covariance of an empty collection")
    return TangentOperator.from_factor(batch.base, batch.coords.T / np.sqrt(len(batch)))


def lambda_hat(sample: SampleSet, mean: SpherePoint) -> TangentOperator:
    """Average over the sample of :func:`~hilbertsphere.geometry.hessian_operator`."""
    v = tangent_vectors(sample, mean).coords
    theta = np.linalg.norm(v, axis=1)
    a, g = _sphere.mean_hessian_parts(theta)
    mat = a * _sphere.tangent_projector(mean.coords) + (v.T * (g / len(theta))) @ v
    return TangentOperator(mean, 0.5 * (mat + mat.T))


def asymptotic_covariance(sample: SampleSet, mean: SpherePoint) -> TangentOperator:
    """Sandwich estimate ``4 L^{-1} G L^{-1}`` of the covariance of ``sqrt(n) log_mean(mu_hat)``.

    ``L`` is inverted in an orthonormal basis of the tangent space.
    """
    v = tangent_vectors(sample, mean).coords
    n = v.shape[0]
    lam = lambda_hat(sample, mean)
    q = _sphere.tangent_basis(mean.coords)
    lt = q.T @ lam.mat @ q
    w = np.linalg.eigvalsh(lt)
    if w[0] <= LAMBDA_FLOOR:
        raise ConditioningError(f"averaged Hessian is near-singular (min eigenvalue {w[0]:.3e})", w[0])
    factor = q @ np.linalg.solve(lt, q.T @ v.T) * (2.0 / np.sqrt(n))
    return TangentOperator.from_factor(mean, factor)


def sandwich_factor(v: np.ndarray, theta: np.ndarray) -> np.ndarray:
    """Thin factor ``F`` (d, n) with ``F F^T = 4 L^{-1} G L^{-1}`` from tangent coordinates.

    ``L = a P + V^T diag(g/n) V`` restricted to the span of the rows of ``V``
    is inverted through the n x n system ``(a I + K diag(g/n)) A^T = V`` with
    ``K = V V^T``; this agrees with the dense route of
    :func:`asymptotic_covariance` and costs O(n^2 d).
    """
    n = v.shape[0]
    a, g = _sphere.mean_hessian_parts(theta)
    if a <= LAMBDA_FLOOR:
        raise ConditioningError(f"averaged Hessian is near-singular (min eigenvalue {a:.3e})", a)
    k = v @ v.T
    system = a * np.eye(n) + k * (g / n)[None, :]
    return np.linalg.solve(system, v).T * (2.0 / np.sqrt(n))


@dataclass(frozen=True, eq=False)
class EigenSystem:
    """Leading eigenpairs; ``coords`` rows are orthonormal eigenvectors."""

    base: SpherePoint
    values: np.ndarray
    coords: np.ndarray
    trace: float

    @property
    def vectors(self) -> TangentVectors:
        return TangentVectors.from_coords(self.base, self.coords) if len(self.values) else TangentVectors(
            self.base, np.zeros((0, self.base.grid.size))
        )

    def __len__(self):
        return self.values.size

    def fve(self) -> np.ndarray:
        return np.cumsum(self.values) / self.trace


def _fix_signs(vecs: np.ndarray) -> np.ndarray:
    # rows; largest-magnitude entry made positive for reproducible output
    idx = np.argmax(np.abs(vecs), axis=1)
    s = np.sign(vecs[np.arange(vecs.shape[0]), idx])
    s[s == 0] = 1.0
    return vecs * s[:, None]


def eigen_from_factor(f: np.ndarray, max_rank: int | None = None):
    """Eigenpairs of ``F F^T`` through whichever of ``F^T F`` or ``F F^T`` is smaller."""
    d, r = f.shape
    if r < d:
        lam, u = np.linalg.eigh(f.T @ f)
        lam, u = lam[::-1], u[:, ::-1]
        keep = lam > EIGEN_FLOOR * max(lam[0], 0.0)
        if lam[0] <= 0:
            keep[:] = False
        lam, u = lam[keep], u[:, keep]
        vecs = (f @ u / np.sqrt(lam)).T
    else:
        lam, w = np.linalg.eigh(f @ f.T)
        lam, w = lam[::-1], w[:, ::-1]
        keep = lam > EIGEN_FLOOR * max(lam[0], 0.0)
        if lam[0] <= 0:
            keep[:] = False
        lam, vecs = lam[keep], w[:, keep].T
    if max_rank is not None:
        lam, vecs = lam[:max_rank], vecs[:max_rank]
    return lam, vecs


def eigen(a: TangentOperator, max_rank: int | None = None, method: str = "auto") -> EigenSystem:
    """Leading eigenpairs in nonincreasing order.

    ``method="gram"`` (the default when a thin factor is available) reduces
    to the r x r Gram matrix; ``"dense"`` solves in an orthonormal tangent
    basis. Eigenvalues below ``1e-12`` times the largest are dropped.
    """
    if method not in ("auto", "gram", "dense"):
        raise ValueError(f"unknown eigen method {method!r}")
    trace = a.trace()
    use_gram = method == "gram" or (method == "auto" and a.factor is not None and a.factor.shape[1] < a.grid.size)
    if use_gram:
        if a.factor is None:
            raise ValueError("Gram route needs an operator with a factor")
        lam, vecs = eigen_from_factor(a.factor, max_rank)
    else:
        q = _sphere.tangent_basis(a.base.coords)
        block = q.T @ a.mat @ q
        lam, w = np.linalg.eigh(0.5 * (block + block.T))
        lam, w = lam[::-1], w[:, ::-1]
        top = lam[0] if lam.size else 0.0
        keep = lam > EIGEN_FLOOR * max(top, 0.0) if top > 0 else np.zeros(lam.size, bool)
        lam, vecs = lam[keep], (q @ w[:, keep]).T
        if max_rank is not None:
            lam, vecs = lam[:max_rank], vecs[:max_rank]
    if vecs.size:
        vecs = _fix_signs(vecs)
    return EigenSystem(a.base, _readonly(lam), _readonly(vecs.reshape(len(lam), a.grid.size)), trace)


def fve(values) -> np.ndarray:
    """Cumulative fraction of variance explained by the leading values."""
    values = np.asarray(values, dtype=float)
    return np.cumsum(values) / values.sum()


def select_K(values, r: float, total: float | None = None) -> int:
    """Smallest K whose leading eigenvalues explain at least a fraction ``r``.

    ``total`` defaults to the sum of ``values``; pass the operator trace when
    ``values`` is truncated.
    """
    if not 0.0 < r < 1.0:
        raise ValueError("FVE threshold must lie in (0, 1)")
    values = np.clip(np.asarray(values, dtype=float), 0.0, None)
    total = values.sum() if total is None else float(total)
    if values.size == 0 or total <= 0.0 or values[0] <= 0.0:
        raise DomainError("FVE undefined for an all-zero spectrum")
    frac = np.cumsum(values) / total
    hit = np.flatnonzero(frac >= r - 1e-12)
    return int(hit[0]) + 1 if hit.size else int(values.size)


class HOperator:
    """Empirical ``u -> n^{-1} sum_i (L_i u) (x) V_i`` mapping T_mean to operators on T_mean.

    ``L_i`` is the Hessian of the squared distance to ``X_i``. With the
    convention ``(f (x) g) h = <f, h> g`` the returned matrices are
    ``n^{-1} sum_i V_i (L_i u)^T`` in isometric coordinates; they are not
    symmetric in general.
    """

    def __init__(self, vectors: TangentVectors):
        self.base = vectors.base
        self._v = vectors.coords
        theta = np.linalg.norm(self._v, axis=1)
        self._c = 2.0 * _sphere.cot_factor(theta)
        self._g = _sphere.curvature_gap(theta)

    def hessian_images(self, u: TangentVector) -> np.ndarray:
        """Rows ``L_i u`` in isometric coordinates."""
        _same_base(self.base, u.base)
        uc = u.coords
        return self._c[:, None] * uc + (self._g * (self._v @ uc))[:, None] * self._v

    def __call__(self, u: TangentVector) -> TangentOperator:
        lu = self.hessian_images(u)
        return TangentOperator(self.base, self._v.T @ lu / self._v.shape[0])


def h_operator(sample: SampleSet, mean: SpherePoint) -> HOperator:
    return HOperator(tangent_vectors(sample, mean))


def transported_covariance(sample: SampleSet, mean_hat: SpherePoint, reference: SpherePoint) -> TangentOperator:
    """Covariance at ``mean_hat`` carried to ``reference`` by parallel transport."""
    g = covariance_operator(tangent_vectors(sample, mean_hat))
    return transport_operator(mean_hat, reference, g)
