"""Discretized function domains.

A :class:`Grid` fixes the abscissae at which functions are sampled and the
quadrature weights that define the L2 inner product

    <f, g> = sum_j w_j f_j g_j.

All numerical kernels work in *isometric coordinates* ``c = sqrt(w) * f`` in
which this inner product is the plain dot product; :meth:`Grid.to_coords` and
:meth:`Grid.from_coords` convert between the two.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, ValidationError


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Grid:
    """Abscissae (or zone labels) with positive quadrature weights."""

    points: np.ndarray
    weights: np.ndarray
    labels: tuple = field(default=())

    def __post_init__(self):
        points = _frozen(self.points)
        weights = _frozen(self.weights)
        if points.ndim != 1 or weights.shape != points.shape:
            raise DimensionError("points and weights must be 1-d arrays of equal length")
        if points.size == 0:
            raise DimensionError("grid must have at least one point")
        if not np.all(np.isfinite(weights)) or np.any(weights <= 0):
            raise ValidationError("quadrature weights must be finite and positive")
        object.__setattr__(self, "points", points)
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "sqrt_weights", _frozen(np.sqrt(weights)))
        if not self.labels:
            object.__setattr__(self, "labels", tuple(format(p, ".17g") for p in points))
        elif len(self.labels) != points.size:
            raise DimensionError("labels must match the number of grid points")

    @classmethod
    def uniform(cls, m: int = 101, a: float = 0.0, b: float = 1.0) -> "Grid":
        """Equispaced grid on [a, b] with composite trapezoid weights."""
        if m < 2:
            raise ValidationError("an interval grid needs at least two points")
        s = np.linspace(a, b, m)
        h = (b - a) / (m - 1)
        w = np.full(m, h)
        w[0] = w[-1] = h / 2
        return cls(s, w)

    @classmethod
    def zones(cls, labels, weights=None) -> "Grid":
        """Discrete zone domain; uniform weights ``1/Z`` unless given."""
        labels = tuple(str(x) for x in labels)
        if weights is None:
            weights = np.full(len(labels), 1.0 / len(labels))
        return cls(np.arange(len(labels), dtype=float), weights, labels)

    @property
    def size(self) -> int:
        return self.points.size

    def __len__(self):
        return self.points.size

    def same_as(self, other: "Grid") -> bool:
        return self is other or (
            self.size == other.size
            and np.array_equal(self.weights, other.weights)
            and np.array_equal(self.points, other.points)
        )

    def check(self, f) -> np.ndarray:
        f = np.asarray(f, dtype=float)
        if f.shape[-1] != self.size:
            raise DimensionError(f"expected length {self.size} on the last axis, got {f.shape[-1]}")
        return f

    def inner(self, f, g):
        r = np.sum(self.weights * self.check(f) * self.check(g), axis=-1)
        return float(r) if np.ndim(r) == 0 else r

    def norm(self, f):
        return np.sqrt(self.inner(f, f))

    def to_coords(self, f) -> np.ndarray:
        return self.check(f) * self.sqrt_weights

    def from_coords(self, c) -> np.ndarray:
        return self.check(c) / self.sqrt_weights

    def constant(self) -> np.ndarray:
        """The constant function with unit norm (psi_1 on a unit-measure domain)."""
        return np.full(self.size, 1.0 / np.sqrt(self.weights.sum()))

    def __repr__(self):
        return f"Grid(size={self.size}, measure={self.weights.sum():.6g})"
