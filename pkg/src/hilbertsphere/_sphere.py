"""Vectorized unit-sphere kernels in isometric coordinates.

Every function here treats points as unit vectors of R^d under the plain dot
product. Batched arguments carry observations on the leading axis. The typed
wrappers in :mod:`hilbertsphere.geometry` convert grid function values to these
coordinates and back.
"""

from __future__ import annotations

import numpy as np

from .errors import ConvergenceError, DegenerateMean, DomainError

SMALL_ANGLE = 1e-12
SERIES_ANGLE = 1e-3
ANTIPODAL_GUARD = np.pi - 1e-6


def normalize(x: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(x, axis=-1, keepdims=True)
    return x / n


def dist(p: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Geodesic distance ``arccos(<p, x>)``.

    Evaluated as ``atan2(|x - <p, x> p|, <p, x>)``, which agrees with the
    clamped arccos but keeps full relative accuracy at small angles.
    """
    c = x @ p
    s = np.linalg.norm(x - np.multiply.outer(c, p), axis=-1)
    return np.arctan2(s, c)


def exp(p: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Exponential map at ``p``; ``v`` may be a single vector or a batch."""
    single = np.ndim(v) == 1
    v = np.atleast_2d(v)
    nv = np.linalg.norm(v, axis=-1, keepdims=True)
    small = nv < SMALL_ANGLE
    sinc = np.sin(nv) / np.where(small, 1.0, nv)
    out = np.where(small, p, np.cos(nv) * p + sinc * v)
    out = normalize(out)
    return out[0] if single else out


def log(p: np.ndarray, x: np.ndarray, *, return_angle: bool = False):
    """Logarithm map at ``p`` of one point or a batch of points.

    The angle is computed as ``atan2(|u|, <p, x>)`` which stays accurate for
    nearly coincident points where ``arccos`` loses half the digits.
    """
    single = np.ndim(x) == 1
    x = np.atleast_2d(x)
    c = x @ p
    u = x - c[:, None] * p
    u -= (u @ p)[:, None] * p
    un = np.linalg.norm(u, axis=-1)
    theta = np.arctan2(un, c)
    bad = np.flatnonzero(theta > ANTIPODAL_GUARD)
    if bad.size:
        raise DomainError(f"log map undefined at antipode (index {int(bad[0])})")
    small = theta < SMALL_ANGLE
    theta = np.where(small, 0.0, theta)
    v = u * (theta / np.where(small, 1.0, un))[:, None]
    if single:
        v, theta = v[0], theta[0]
    return (v, theta) if return_angle else v


def plane_rotation(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Orthogonal matrix rotating the (x, y) plane so that x maps to y.

    Restricted to the tangent space at ``x`` this is Levi-Civita parallel
    transport along the minimizing geodesic; on the orthogonal complement of
    the plane it is the identity.
    """
    w, rho = log(x, y, return_angle=True)
    d = x.size
    if rho == 0.0:
        return np.eye(d)
    e = w / rho
    c, s = np.cos(rho), np.sin(rho)
    return np.eye(d) + (c - 1.0) * (np.outer(e, e) + np.outer(x, x)) + s * (np.outer(e, x) - np.outer(x, e))


def transport(x: np.ndarray, y: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Parallel transport of tangent vector(s) ``v`` at ``x`` to ``y``.

    Uses ``v - <e, v> ((1 - cos r) e + sin r x)`` with ``e`` the unit initial
    velocity of the geodesic, which equals the closed form
    ``v - <log_x y, v> / r^2 (log_x y + log_y x)`` without dividing by ``r^2``.
    """
    w, rho = log(x, y, return_angle=True)
    if rho == 0.0:
        return np.array(v, dtype=float, copy=True)
    single = np.ndim(v) == 1
    v = np.atleast_2d(v)
    e = w / rho
    shift = (1.0 - np.cos(rho)) * e + np.sin(rho) * x
    out = v - (v @ e)[:, None] * shift
    out -= (out @ y)[:, None] * y
    return out[0] if single else out


def tangent_projector(p: np.ndarray) -> np.ndarray:
    return np.eye(p.size) - np.outer(p, p)


def tangent_basis(p: np.ndarray) -> np.ndarray:
    """Orthonormal basis (d, d-1) of the complement of ``p`` via a Householder reflection."""
    d = p.size
    w = p.astype(float, copy=True)
    sign = 1.0 if w[0] >= 0 else -1.0
    w[0] += sign
    h = np.eye(d) - 2.0 * np.outer(w, w) / (w @ w)
    # h @ e_0 = -sign * p, so the remaining columns span p's complement
    return h[:, 1:]


def cot_factor(theta: np.ndarray) -> np.ndarray:
    """``theta * cot(theta)`` with the removable singularity at 0 filled in."""
    theta = np.asarray(theta, dtype=float)
    t2 = theta * theta
    series = 1.0 - t2 / 3.0 - t2 * t2 / 45.0
    with np.errstate(divide="ignore", invalid="ignore"):
        exact = theta / np.tan(theta)
    return np.where(theta < SERIES_ANGLE, series, exact)


def curvature_gap(theta: np.ndarray) -> np.ndarray:
    """``(2 - 2 theta cot theta) / theta^2``, the radial excess of the Hessian.

    Nonnegative on [0, pi) and smooth at 0 where it tends to 2/3.
    """
    theta = np.asarray(theta, dtype=float)
    t2 = theta * theta
    series = 2.0 / 3.0 + 2.0 * t2 / 45.0 + 4.0 * t2 * t2 / 945.0
    with np.errstate(divide="ignore", invalid="ignore"):
        exact = (2.0 - 2.0 * theta / np.tan(theta)) / t2
    return np.where(theta < SERIES_ANGLE, series, exact)


def hessian_matrix(x: np.ndarray, mu: np.ndarray) -> np.ndarray:
    """Hessian at 0 of ``v -> dist(x, exp_mu v)^2`` as a (d, d) matrix on T_mu."""
    v, theta = log(mu, x, return_angle=True)
    if theta >= ANTIPODAL_GUARD:
        raise DomainError("Hessian of the squared distance is undefined at the antipode")
    proj = tangent_projector(mu)
    c = 2.0 * cot_factor(theta)
    return c * proj + curvature_gap(theta) * np.outer(v, v)


def mean_hessian_parts(theta: np.ndarray):
    """Scalar and per-observation weights of the averaged Hessian.

    The averaged Hessian at ``mu`` is ``a * P_mu + V^T diag(g / n) V`` where
    ``V`` stacks ``log_mu X_i`` and ``P_mu`` projects onto the tangent space.
    """
    a = float(np.mean(2.0 * cot_factor(theta)))
    return a, curvature_gap(theta)


def extrinsic_mean(x: np.ndarray) -> np.ndarray:
    m = x.mean(axis=0)
    nm = np.linalg.norm(m)
    if nm < 1e-14:
        raise DegenerateMean("ambient average is zero; extrinsic mean undefined")
    return m / nm


def karcher_mean(x: np.ndarray, tol: float = 1e-10, max_iter: int = 200, init=None):
    """Fixed-point iteration ``mu <- exp_mu(mean_i log_mu x_i)``.

    Full steps are tried first and halved until the Frechet functional does
    not increase (beyond rounding). Returns ``(mu, iterations, grad_norm,
    functional, trace)`` where ``trace`` lists the functional per accepted
    iterate.
    """
    mu = extrinsic_mean(x) if init is None else normalize(np.asarray(init, dtype=float))
    v, th = log(mu, x, return_angle=True)
    f = float(np.mean(th * th))
    g = v.mean(axis=0)
    gn = float(np.linalg.norm(g))
    trace = [f]
    it = 0
    while gn > tol:
        if it >= max_iter:
            raise ConvergenceError(
                f"Frechet mean did not converge in {max_iter} iterations (gradient norm {gn:.3e})",
                last_iterate=mu,
                gradient_norm=gn,
                iterations=it,
            )
        step = 1.0
        while True:
            cand = exp(mu, step * g)
            vc, thc = log(cand, x, return_angle=True)
            fc = float(np.mean(thc * thc))
            if fc <= f + 1e-14 * (1.0 + f):
                break
            step *= 0.5
            if step < 1e-10:
                raise ConvergenceError(
                    "step halving failed to decrease the Frechet functional",
                    last_iterate=mu,
                    gradient_norm=gn,
                    iterations=it,
                )
        mu, v, f = cand, vc, fc
        g = v.mean(axis=0)
        gn = float(np.linalg.norm(g))
        trace.append(f)
        it += 1
    return mu, it, gn, f, trace
