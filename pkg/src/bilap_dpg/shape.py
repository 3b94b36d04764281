"""Polynomial shape functions on the reference triangle and quadrature rules.

The reference triangle has vertices (0,0), (1,0), (0,1).  The degree-d
basis starts with the three barycentric coordinates (for d >= 1) and is
completed by the monomials x^i y^j of exact total degree 2..d, so the
degree-1 sub-basis is a partition of unity and every member of degree
<= 1 has a vanishing Hessian.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

REFERENCE_VERTICES = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])

_MAX_TENSOR_EXACTNESS = 60


class QuadratureError(Exception):
    """Unsupported quadrature request."""


def basis_dimension(degree):
    return (degree + 1) * (degree + 2) // 2


@dataclass(frozen=True)
class PolyBasis:
    """Evaluation tables of the reference basis of one polynomial degree."""

    degree: int

    @property
    def dimension(self):
        return basis_dimension(self.degree)

    def eval(self, points):
        return eval_basis(self.degree, points)


def _check_reference_points(pts):
    x, y = pts[..., 0], pts[..., 1]
    tol = 1e-12
    if np.any(x < -tol) or np.any(y < -tol) or np.any(x + y > 1 + tol):
        raise ValueError("point outside the closed reference triangle")


def eval_basis(degree, points):
    """Values, gradients and Hessians of the reference basis.

    Parameters
    ----------
    degree : int >= 0
    points : (..., 2) array of reference coordinates.

    Returns
    -------
    values : (..., dim)
    gradients : (..., dim, 2)
    hessians : (..., dim, 2, 2)
    """
    if degree < 0:
        raise ValueError("degree must be nonnegative")
    pts = np.asarray(points, dtype=float)
    single = pts.ndim == 1
    pts = np.atleast_2d(pts)
    _check_reference_points(pts)
    x, y = pts[..., 0], pts[..., 1]
    npts = pts.shape[0]
    dim = basis_dimension(degree)
    values = np.zeros((npts, dim))
    grads = np.zeros((npts, dim, 2))
    hess = np.zeros((npts, dim, 2, 2))

    if degree == 0:
        values[:, 0] = 1.0
    else:
        values[:, 0] = 1.0 - x - y
        grads[:, 0] = (-1.0, -1.0)
        values[:, 1] = x
        grads[:, 1] = (1.0, 0.0)
        values[:, 2] = y
        grads[:, 2] = (0.0, 1.0)
        idx = 3
        for q in range(2, degree + 1):
            for j in range(q + 1):
                i = q - j  # monomial x^i y^j
                values[:, idx] = x**i * y**j
                if i > 0:
                    grads[:, idx, 0] = i * x ** (i - 1) * y**j
                if j > 0:
                    grads[:, idx, 1] = j * x**i * y ** (j - 1)
                if i > 1:
                    hess[:, idx, 0, 0] = i * (i - 1) * x ** (i - 2) * y**j
                if i > 0 and j > 0:
                    hess[:, idx, 0, 1] = hess[:, idx, 1, 0] = (
                        i * j * x ** (i - 1) * y ** (j - 1)
                    )
                if j > 1:
                    hess[:, idx, 1, 1] = j * (j - 1) * x**i * y ** (j - 2)
                idx += 1

    if single:
        return values[0], grads[0], hess[0]
    return values, grads, hess


@dataclass(frozen=True)
class QuadRule:
    """Quadrature points and weights with a certified exactness degree."""

    points: np.ndarray
    weights: np.ndarray
    exactness: int
    domain: str  # "triangle" (reference coords) or "edge" ([0, 1])

    def integrate(self, f):
        """Integrate a callable over the reference domain."""
        if self.domain == "triangle":
            vals = f(self.points[:, 0], self.points[:, 1])
        else:
            vals = f(self.points)
        return float(self.weights @ np.asarray(vals, dtype=float))


def _gauss01(n):
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


# hand-checkable symmetric rules; everything else tensorizes
_TRI_TABLE = {
    1: (np.array([[1 / 3, 1 / 3]]), np.array([0.5])),
    2: (
        np.array([[1 / 6, 1 / 6], [2 / 3, 1 / 6], [1 / 6, 2 / 3]]),
        np.array([1 / 6, 1 / 6, 1 / 6]),
    ),
}


def triangle_quadrature(exactness):
    """Rule on the reference triangle, exact for total degree `exactness`.

    Low degrees come from a symmetric table; higher degrees use a
    collapsed (Duffy) tensor-product Gauss rule, whose weights are
    always positive.
    """
    if exactness < 0:
        raise QuadratureError("exactness must be nonnegative")
    exactness = int(exactness)
    if exactness in _TRI_TABLE:
        pts, w = _TRI_TABLE[exactness]
        return QuadRule(pts.copy(), w.copy(), exactness, "triangle")
    if exactness > _MAX_TENSOR_EXACTNESS:
        raise QuadratureError(
            f"exactness {exactness} above table and tensor-rule limit"
        )
    # x = xi*(1 - eta), y = eta, Jacobian (1 - eta): xi-degree <= k,
    # eta-degree <= k + 1
    nx = exactness // 2 + 1
    ny = (exactness + 1) // 2 + 1
    xi, wx = _gauss01(nx)
    eta, wy = _gauss01(ny)
    X = np.outer(1.0 - eta, xi)
    Y = np.broadcast_to(eta[:, None], X.shape)
    W = np.outer(wy * (1.0 - eta), wx)
    pts = np.column_stack([X.ravel(), Y.ravel()])
    return QuadRule(pts, W.ravel(), exactness, "triangle")


def edge_quadrature(exactness):
    """Gauss rule on [0, 1], exact for degree `exactness`."""
    if exactness < 0:
        raise QuadratureError("exactness must be nonnegative")
    n = int(exactness) // 2 + 1
    t, w = _gauss01(n)
    return QuadRule(t, w, 2 * n - 1, "edge")


def map_to_triangle(rule, vertices):
    """Map a reference-triangle rule to a physical triangle.

    Returns (points (nq, 2), weights (nq,)); weights absorb the affine
    Jacobian so that `weights @ f(points)` approximates the integral.
    """
    v = np.asarray(vertices, dtype=float)
    d1, d2 = v[1] - v[0], v[2] - v[0]
    jac = d1[0] * d2[1] - d1[1] * d2[0]
    pts = v[0] + np.outer(rule.points[:, 0], d1) + np.outer(rule.points[:, 1], d2)
    return pts, rule.weights * jac
