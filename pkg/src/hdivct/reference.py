"""Reference-simplex geometry, orthogonal polynomials, and quadrature.

The reference 3-simplex K3 has vertices v0=(0,0,0), v1=(1,0,0), v2=(0,1,0),
v3=(0,0,1).  Everything downstream (shape functions, element maps, moment
bases) is expressed in terms of the barycentric coordinates on K3 and
Jacobi/Legendre polynomials evaluated through scipy.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import eval_jacobi, roots_jacobi

#: Vertices of the reference tetrahedron, one per row.
VERTICES = np.array(
    [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]
)

#: Constant gradients of the barycentric coordinates, one per row.
BARY_GRADS = np.array(
    [[-1.0, -1.0, -1.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]
)

#: The six edges (j1, j2) with j1 < j2, listed in index order j = 1..6.
EDGES = [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)]

#: FACES[j1] is the sorted vertex triple of the face opposite vertex j1.
FACES = [(1, 2, 3), (0, 2, 3), (0, 1, 3), (0, 1, 2)]

#: Threshold below which collapsed-coordinate denominators are treated as 0.
DENOM_EPS = 1e-13


@dataclass(frozen=True)
class EdgeId:
    """An edge [j1, j2] of the reference tetrahedron, j1 < j2."""

    j1: int
    j2: int

    def __post_init__(self):
        if not (0 <= self.j1 < self.j2 <= 3):
            raise ValueError(f"invalid edge ({self.j1},{self.j2})")

    @property
    def j(self) -> int:
        """Unique edge index in 1..6: j = j1 + j2 + sign(j1)."""
        return self.j1 + self.j2 + (1 if self.j1 > 0 else 0)

    @property
    def tangent(self) -> np.ndarray:
        return VERTICES[self.j2] - VERTICES[self.j1]


@dataclass(frozen=True)
class FaceId:
    """The face of the reference tetrahedron opposite vertex j1."""

    j1: int

    def __post_init__(self):
        if self.j1 not in (0, 1, 2, 3):
            raise ValueError(f"invalid face {self.j1}")

    @property
    def vertices(self) -> tuple[int, int, int]:
        return FACES[self.j1]

    @property
    def unit_normal(self) -> np.ndarray:
        """Outward unit normal of the face on the reference tetrahedron."""
        j2, j3, j4 = FACES[self.j1]
        nrm = np.cross(VERTICES[j3] - VERTICES[j2], VERTICES[j4] - VERTICES[j2])
        nrm = nrm / np.linalg.norm(nrm)
        # orient away from the opposite vertex
        if np.dot(nrm, VERTICES[self.j1] - VERTICES[j2]) > 0:
            nrm = -nrm
        return nrm


def edge_index(j1: int, j2: int) -> EdgeId:
    if j1 >= j2:
        raise ValueError(f"edge requires j1 < j2, got ({j1},{j2})")
    return EdgeId(j1, j2)


def barycentric(points):
    """Barycentric coordinates (lam0..lam3) of points on K3.

    `points` has shape (..., 3); result has shape (..., 4).
    """
    pts = np.asarray(points, dtype=float)
    lam0 = 1.0 - pts[..., 0] - pts[..., 1] - pts[..., 2]
    return np.stack([lam0, pts[..., 0], pts[..., 1], pts[..., 2]], axis=-1)


def barycentric_gradients() -> np.ndarray:
    """Constant gradients of lam0..lam3 (rows); they sum to zero."""
    return BARY_GRADS.copy()


def edge_gamma(edge: EdgeId, points):
    """Edge parameter lam_{j2} - lam_{j1}, in [-1, 1] along the edge."""
    lam = barycentric(points)
    return lam[..., edge.j2] - lam[..., edge.j1]


def jacobi(n: int, alpha: float, beta: float, x):
    """Jacobi polynomial P_n^{(alpha,beta)}(x)."""
    if n < 0:
        raise ValueError("jacobi order must be >= 0")
    return eval_jacobi(n, alpha, beta, x)


def jacobi_deriv(n: int, alpha: float, beta: float, x):
    """d/dx P_n^{(alpha,beta)}(x) = (n+alpha+beta+1)/2 * P_{n-1}^{(alpha+1,beta+1)}."""
    if n < 0:
        raise ValueError("jacobi order must be >= 0")
    if n == 0:
        return np.zeros_like(np.asarray(x, dtype=float))
    return 0.5 * (n + alpha + beta + 1) * eval_jacobi(n - 1, alpha + 1, beta + 1, x)


def legendre(i: int, x):
    """Legendre polynomial ell_i = P_i^{(0,0)}, with ell_{-1} := 1."""
    if i < -1:
        raise ValueError("legendre index must be >= -1")
    if i == -1:
        return np.ones_like(np.asarray(x, dtype=float))
    return eval_jacobi(i, 0.0, 0.0, x)


def legendre_deriv(i: int, x):
    """Derivative of legendre(i, .); zero for i in {-1, 0}."""
    if i < -1:
        raise ValueError("legendre index must be >= -1")
    if i <= 0:
        return np.zeros_like(np.asarray(x, dtype=float))
    return jacobi_deriv(i, 0.0, 0.0, x)


@dataclass(frozen=True)
class QuadratureRule:
    """Points (strictly interior) and weights on the reference tetrahedron."""

    points: np.ndarray   # (nq, 3)
    weights: np.ndarray  # (nq,)

    def __len__(self) -> int:
        return len(self.weights)


def _gauss_jacobi_01(npts: int, alpha: int):
    """Gauss-Jacobi rule on [0,1] with weight (1-s)^alpha."""
    x, w = roots_jacobi(npts, alpha, 0.0)
    # s = (x+1)/2 maps [-1,1] -> [0,1]; (1-x)^alpha dx = 2^(alpha+1) (1-s)^alpha ds
    return 0.5 * (x + 1.0), w / 2.0 ** (alpha + 1)


@lru_cache(maxsize=None)
def quad_rule(degree: int) -> QuadratureRule:
    """Collapsed-coordinate rule exact for total degree <= `degree` on K3.

    Tensor product of one-dimensional Gauss rules through the Duffy map
    xi = s1, eta = s2(1-s1), zeta = s3(1-s1)(1-s2); the Jacobian powers
    (1-s1)^2 (1-s2) are absorbed by Gauss-Jacobi weights.
    """
    if degree < 0:
        raise ValueError("quadrature degree must be >= 0")
    npts = (degree + 2 + 1) // 2  # ceil((degree+2)/2)
    s1, w1 = _gauss_jacobi_01(npts, 2)
    s2, w2 = _gauss_jacobi_01(npts, 1)
    s3, w3 = _gauss_jacobi_01(npts, 0)
    S1, S2, S3 = np.meshgrid(s1, s2, s3, indexing="ij")
    W = (w1[:, None, None] * w2[None, :, None] * w3[None, None, :]).ravel()
    xi = S1.ravel()
    eta = (S2 * (1.0 - S1)).ravel()
    zeta = (S3 * (1.0 - S1) * (1.0 - S2)).ravel()
    pts = np.column_stack([xi, eta, zeta])
    pts.setflags(write=False)
    W.setflags(write=False)
    return QuadratureRule(pts, W)


def simplex_monomial_integral(a: int, b: int, c: int, d: int = 0) -> float:
    """Exact integral of lam0^d lam1^a lam2^b lam3^c over K3.

    Equals a! b! c! d! / (a+b+c+d+3)!.
    """
    from math import factorial

    return (
        factorial(a) * factorial(b) * factorial(c) * factorial(d)
        / factorial(a + b + c + d + 3)
    )


def monomial_exponents(degree: int) -> np.ndarray:
    """Exponent triples (a,b,c) with a+b+c <= degree, constant first.

    Ordered by total degree, then lexicographically; this ordering is relied
    on by the moment bases (first member is the constant).
    """
    out = []
    for tot in range(degree + 1):
        for a in range(tot, -1, -1):
            for b in range(tot - a, -1, -1):
                out.append((a, b, tot - a - b))
    return np.array(out, dtype=int)


def eval_monomials(exps: np.ndarray, points: np.ndarray) -> np.ndarray:
    """Values of xi^a eta^b zeta^c at `points`; shape (npts, nmono)."""
    pts = np.asarray(points, dtype=float)
    return (
        pts[:, 0:1] ** exps[None, :, 0]
        * pts[:, 1:2] ** exps[None, :, 1]
        * pts[:, 2:3] ** exps[None, :, 2]
    )


def orthonormal_scalar_basis(degree: int, points: np.ndarray, weights: np.ndarray):
    """Orthonormalize the monomials of total degree <= `degree`.

    Returns (coeffs, exps) such that w_k(x) = sum_m coeffs[m,k] * mono_m(x) and
    sum_q weights[q] w_j(x_q) w_k(x_q) = delta_jk.  Because the monomials are
    ordered constant-first and the transform is triangular, w_0 is the
    constant 1/sqrt(sum weights).
    """
    exps = monomial_exponents(degree)
    V = eval_monomials(exps, points)
    M = V.T @ (weights[:, None] * V)
    L = np.linalg.cholesky(M)
    coeffs = np.linalg.inv(L).T  # upper triangular, columns = basis functions
    return coeffs, exps
