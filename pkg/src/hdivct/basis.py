"""Hierarchical H(div)-conforming BDM_p shape functions on the tetrahedron.

Five families, grouped by the geometric entity that carries the degrees of
freedom:

* edge-based face functions  (nonzero normal trace on one face)
* face bubble functions      (nonzero normal trace on one face, zero on edges)
* edge-based interior functions
* face-based interior functions
* interior bubble functions

Every shape is a sum of terms (scalar polynomial in the barycentric
coordinates) x (constant vector), so values and exact divergences follow
from the chain rule with the constant barycentric gradients.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .reference import (
    BARY_GRADS,
    DENOM_EPS,
    EDGES,
    FACES,
    VERTICES,
    barycentric,
    jacobi,
    jacobi_deriv,
    legendre,
    legendre_deriv,
    quad_rule,
)

EDGE_FACE = "EdgeFace"
FACE_BUBBLE = "FaceBubble"
EDGE_INTERIOR = "EdgeInterior"
FACE_INTERIOR = "FaceInterior"
INTERIOR_BUBBLE = "InteriorBubble"

FAMILIES = (EDGE_FACE, FACE_BUBBLE, EDGE_INTERIOR, FACE_INTERIOR, INTERIOR_BUBBLE)

#: Families whose normal trace vanishes on every face (element-private dofs).
INTERIOR_FAMILIES = (EDGE_INTERIOR, FACE_INTERIOR, INTERIOR_BUBBLE)


def face_edges(j1: int) -> list[tuple[int, int]]:
    """The three edges of face j1 as ordered pairs in cyclic orientation.

    The cyclic pairs (a,b), (b,c), (c,a) of the sorted vertex triple give
    each edge a distinct leading vertex k1, which keeps the three lowest
    edge-based face functions (normal trace ~ lam_{k1}) independent.
    """
    j2, j3, j4 = FACES[j1]
    return [(j2, j3), (j3, j4), (j4, j2)]


@dataclass(frozen=True)
class ShapeDescriptor:
    """Symbolic identity of one shape function.

    `face` is the opposite-vertex index for face-attached families, `edge` a
    sorted vertex pair for edge-attached families, `variant` the tangent
    choice (1 or 2) for FaceInterior or the axis (1..3) for InteriorBubble,
    and `idx` the polynomial indices: (i,), (m, n) or (l, m, n).
    """

    family: str
    face: int | None = None
    edge: tuple[int, int] | None = None
    variant: int | None = None
    idx: tuple[int, ...] = ()


def family_counts(p: int) -> dict[str, int]:
    """Per-family dimensions from the decomposition of (P_p)^3."""
    if p < 1:
        raise ValueError("degree p must be >= 1")
    return {
        EDGE_FACE: 12 * p,
        FACE_BUBBLE: max(0, 2 * (p - 2) * (p - 1)),
        EDGE_INTERIOR: 6 * (p - 1),
        FACE_INTERIOR: max(0, 4 * (p - 2) * (p - 1)),
        INTERIOR_BUBBLE: max(0, (p - 3) * (p - 2) * (p - 1) // 2),
    }


def interior_dim(p: int) -> int:
    """Dimension of the interior subspace: (p-1)(p+1)(p+2)/2."""
    return (p - 1) * (p + 1) * (p + 2) // 2


def _pairs_upto(s: int):
    """(m, n) with m, n >= 0 and m + n <= s, lexicographic."""
    return [(m, n) for m in range(s + 1) for n in range(s + 1 - m)]


def _triples_upto(s: int):
    return [
        (l, m, n)
        for l in range(s + 1)
        for m in range(s + 1 - l)
        for n in range(s + 1 - l - m)
    ]


# ---------------------------------------------------------------------------
# scalar kernels (value + partial derivatives w.r.t. the lambdas involved)
# ---------------------------------------------------------------------------

def _safe_div(num, den):
    """num/den with the collapsed-coordinate guard: 0 where den ~ 0.

    Valid here because every use multiplies the quotient by a prefactor that
    vanishes at least as fast on the degenerate set.
    """
    ok = np.abs(den) > DENOM_EPS
    return np.where(ok, num / np.where(ok, den, 1.0), 0.0)


def _face_kernel(a, b, c, m: int, n: int):
    """L_{m,n} on a face with barycentric prefactor variables (a, b, c).

    L = (1-a)^m (1-a-b)^n P_m^{(2n+3,2)}(2b/(1-a)-1) P_n^{(0,2)}(2c/(1-a-b)-1).
    Returns (L, dL/da, dL/db, dL/dc).
    """
    A = 1.0 - a
    B = 1.0 - a - b
    x = 2.0 * _safe_div(b, A) - 1.0
    y = 2.0 * _safe_div(c, B) - 1.0
    Pm = jacobi(m, 2 * n + 3, 2, x)
    Pn = jacobi(n, 0, 2, y)
    dPm = jacobi_deriv(m, 2 * n + 3, 2, x)
    dPn = jacobi_deriv(n, 0, 2, y)
    Am = A**m
    Bn = B**n
    L = Am * Bn * Pm * Pn
    # dx/da = 2b/A^2, dx/db = 2/A ; dy/da = dy/db = 2c/B^2, dy/dc = 2/B
    dx_da = 2.0 * _safe_div(b, A * A)
    dx_db = 2.0 * _safe_div(np.ones_like(A), A)
    dy_ab = 2.0 * _safe_div(c, B * B)
    dy_dc = 2.0 * _safe_div(np.ones_like(B), B)
    dAm = m * A ** (m - 1) if m >= 1 else np.zeros_like(A)
    dBn = n * B ** (n - 1) if n >= 1 else np.zeros_like(B)
    dL_da = (
        -dAm * Bn * Pm * Pn
        - Am * dBn * Pm * Pn
        + Am * Bn * (dPm * dx_da * Pn + Pm * dPn * dy_ab)
    )
    dL_db = -Am * dBn * Pm * Pn + Am * Bn * (dPm * dx_db * Pn + Pm * dPn * dy_ab)
    dL_dc = Am * Bn * Pm * dPn * dy_dc
    return L, dL_da, dL_db, dL_dc


def _edge_kernel(l1, l2, i: int):
    """K_i = (1-l1)^i P_i^{(1,2)}(2 l2/(1-l1) - 1); returns (K, dK/dl1, dK/dl2)."""
    A = 1.0 - l1
    x = 2.0 * _safe_div(l2, A) - 1.0
    P = jacobi(i, 1, 2, x)
    dP = jacobi_deriv(i, 1, 2, x)
    Ai = A**i
    dAi = i * A ** (i - 1) if i >= 1 else np.zeros_like(A)
    K = Ai * P
    dK_l1 = -dAi * P + Ai * dP * 2.0 * _safe_div(l2, A * A)
    dK_l2 = Ai * dP * 2.0 * _safe_div(np.ones_like(A), A)
    return K, dK_l1, dK_l2


def _bubble_kernel(l1, l2, l3, l: int, m: int, n: int):
    """Interior-bubble kernel L_{lmn}; returns (L, dL/dl1, dL/dl2, dL/dl3)."""
    A = 1.0 - l1
    B = 1.0 - l1 - l2
    x1 = 2.0 * l1 - 1.0
    x2 = 2.0 * _safe_div(l2, A) - 1.0
    x3 = 2.0 * _safe_div(l3, B) - 1.0
    Pl = jacobi(l, 2 * m + 2 * n + 8, 2, x1)
    Pm = jacobi(m, 2 * n + 5, 2, x2)
    Pn = jacobi(n, 2, 2, x3)
    dPl = jacobi_deriv(l, 2 * m + 2 * n + 8, 2, x1)
    dPm = jacobi_deriv(m, 2 * n + 5, 2, x2)
    dPn = jacobi_deriv(n, 2, 2, x3)
    Am = A**m
    Bn = B**n
    dAm = m * A ** (m - 1) if m >= 1 else np.zeros_like(A)
    dBn = n * B ** (n - 1) if n >= 1 else np.zeros_like(B)
    L = Am * Bn * Pl * Pm * Pn
    dx2_l1 = 2.0 * _safe_div(l2, A * A)
    dx3_l12 = 2.0 * _safe_div(l3, B * B)
    core = Pl * Pm * Pn
    dL1 = (
        -dAm * Bn * core
        - Am * dBn * core
        + Am * Bn * (2.0 * dPl * Pm * Pn + Pl * dPm * dx2_l1 * Pn + Pl * Pm * dPn * dx3_l12)
    )
    dL2 = -Am * dBn * core + Am * Bn * (
        Pl * dPm * 2.0 * _safe_div(np.ones_like(A), A) * Pn + Pl * Pm * dPn * dx3_l12
    )
    dL3 = Am * Bn * Pl * Pm * dPn * 2.0 * _safe_div(np.ones_like(B), B)
    return L, dL1, dL2, dL3


# ---------------------------------------------------------------------------
# per-shape evaluation
# ---------------------------------------------------------------------------

def _eval_descriptor(desc: ShapeDescriptor, lam: np.ndarray):
    """Raw value (N,3) and divergence (N,) of one shape at barycentric lam."""
    N = lam.shape[0]
    if desc.family == EDGE_FACE:
        k1, k2 = desc.edge
        (k3,) = set(FACES[desc.face]) - {k1, k2}
        s = desc.idx[0]
        C23 = np.cross(BARY_GRADS[k2], BARY_GRADS[k3])
        l1 = lam[:, k1]
        l2 = lam[:, k2]
        if s == 0:
            val = l1[:, None] * C23
            div = np.full(N, BARY_GRADS[k1] @ C23)
            return val, div
        C31 = np.cross(BARY_GRADS[k3], BARY_GRADS[k1])
        g = l2 - l1
        li = legendre(s - 1, g)
        dli = legendre_deriv(s - 1, g)
        lj = legendre(s - 2, g)
        dlj = legendre_deriv(s - 2, g)
        a = li * l1 * l2            # coefficient of C31
        b = lj * l1                 # coefficient of C23
        val = a[:, None] * C31 + b[:, None] * C23
        # d/dl1, d/dl2 of the two scalars (gamma = l2 - l1)
        da_1 = -dli * l1 * l2 + li * l2
        da_2 = dli * l1 * l2 + li * l1
        db_1 = -dlj * l1 + lj
        db_2 = dlj * l1
        grad_a = da_1[:, None] * BARY_GRADS[k1] + da_2[:, None] * BARY_GRADS[k2]
        grad_b = db_1[:, None] * BARY_GRADS[k1] + db_2[:, None] * BARY_GRADS[k2]
        div = grad_a @ C31 + grad_b @ C23
        return val, div

    if desc.family in (FACE_BUBBLE, FACE_INTERIOR):
        j2, j3, j4 = FACES[desc.face]
        m, n = desc.idx
        a, b, c = lam[:, j2], lam[:, j3], lam[:, j4]
        L, dLa, dLb, dLc = _face_kernel(a, b, c, m, n)
        pre = a * b * c
        phi = pre * L
        dphi_a = b * c * L + pre * dLa
        dphi_b = a * c * L + pre * dLb
        dphi_c = a * b * L + pre * dLc
        grad = (
            dphi_a[:, None] * BARY_GRADS[j2]
            + dphi_b[:, None] * BARY_GRADS[j3]
            + dphi_c[:, None] * BARY_GRADS[j4]
        )
        if desc.family == FACE_BUBBLE:
            vec = np.cross(BARY_GRADS[j3], BARY_GRADS[j4])
        elif desc.variant == 1:
            vec = VERTICES[j3] - VERTICES[j2]
        else:
            vec = VERTICES[j4] - VERTICES[j2]
        vec = vec / np.linalg.norm(vec)
        return phi[:, None] * vec, grad @ vec

    if desc.family == EDGE_INTERIOR:
        k1, k2 = desc.edge
        (i,) = desc.idx
        l1, l2 = lam[:, k1], lam[:, k2]
        K, dK1, dK2 = _edge_kernel(l1, l2, i)
        phi = l1 * l2 * K
        dphi_1 = l2 * K + l1 * l2 * dK1
        dphi_2 = l1 * K + l1 * l2 * dK2
        grad = dphi_1[:, None] * BARY_GRADS[k1] + dphi_2[:, None] * BARY_GRADS[k2]
        tau = VERTICES[k2] - VERTICES[k1]
        tau = tau / np.linalg.norm(tau)
        return phi[:, None] * tau, grad @ tau

    if desc.family == INTERIOR_BUBBLE:
        l, m, n = desc.idx
        l0, l1, l2, l3 = lam[:, 0], lam[:, 1], lam[:, 2], lam[:, 3]
        L, dL1, dL2, dL3 = _bubble_kernel(l1, l2, l3, l, m, n)
        pre = l0 * l1 * l2 * l3
        phi = pre * L
        dphi_0 = l1 * l2 * l3 * L
        dphi_1 = l0 * l2 * l3 * L + pre * dL1
        dphi_2 = l0 * l1 * l3 * L + pre * dL2
        dphi_3 = l0 * l1 * l2 * L + pre * dL3
        grad = (
            dphi_0[:, None] * BARY_GRADS[0]
            + dphi_1[:, None] * BARY_GRADS[1]
            + dphi_2[:, None] * BARY_GRADS[2]
            + dphi_3[:, None] * BARY_GRADS[3]
        )
        axis = desc.variant - 1
        return phi[:, None] * np.eye(3)[axis], grad[:, axis]

    raise ValueError(f"unknown family {desc.family!r}")


# ---------------------------------------------------------------------------
# shape sets
# ---------------------------------------------------------------------------

@dataclass
class ShapeSet:
    """The ordered degree-p basis with per-shape scaling factors.

    The ordering is frozen: EdgeFace (by face, then edge, then index),
    FaceBubble, EdgeInterior, FaceInterior, InteriorBubble.  `scales` are all
    1 for the raw printed formulas; `normalize` returns a unit-L2-norm copy.
    """

    p: int
    shapes: list[ShapeDescriptor]
    scales: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.scales is None:
            self.scales = np.ones(len(self.shapes))

    def __len__(self) -> int:
        return len(self.shapes)

    def eval_all(self, points) -> tuple[np.ndarray, np.ndarray]:
        """Values (N, nshapes, 3) and divergences (N, nshapes) at `points`."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        lam = barycentric(pts)
        vals = np.empty((pts.shape[0], len(self.shapes), 3))
        divs = np.empty((pts.shape[0], len(self.shapes)))
        for a, desc in enumerate(self.shapes):
            v, d = _eval_descriptor(desc, lam)
            vals[:, a, :] = self.scales[a] * v
            divs[:, a] = self.scales[a] * d
        return vals, divs

    def eval_shape(self, desc_or_index, point) -> np.ndarray:
        """Value of a single shape at a single point."""
        a = self._index_of(desc_or_index)
        vals, _ = self.eval_all(np.asarray(point, dtype=float)[None, :])
        return vals[0, a]

    def eval_shape_div(self, desc_or_index, point) -> float:
        a = self._index_of(desc_or_index)
        _, divs = self.eval_all(np.asarray(point, dtype=float)[None, :])
        return float(divs[0, a])

    def _index_of(self, desc_or_index) -> int:
        if isinstance(desc_or_index, ShapeDescriptor):
            return self.shapes.index(desc_or_index)
        return int(desc_or_index)

    def family_slice(self, family: str) -> slice:
        idx = [a for a, s in enumerate(self.shapes) if s.family == family]
        if not idx:
            return slice(0, 0)
        return slice(idx[0], idx[-1] + 1)

    def interior_indices(self) -> np.ndarray:
        return np.array(
            [a for a, s in enumerate(self.shapes) if s.family in INTERIOR_FAMILIES],
            dtype=int,
        )


def enumerate_shapes(p: int) -> ShapeSet:
    """All shapes of degree p in the frozen order; counts match the table."""
    if p < 1:
        raise ValueError("degree p must be >= 1")
    shapes: list[ShapeDescriptor] = []
    for j1 in range(4):
        for edge in face_edges(j1):
            for s in range(p):
                shapes.append(ShapeDescriptor(EDGE_FACE, face=j1, edge=edge, idx=(s,)))
    if p >= 3:
        for j1 in range(4):
            for m, n in _pairs_upto(p - 3):
                shapes.append(ShapeDescriptor(FACE_BUBBLE, face=j1, idx=(m, n)))
    for edge in EDGES:
        for i in range(p - 1):
            shapes.append(ShapeDescriptor(EDGE_INTERIOR, edge=edge, idx=(i,)))
    if p >= 3:
        for j1 in range(4):
            for variant in (1, 2):
                for m, n in _pairs_upto(p - 3):
                    shapes.append(
                        ShapeDescriptor(FACE_INTERIOR, face=j1, variant=variant, idx=(m, n))
                    )
    if p >= 4:
        for axis in (1, 2, 3):
            for l, m, n in _triples_upto(p - 4):
                shapes.append(
                    ShapeDescriptor(INTERIOR_BUBBLE, variant=axis, idx=(l, m, n))
                )
    counts = family_counts(p)
    assert len(shapes) == sum(counts.values()) == (p + 1) * (p + 2) * (p + 3) // 2
    return ShapeSet(p, shapes)


def gram_matrix(shape_set: ShapeSet, indices=None) -> np.ndarray:
    """Gram matrix <Phi_a, Phi_b> on K3 with quad_rule(2p)."""
    rule = quad_rule(2 * shape_set.p)
    vals, _ = shape_set.eval_all(rule.points)
    if indices is not None:
        vals = vals[:, np.asarray(indices, dtype=int), :]
    return np.einsum("q,qam,qbm->ab", rule.weights, vals, vals)


def shape_norms(shape_set: ShapeSet) -> np.ndarray:
    """L2 norms of each (scaled) shape on K3."""
    return np.sqrt(np.diag(gram_matrix(shape_set)))


def normalize(shape_set: ShapeSet) -> ShapeSet:
    """Scale every shape to unit L2 norm on K3."""
    norms = shape_norms(shape_set)
    if np.any(norms < 1e-14):
        bad = int(np.argmin(norms))
        raise RuntimeError(f"shape {shape_set.shapes[bad]} has numerically zero norm")
    return replace(shape_set, scales=shape_set.scales / norms)


def random_face_points(j1: int, count: int, rng: np.random.Generator) -> np.ndarray:
    """Random points strictly inside face j1 of the reference tetrahedron."""
    mu = rng.dirichlet(np.ones(3) * 2.0, size=count)
    verts = VERTICES[list(FACES[j1])]
    return mu @ verts


def random_edge_points(edge: tuple[int, int], count: int, rng: np.random.Generator):
    t = rng.uniform(0.05, 0.95, size=count)
    a, b = edge
    return np.outer(1 - t, VERTICES[a]) + np.outer(t, VERTICES[b])
