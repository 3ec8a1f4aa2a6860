"""Shape-function families: counts, traces, orthogonality, divergence."""

import numpy as np
import pytest

from hdivct import basis
from hdivct.reference import BARY_GRADS, FACES, VERTICES, FaceId, quad_rule

PS = [1, 2, 3, 4]

TABLE_COUNTS = {
    1: (12, 0, 0, 0, 0),
    2: (24, 0, 6, 0, 0),
    3: (36, 4, 12, 8, 0),
    4: (48, 12, 18, 24, 3),
    5: (60, 24, 24, 48, 12),
    6: (72, 40, 30, 80, 30),
}


@pytest.mark.parametrize("p", list(TABLE_COUNTS))
def test_family_counts(p):
    c = basis.family_counts(p)
    got = tuple(c[f] for f in basis.FAMILIES)
    assert got == TABLE_COUNTS[p]
    assert sum(got) == (p + 1) * (p + 2) * (p + 3) // 2
    assert basis.interior_dim(p) == (p - 1) * (p + 1) * (p + 2) // 2


@pytest.mark.parametrize("p", list(TABLE_COUNTS))
def test_enumeration_matches_counts(p):
    shapes = basis.enumerate_shapes(p)
    assert len(shapes) == (p + 1) * (p + 2) * (p + 3) // 2
    assert len(shapes.interior_indices()) == basis.interior_dim(p)


def test_enumeration_rejects_p0():
    with pytest.raises(ValueError):
        basis.enumerate_shapes(0)


def test_lowest_edge_face_value_at_vertex():
    """lam1 grad(lam2) x grad(lam3) at v1 is the x unit vector."""
    shapes = basis.enumerate_shapes(1)
    for a, d in enumerate(shapes.shapes):
        if d.face == 0 and d.edge == (1, 2):
            val = shapes.eval_shape(a, VERTICES[1])
            assert np.allclose(val, [1.0, 0.0, 0.0], atol=1e-14)
            return
    raise AssertionError("shape not found")


def test_interior_bubble_vanishes_at_vertices():
    shapes = basis.enumerate_shapes(4)
    vals, _ = shapes.eval_all(VERTICES)
    for a, d in enumerate(shapes.shapes):
        if d.family == basis.INTERIOR_BUBBLE:
            assert np.abs(vals[:, a]).max() < 1e-14


def test_face_bubble_centroid_value():
    """lam1 lam2 lam3 grad(lam2) x grad(lam3) at the centroid."""
    shapes = basis.enumerate_shapes(3)
    centroid = np.full(3, 0.25)
    for a, d in enumerate(shapes.shapes):
        if d.family == basis.FACE_BUBBLE and d.face == 0 and d.idx == (0, 0):
            val = shapes.eval_shape(a, centroid)
            expect = (1 / 64) * np.cross(BARY_GRADS[2], BARY_GRADS[3])
            assert np.allclose(val, expect, atol=1e-14)
            return
    raise AssertionError("shape not found")


@pytest.mark.parametrize("p", PS)
def test_normal_trace_locality(p):
    """Face families carry normal trace only on their own face; interior none."""
    rng = np.random.default_rng(5)
    shapes = basis.enumerate_shapes(p)
    for j1 in range(4):
        pts = basis.random_face_points(j1, 25, rng)
        nrm = FaceId(j1).unit_normal
        vals, _ = shapes.eval_all(pts)
        tr = vals @ nrm
        for a, d in enumerate(shapes.shapes):
            if d.family in (basis.EDGE_FACE, basis.FACE_BUBBLE):
                if d.face != j1:
                    assert np.abs(tr[:, a]).max() < 1e-12
            else:
                assert np.abs(tr[:, a]).max() < 1e-12


@pytest.mark.parametrize("p", [2, 3, 4])
def test_edge_tangent_locality(p):
    """Edge-attached interior shapes have no tangential trace on other edges."""
    rng = np.random.default_rng(6)
    shapes = basis.enumerate_shapes(p)
    from hdivct.reference import EDGES

    for e in EDGES:
        pts = basis.random_edge_points(e, 10, rng)
        tau = VERTICES[e[1]] - VERTICES[e[0]]
        tau = tau / np.linalg.norm(tau)
        vals, _ = shapes.eval_all(pts)
        tr = vals @ tau
        for a, d in enumerate(shapes.shapes):
            if d.family == basis.EDGE_INTERIOR and tuple(d.edge) != e:
                assert np.abs(tr[:, a]).max() < 1e-12
            if d.family == basis.FACE_INTERIOR:
                assert np.abs(tr[:, a]).max() < 1e-12


@pytest.mark.parametrize("p", [3, 4])
def test_face_interior_tangential_locality(p):
    """n x Phi of a FaceInterior shape vanishes on the other three faces."""
    rng = np.random.default_rng(7)
    shapes = basis.enumerate_shapes(p)
    for j1 in range(4):
        pts = basis.random_face_points(j1, 25, rng)
        nrm = FaceId(j1).unit_normal
        vals, _ = shapes.eval_all(pts)
        for a, d in enumerate(shapes.shapes):
            if d.family == basis.FACE_INTERIOR and d.face != j1:
                cr = np.cross(np.broadcast_to(nrm, vals[:, a].shape), vals[:, a])
                assert np.abs(cr).max() < 1e-12


@pytest.mark.parametrize("p", PS)
def test_within_family_unit_norms(p):
    """After unit scaling every family Gram block has a unit diagonal."""
    shapes = basis.normalize(basis.enumerate_shapes(p))
    for fam in basis.FAMILIES:
        idx = [a for a, d in enumerate(shapes.shapes) if d.family == fam]
        if not idx:
            continue
        G = basis.gram_matrix(shapes, np.array(idx))
        assert np.allclose(np.diag(G), 1.0, atol=1e-10)
        assert np.linalg.eigvalsh(G).min() > 1e-10


@pytest.mark.parametrize("p", PS)
def test_full_gram_is_positive_definite(p):
    shapes = basis.normalize(basis.enumerate_shapes(p))
    lam = np.linalg.eigvalsh(basis.gram_matrix(shapes))
    assert lam.min() > 1e-10


def test_edge_face_blocks_full_rank():
    """Each face-edge pair contributes p independent functions."""
    p = 4
    shapes = basis.enumerate_shapes(p)
    for j1 in range(4):
        for e in basis.face_edges(j1):
            idx = [
                a
                for a, d in enumerate(shapes.shapes)
                if d.family == basis.EDGE_FACE and d.face == j1 and d.edge == e
            ]
            assert len(idx) == p
            G = basis.gram_matrix(shapes, np.array(idx))
            assert np.linalg.matrix_rank(G, tol=1e-10) == p


@pytest.mark.parametrize("p", PS)
def test_completeness(p):
    """The span reproduces random vector polynomials of degree <= p."""
    rng = np.random.default_rng(20 + p)
    shapes = basis.enumerate_shapes(p)
    rule = quad_rule(2 * p + 2)
    vals, _ = shapes.eval_all(rule.points)
    G = np.einsum("q,qai,qbi->ab", rule.weights, vals, vals)
    from hdivct.reference import eval_monomials, monomial_exponents

    exps = monomial_exponents(p)
    mono = eval_monomials(exps, rule.points)
    for _ in range(30):
        C = rng.standard_normal((len(exps), 3))
        f = mono @ C  # (nq, 3)
        rhs = np.einsum("q,qai,qi->a", rule.weights, vals, f)
        coef = np.linalg.solve(G, rhs)
        recon = np.einsum("qai,a->qi", vals, coef)
        err = np.sqrt(np.sum(rule.weights[:, None] * (recon - f) ** 2))
        nrm = np.sqrt(np.sum(rule.weights[:, None] * f**2))
        assert err < 1e-9 * nrm


@pytest.mark.parametrize("p", PS)
def test_divergence_matches_finite_differences(p):
    rng = np.random.default_rng(30 + p)
    shapes = basis.enumerate_shapes(p)
    pts = rng.dirichlet((2.0,) * 4, size=50)[:, 1:]
    _, divs = shapes.eval_all(pts)
    h = 1e-6
    fd = np.zeros_like(divs)
    for k in range(3):
        e = np.zeros(3)
        e[k] = h
        vp, _ = shapes.eval_all(pts + e)
        vm, _ = shapes.eval_all(pts - e)
        fd += (vp[:, :, k] - vm[:, :, k]) / (2 * h)
    assert np.abs(divs - fd).max() < 1e-5


def test_lowest_edge_face_divergence_is_constant():
    shapes = basis.enumerate_shapes(1)
    rng = np.random.default_rng(1)
    pts = rng.dirichlet((1.0,) * 4, size=20)[:, 1:]
    _, divs = shapes.eval_all(pts)
    assert np.abs(divs - divs[0]).max() < 1e-12
    for a, d in enumerate(shapes.shapes):
        if d.face == 0 and d.edge == (1, 2):
            k1, k2, k3 = 1, 2, 3
            expect = BARY_GRADS[k1] @ np.cross(BARY_GRADS[k2], BARY_GRADS[k3])
            assert np.isclose(divs[0, a], expect)


def test_interior_shapes_have_zero_mean_divergence():
    shapes = basis.enumerate_shapes(4)
    rule = quad_rule(8)
    _, divs = shapes.eval_all(rule.points)
    means = rule.weights @ divs
    for a in shapes.interior_indices():
        assert abs(means[a]) < 1e-13


def test_normalize_gives_unit_norms():
    shapes = basis.normalize(basis.enumerate_shapes(3))
    assert np.allclose(basis.shape_norms(shapes), 1.0, atol=1e-12)
