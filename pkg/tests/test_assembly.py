"""Global mass matrix, L2 projection, and divergence moments."""

import numpy as np
import pytest

from hdivct.assembly import (
    FemField,
    Space,
    div_l2_norm,
    element_div_moments,
    l2_error,
    l2_norm_field,
    l2_project,
)
from hdivct.mesh import Mesh


def small_space(p=1, level=1):
    return Space(Mesh(level), p)


def test_mass_matrix_symmetric_positive_definite():
    space = small_space(p=1, level=1)
    M = space.mass_matrix().toarray()
    assert M.shape == (36, 36)
    assert np.allclose(M, M.T, atol=1e-14)
    assert np.linalg.eigvalsh(M).min() > 0


def test_mass_quadratic_form_is_l2_norm():
    """c^T M c equals the squared L2 norm of the represented field."""
    rng = np.random.default_rng(4)
    space = small_space(p=2, level=1)
    c = rng.standard_normal(space.dofmap.N)
    M = space.mass_matrix()
    quad = c @ (M @ c)
    nrm = l2_norm_field(FemField(space, c))
    assert np.isclose(quad, nrm**2, rtol=1e-12)


def test_assembly_order_independent():
    """Assembling with a permuted element order gives the same matrix."""
    rng = np.random.default_rng(9)
    space = small_space(p=2, level=1)
    M0 = space.mass_matrix()
    perm = rng.permutation(space.mesh.ntets)
    M1 = space.mass_matrix(tet_order=perm)
    assert abs(M0 - M1).max() < 1e-13


def test_mass_solver_inverts():
    rng = np.random.default_rng(12)
    space = Space(Mesh(2), 3)
    b = rng.standard_normal(space.dofmap.N)
    x = space.mass_solver()(b)
    r = space.mass_matrix() @ x - b
    assert np.linalg.norm(r) < 1e-8 * np.linalg.norm(b)


def test_projection_is_identity_on_the_space():
    """Projecting a member of the discrete space returns it unchanged."""
    rng = np.random.default_rng(14)
    space = Space(Mesh(1), 3)
    target = FemField(space, rng.standard_normal(space.dofmap.N))
    fld = l2_project(space, target.eval_at)
    scale = np.abs(target.coeffs).max()
    assert np.abs(fld.coeffs - target.coeffs).max() < 1e-9 * scale


def test_projection_of_zero_is_zero():
    space = small_space(p=2, level=2)
    fld = l2_project(space, lambda X: np.zeros_like(X))
    assert np.abs(fld.coeffs).max() < 1e-12


def test_projection_error_magnitude():
    """Smooth-field projection error at p=3: regression on measured values."""
    from hdivct.induction import exact_B

    f = lambda X: exact_B(0.0, X)
    e1 = l2_error(l2_project(Space(Mesh(1), 3), f), f)
    e2 = l2_error(l2_project(Space(Mesh(2), 3), f), f)
    assert abs(e1 - 0.39287) < 5e-4
    assert abs(e2 - 0.03579) < 5e-4


def test_eval_at_matches_projection_target():
    space = Space(Mesh(2), 3)

    def f(X):
        x, y, z = X[..., 0], X[..., 1], X[..., 2]
        return np.stack([y * z, x + z, x * x], axis=-1)

    fld = l2_project(space, f)
    rng = np.random.default_rng(3)
    pts = rng.random((40, 3))
    assert np.allclose(fld.eval_at(pts), f(pts), atol=1e-10)


def test_constant_divergence_moments():
    """A field with div = c on one tet has one moment c * sqrt(|T|) there."""
    space = small_space(p=2, level=1)
    shapes = space.shapes
    # lowest edge-face shape on tet 0: constant reference divergence
    a0 = 0
    _, divs = shapes.eval_all(np.full((1, 3), 0.25))
    dhat = divs[0, a0]
    c = np.zeros(space.dofmap.N)
    t = 0
    c[space.dofmap.L[t, a0]] = space.dofmap.S[t, a0]
    mom = element_div_moments(FemField(space, c))
    amap = space.mesh.affine_map(t)
    dphys = dhat / amap.det
    vol = space.mesh.tet_volume
    assert np.isclose(mom[t, 0], dphys * np.sqrt(vol), rtol=1e-12)
    assert np.abs(mom[t, 1:]).max() < 1e-13


def test_moment_count_p3():
    space = Space(Mesh(1), 3)
    mom = element_div_moments(FemField.zeros(space))
    assert mom.shape == (6, 10)


def test_divergence_free_field_has_tiny_moments():
    """Projecting a solenoidal polynomial yields near-zero div everywhere."""
    space = Space(Mesh(2), 3)

    def f(X):
        x, y, z = X[..., 0], X[..., 1], X[..., 2]
        return np.stack([y * y, z, x * y], axis=-1)  # div = 0

    fld = l2_project(space, f)
    assert div_l2_norm(fld) < 1e-11


def test_global_mean_divergence_vanishes():
    """Periodic conformity: total divergence integral is zero for any field."""
    rng = np.random.default_rng(77)
    space = Space(Mesh(2), 3)
    fld = FemField(space, rng.standard_normal(space.dofmap.N))
    mom = element_div_moments(fld)
    vol = space.mesh.tet_volume
    total = np.sqrt(vol) * mom[:, 0].sum()  # sum of element integrals
    assert abs(total) < 1e-10


def test_div_l2_norm_consistent_with_quadrature():
    rng = np.random.default_rng(21)
    space = small_space(p=2, level=1)
    fld = FemField(space, rng.standard_normal(space.dofmap.N))
    rule, phi, wdet = space.phys_table(6)
    c_loc = space.gather(fld.coeffs)
    total = 0.0
    for s in range(6):
        _, dref = space.shapes.eval_all(rule.points)
        dphys = dref / space.mesh.detB[s]
        dv = c_loc[space.tets_of_type(s)] @ dphys.T  # (ntets_s, nq)
        total += np.sum(wdet * dv**2)
    assert np.isclose(np.sqrt(total), div_l2_norm(fld), rtol=1e-10)
