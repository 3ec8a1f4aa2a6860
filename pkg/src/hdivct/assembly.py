"""Global linear algebra on the periodic H(div) space.

A `Space` bundles mesh + degree + dof map and caches the per-type reference
tables (the uniform Kuhn mesh has only six element classes, so every element
matrix is one of six).  On top of it: the global mass matrix, L2 projection,
L2/divergence norms and the per-element divergence moment vectors.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .basis import ShapeSet, enumerate_shapes
from .mesh import DofMap, Mesh, build_dofmap
from .reference import eval_monomials, orthonormal_scalar_basis, quad_rule

#: Above this dof count the mass solves switch from sparse LU to CG.
_SPLU_LIMIT = int(os.environ.get("HDIVCT_SPLU_LIMIT", "40000"))


class Space:
    """Degree-p H(div) space on a periodic uniform mesh, with caches."""

    def __init__(self, mesh: Mesh, p: int, shapes: ShapeSet | None = None):
        self.mesh = mesh
        self.p = p
        self.shapes = shapes if shapes is not None else enumerate_shapes(p)
        self.dofmap: DofMap = build_dofmap(mesh, p, self.shapes)
        self.nloc = len(self.shapes)
        self._ref_tables: dict[int, tuple] = {}
        self._phys_tables: dict[int, tuple] = {}
        self._mass = None
        self._mass_solver = None
        self._moment_data = None

    # -- cached tables -----------------------------------------------------

    def ref_table(self, degree: int):
        """(rule, values (nq,nloc,3), divergences (nq,nloc)) on K3."""
        if degree not in self._ref_tables:
            rule = quad_rule(degree)
            vals, divs = self.shapes.eval_all(rule.points)
            self._ref_tables[degree] = (rule, vals, divs)
        return self._ref_tables[degree]

    def phys_table(self, degree: int):
        """Per-type Piola-mapped shape values and physical quad weights.

        Returns (rule, phi (6,nq,nloc,3), wdet (nq,)): phi[s] are physical
        shape values for type s, wdet the quadrature weights scaled by the
        (type-independent) |det B|.
        """
        if degree not in self._phys_tables:
            rule, vals, _ = self.ref_table(degree)
            m = self.mesh
            phi = np.einsum("sij,qaj->sqai", m.B, vals) / m.detB[:, None, None, None]
            wdet = rule.weights * abs(m.detB[0])
            self._phys_tables[degree] = (rule, phi, wdet)
        return self._phys_tables[degree]

    def quad_points_physical(self, degree: int, tet_type: int) -> np.ndarray:
        """Physical quadrature points for every tet of one type: (ncubes,nq,3)."""
        rule, _, _ = self.ref_table(degree)
        m = self.mesh
        loc = rule.points @ m.B[tet_type].T  # (nq,3)
        return m.cube_ijk[:, None, :] / m.n + loc[None, :, :]

    def tets_of_type(self, s: int) -> np.ndarray:
        return np.arange(self.mesh.ncubes) * 6 + s

    # -- moment (pressure-test) basis ---------------------------------------

    def moment_data(self):
        """Orthonormal P_{p-1} basis per element and div-moment matrices.

        Returns (nmom, W (nq,nmom), Dm (6,nmom,nloc), coeffs, exps) where
        Dm[s][k,a] = integral_T w_k div Phi_a dx for a type-s element, the
        w_k orthonormal in L2(T) with w_0 = 1/sqrt(|T|).
        """
        if self._moment_data is None:
            deg = 2 * self.p
            rule, _, divs = self.ref_table(deg)
            wphys = rule.weights * abs(self.mesh.detB[0])
            coeffs, exps = orthonormal_scalar_basis(self.p - 1, rule.points, wphys)
            W = eval_monomials(exps, rule.points) @ coeffs
            base = np.einsum("q,qk,qa->ka", rule.weights, W, divs)
            Dm = np.sign(self.mesh.detB)[:, None, None] * base[None]
            self._moment_data = (W.shape[1], W, Dm, coeffs, exps)
        return self._moment_data

    @property
    def nmoments(self) -> int:
        return self.moment_data()[0]

    # -- gather / scatter ---------------------------------------------------

    def gather(self, coeffs: np.ndarray) -> np.ndarray:
        """Signed local coefficients, shape (ntets, nloc)."""
        dm = self.dofmap
        return dm.S * coeffs[dm.L]

    def scatter_add(self, local: np.ndarray) -> np.ndarray:
        """Sum signed local contributions into a global vector."""
        dm = self.dofmap
        out = np.zeros(dm.N)
        np.add.at(out, dm.L.ravel(), (dm.S * local).ravel())
        return out

    # -- mass matrix and solves ---------------------------------------------

    def local_mass(self) -> np.ndarray:
        """The six element mass matrices (6, nloc, nloc)."""
        rule, vals, _ = self.ref_table(2 * self.p)
        m = self.mesh
        out = np.empty((6, self.nloc, self.nloc))
        for s in range(6):
            C = m.B[s].T @ m.B[s]
            out[s] = np.einsum(
                "q,qai,ij,qbj->ab", rule.weights, vals, C, vals
            ) / abs(m.detB[s])
        return out

    def mass_matrix(self, tet_order=None) -> sp.csr_matrix:
        """Global SPD mass matrix M[a,b] = sum_T (Phi_a, Phi_b)_T."""
        if self._mass is not None and tet_order is None:
            return self._mass
        Mloc = self.local_mass()
        dm = self.dofmap
        tets = np.arange(self.mesh.ntets) if tet_order is None else np.asarray(tet_order)
        types = tets % 6
        rows = np.repeat(dm.L[tets], self.nloc, axis=1).ravel()
        cols = np.tile(dm.L[tets], (1, self.nloc)).ravel()
        sgn = dm.S[tets]
        vals = (
            sgn[:, :, None] * sgn[:, None, :] * Mloc[types]
        ).ravel()
        M = sp.coo_matrix((vals, (rows, cols)), shape=(dm.N, dm.N)).tocsr()
        if tet_order is None:
            self._mass = M
        return M

    def mass_solver(self):
        """Callable solving M x = b to ~1e-12 relative residual."""
        if self._mass_solver is None:
            M = self.mass_matrix()
            if self.dofmap.N <= _SPLU_LIMIT:
                lu = spla.splu(M.tocsc())
                self._mass_solver = lambda b, x0=None: lu.solve(b)
            else:
                P = spla.LinearOperator(M.shape, matvec=self._block_jacobi())
                maxiter = 10 * self.dofmap.N

                def solve(b, x0=None, rtol=1e-12):
                    x, info = _cg(M, b, x0=x0, rtol=rtol, M=P, maxiter=maxiter)
                    if info != 0:
                        raise RuntimeError(f"mass CG failed to converge (info={info})")
                    return x

                self._mass_solver = solve
        return self._mass_solver

    def _block_jacobi(self):
        """Inverse of the block diagonal of M: one block per face, one per tet.

        The blocks capture the strong within-face and within-element coupling
        of the hierarchical shapes, which plain diagonal scaling misses.
        """
        M = self.mass_matrix().tocoo()
        dm = self.dofmap
        ndf, ni = dm.ndof_face, dm.n_interior
        nfd = dm.n_face_dofs
        nfaces = nfd // ndf
        Fb = np.zeros((nfaces, ndf, ndf))
        r, c, v = M.row, M.col, M.data
        m = (r < nfd) & (c < nfd) & (r // ndf == c // ndf)
        Fb[r[m] // ndf, r[m] % ndf, c[m] % ndf] = v[m]
        Fbi = np.linalg.inv(Fb)
        if ni > 0:
            Ib = np.zeros((self.mesh.ntets, ni, ni))
            m = (r >= nfd) & (c >= nfd) & ((r - nfd) // ni == (c - nfd) // ni)
            Ib[(r[m] - nfd) // ni, (r[m] - nfd) % ni, (c[m] - nfd) % ni] = v[m]
            Ibi = np.linalg.inv(Ib)

        def apply(x):
            out = np.empty_like(x)
            out[:nfd] = np.einsum(
                "fij,fj->fi", Fbi, x[:nfd].reshape(nfaces, ndf)
            ).ravel()
            if ni > 0:
                out[nfd:] = np.einsum(
                    "tij,tj->ti", Ibi, x[nfd:].reshape(self.mesh.ntets, ni)
                ).ravel()
            return out

        return apply


def _cg(A, b, x0=None, rtol=1e-12, M=None, maxiter=None):
    try:
        return spla.cg(A, b, x0=x0, rtol=rtol, M=M, maxiter=maxiter)
    except TypeError:  # older scipy spells it tol
        return spla.cg(A, b, x0=x0, tol=rtol, M=M, maxiter=maxiter)


@dataclass
class FemField:
    """Coefficient vector over a Space's global dof numbering."""

    space: Space
    coeffs: np.ndarray

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=float)
        if self.coeffs.shape != (self.space.dofmap.N,):
            raise ValueError("coefficient length does not match dof count")

    def copy(self) -> "FemField":
        return FemField(self.space, self.coeffs.copy())

    @classmethod
    def zeros(cls, space: Space) -> "FemField":
        return cls(space, np.zeros(space.dofmap.N))

    def eval_at(self, points) -> np.ndarray:
        """Field values at arbitrary physical points (periodic)."""
        m = self.space.mesh
        tets, ref = m.locate(points)
        vals, _ = self.space.shapes.eval_all(ref)  # (N, nloc, 3)
        # NOTE: eval_all broadcasts over points; each point has its own ref
        c_loc = self.space.gather(self.coeffs)[tets]  # (N, nloc)
        s = tets % 6
        raw = np.einsum("nai,na->ni", vals, c_loc)
        out = np.einsum("nij,nj->ni", m.B[s], raw) / m.detB[s][:, None]
        return out


def assemble_rhs(space: Space, f, degree: int) -> np.ndarray:
    """Load vector rhs_a = integral_Omega f . Phi_a dx.

    `f` maps an (N,3) array of physical points to an (N,3) array of values.
    """
    rule, phi, wdet = space.phys_table(degree)
    local = np.empty((space.mesh.ntets, space.nloc))
    for s in range(6):
        X = space.quad_points_physical(degree, s)
        fv = f(X.reshape(-1, 3)).reshape(X.shape)
        local[space.tets_of_type(s)] = np.einsum(
            "q,qai,cqi->ca", wdet, phi[s], fv
        )
    return space.scatter_add(local)


def l2_project(space: Space, f, degree: int | None = None) -> FemField:
    """L2 projection of f onto the space (mass solve to 1e-12)."""
    if degree is None:
        degree = 2 * space.p + 6
    rhs = assemble_rhs(space, f, degree)
    return FemField(space, space.mass_solver()(rhs))


def l2_error(field: FemField, g, degree: int | None = None) -> float:
    """||field - g||_L2(Omega) by per-element quadrature."""
    space = field.space
    if degree is None:
        degree = 2 * space.p + 6
    rule, phi, wdet = space.phys_table(degree)
    c_loc = space.gather(field.coeffs)
    acc = 0.0
    for s in range(6):
        X = space.quad_points_physical(degree, s)
        gv = g(X.reshape(-1, 3)).reshape(X.shape)
        bh = np.einsum("qai,ca->cqi", phi[s], c_loc[space.tets_of_type(s)])
        diff = bh - gv
        acc += np.einsum("q,cqi,cqi->", wdet, diff, diff)
    return float(np.sqrt(acc))


def l2_norm_field(field: FemField) -> float:
    M = field.space.mass_matrix()
    return float(np.sqrt(field.coeffs @ (M @ field.coeffs)))


def element_div_moments(field: FemField) -> np.ndarray:
    """Per-element coefficients of div B in the orthonormal P_{p-1} basis.

    Shape (ntets, nmom); the first column times sqrt(|T|) is the element
    mean integral of the divergence.
    """
    space = field.space
    _, _, Dm, _, _ = space.moment_data()
    c_loc = space.gather(field.coeffs)
    types = np.arange(space.mesh.ntets) % 6
    return np.einsum("tka,ta->tk", Dm[types], c_loc)


def div_l2_norm(field: FemField) -> float:
    """||div field||_L2(Omega): root sum of squared orthonormal moments."""
    mom = element_div_moments(field)
    return float(np.sqrt(np.sum(mom * mom)))
