"""Periodic uniform tetrahedral meshes of the unit cube.

Level L has n = 2^(L-1) cubes per side; every cube is split into the six
Kuhn tetrahedra sharing the main diagonal, so there are only six affine map
classes (up to translation).  Tets are numbered tet = cube*6 + type, cubes
in (ix*n + iy)*n + iz order, types in itertools.permutations((0,1,2)) order.

Tet corners are kept in lexicographic order of their lattice positions; for
the Kuhn split this is also construction order, and it makes the local
ordering of every face's vertices agree with the face's canonical
(position-sorted) ordering on both incident tets.  Orientation is NOT
fixed up by vertex swaps: half the types have a negative-determinant
reference map, and the signed determinant is kept in the Piola transform.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .basis import (
    EDGE_FACE,
    FACE_BUBBLE,
    INTERIOR_FAMILIES,
    ShapeDescriptor,
    ShapeSet,
    face_edges,
    interior_dim,
)
from .reference import FACES

#: The six Kuhn tet types as coordinate-axis permutations.
PERMS = list(itertools.permutations((0, 1, 2)))


def _corner_offsets(perm) -> np.ndarray:
    """Lattice corner offsets (4,3) of one Kuhn tet within the unit cube."""
    off = np.zeros((4, 3), dtype=int)
    off[1] = off[0]
    off[1, perm[0]] = 1
    off[2] = off[1].copy()
    off[2, perm[1]] = 1
    off[3] = 1
    return off


CORNER_OFFSETS = np.array([_corner_offsets(p) for p in PERMS])  # (6,4,3)

#: Lookup from the descending ranking of fractional coordinates to tet type.
_RANK_TO_TYPE = np.full(27, -1, dtype=int)
for _i, _p in enumerate(PERMS):
    _RANK_TO_TYPE[_p[0] * 9 + _p[1] * 3 + _p[2]] = _i


@dataclass(frozen=True)
class AffineMap:
    """x = B xhat + b; det may be negative (orientation kept signed)."""

    B: np.ndarray
    b: np.ndarray
    det: float
    Binv: np.ndarray


def piola(amap: AffineMap, values, divs):
    """Contravariant Piola transform of reference values/divergences."""
    vals = np.asarray(values, dtype=float)
    return (vals @ amap.B.T) / amap.det, np.asarray(divs, dtype=float) / amap.det


class Mesh:
    """Periodic uniform Kuhn mesh of [0,1]^3 at refinement `level` >= 1."""

    def __init__(self, level: int):
        if level < 1:
            raise ValueError("level must be >= 1")
        self.level = level
        self.n = 2 ** (level - 1)
        n = self.n
        self.ncubes = n**3
        self.ntets = 6 * self.ncubes
        self.tet_volume = 1.0 / self.ntets

        # per-type affine data (cube units scaled by 1/n)
        Bhat = np.empty((6, 3, 3))
        for s in range(6):
            off = CORNER_OFFSETS[s]
            Bhat[s] = (off[1:] - off[0]).T.astype(float)
        self.B = Bhat / n
        self.detB = np.array([np.linalg.det(b) for b in self.B])
        self.Binv = np.array([np.linalg.inv(b) for b in self.B])

        cubes = np.arange(self.ncubes)
        self.cube_ijk = np.column_stack(
            [cubes // (n * n), (cubes // n) % n, cubes % n]
        )

        self._faces = None  # built lazily

    # -- basic indexing ----------------------------------------------------

    def tet_type(self, t):
        return np.asarray(t) % 6

    def tet_cube(self, t):
        return np.asarray(t) // 6

    def cube_origin(self, cube):
        return self.cube_ijk[cube] / self.n

    def affine_map(self, t: int) -> AffineMap:
        s = int(t) % 6
        b = self.cube_ijk[int(t) // 6] / self.n
        return AffineMap(self.B[s], b, self.detB[s], self.Binv[s])

    def tet_corners(self, t: int) -> np.ndarray:
        """Physical corner positions (4,3) in lexicographic local order."""
        s = int(t) % 6
        return (self.cube_ijk[int(t) // 6] + CORNER_OFFSETS[s]) / self.n

    def tet_vertex_ids(self) -> np.ndarray:
        """Global (periodic lattice) vertex ids per tet, shape (ntets, 4)."""
        n = self.n
        lat = (
            self.cube_ijk[:, None, None, :] + CORNER_OFFSETS[None, :, :, :]
        ) % n  # (ncubes, 6, 4, 3)
        ids = (lat[..., 0] * n + lat[..., 1]) * n + lat[..., 2]
        return ids.reshape(self.ntets, 4)

    # -- faces -------------------------------------------------------------

    @property
    def faces(self):
        """List of face incidences: faces[f] = [(tet, local_face), (tet, local_face)]."""
        if self._faces is None:
            self._build_faces()
        return self._faces

    @property
    def nfaces(self) -> int:
        return len(self.faces)

    def _face_key(self, corners_lat: np.ndarray, loc) -> bytes:
        """Canonical key of a local face from unwrapped lattice corner coords.

        A coordinate shared at value n by all three vertices is a periodic
        boundary plane; shifting it to 0 identifies the face with its image.
        The shift is a rigid translation of the whole face, so it preserves
        the lexicographic vertex order.
        """
        tri = corners_lat[list(loc)].copy()
        for c in range(3):
            if np.all(tri[:, c] == self.n):
                tri[:, c] -= self.n
        return tri.astype(np.int64).tobytes()

    def _build_faces(self):
        lookup: dict[bytes, int] = {}
        faces: list[list[tuple[int, int]]] = []
        for t in range(self.ntets):
            s = t % 6
            lat = self.cube_ijk[t // 6] + CORNER_OFFSETS[s]
            for j1 in range(4):
                key = self._face_key(lat, FACES[j1])
                f = lookup.get(key)
                if f is None:
                    f = len(faces)
                    lookup[key] = f
                    faces.append([])
                faces[f].append((t, j1))
        for f, inc in enumerate(faces):
            if len(inc) != 2:
                raise RuntimeError(f"face {f} has {len(inc)} incident tets")
        self._faces = faces

    # -- point location ----------------------------------------------------

    def locate(self, points):
        """Owning tet and reference coordinates of points on the torus.

        Returns (tets (N,), ref (N,3)).  Total: coordinates are wrapped into
        [0,1) first.  Ties on cut planes resolve by preferring lower axes.
        """
        x = np.atleast_2d(np.asarray(points, dtype=float))
        w = x - np.floor(x)
        scaled = w * self.n
        ci = np.minimum(np.floor(scaled).astype(int), self.n - 1)
        frac = scaled - ci
        # descending sort of frac; stable so equal coords keep axis order
        order = np.argsort(-frac, axis=1, kind="stable")
        types = _RANK_TO_TYPE[order[:, 0] * 9 + order[:, 1] * 3 + order[:, 2]]
        cube = (ci[:, 0] * self.n + ci[:, 1]) * self.n + ci[:, 2]
        tets = cube * 6 + types
        ref = np.einsum("nij,nj->ni", self.Binv[types] / self.n, frac)
        return tets, ref

    def map_to_physical(self, tets, ref):
        """Inverse of locate: physical coordinates of reference points."""
        tets = np.asarray(tets)
        s = tets % 6
        return self.cube_ijk[tets // 6] / self.n + np.einsum(
            "nij,nj->ni", self.B[s], np.atleast_2d(ref)
        )

    def stats_text(self) -> str:
        return (
            f"level={self.level} n={self.n} tets={self.ntets} "
            f"faces={self.nfaces}"
        )


# ---------------------------------------------------------------------------
# degrees of freedom
# ---------------------------------------------------------------------------

def face_dof_count(p: int) -> int:
    """Shared dofs per face: 3p edge-based plus the face bubbles."""
    return 3 * p + max(0, (p - 2) * (p - 1) // 2)


@dataclass
class DofMap:
    """Global numbering of the degree-p H(div) space on a periodic mesh.

    Face dofs come first (face-major, canonical within-face order), interior
    dofs after (tet-major).  L[t, a] is the global dof of local shape a on
    tet t and S[t, a] its orientation sign.
    """

    p: int
    mesh: Mesh
    N: int
    ndof_face: int
    n_interior: int
    L: np.ndarray  # (ntets, nloc) int
    S: np.ndarray  # (ntets, nloc) float, +-1
    face_sign: np.ndarray  # (ntets, 4) per-incidence trace sign

    @property
    def n_face_dofs(self) -> int:
        return self.mesh.nfaces * self.ndof_face

    def interior_dofs(self) -> np.ndarray:
        return np.arange(self.n_face_dofs, self.N)

    def p1_dofs(self) -> np.ndarray:
        """Global dofs of the lowest (degree-1) edge-based face functions."""
        p = self.p
        slots = np.array([0, p, 2 * p])
        return (
            np.arange(self.mesh.nfaces)[:, None] * self.ndof_face + slots[None, :]
        ).ravel()


def _local_slot_map(shapes: ShapeSet) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per local shape: kind (0=face,1=interior), face j1 or -1, slot/rank."""
    p = shapes.p
    kind = np.empty(len(shapes), dtype=int)
    facej = np.full(len(shapes), -1, dtype=int)
    slot = np.empty(len(shapes), dtype=int)
    bub_rank: dict[int, int] = {}
    irank = 0
    for a, d in enumerate(shapes.shapes):
        if d.family == EDGE_FACE:
            kind[a] = 0
            facej[a] = d.face
            epos = face_edges(d.face).index(d.edge)
            slot[a] = epos * p + d.idx[0]
        elif d.family == FACE_BUBBLE:
            kind[a] = 0
            facej[a] = d.face
            r = bub_rank.get(d.face, 0)
            bub_rank[d.face] = r + 1
            slot[a] = 3 * p + r
        else:
            assert d.family in INTERIOR_FAMILIES
            kind[a] = 1
            slot[a] = irank
            irank += 1
    return kind, facej, slot


def _face_sign_table(mesh: Mesh, shapes: ShapeSet) -> np.ndarray:
    """Trace orientation sign per (tet type, local face).

    The raw edge-based face functions have affinely invariant normal fluxes:
    the physical normal trace of the first one on face (q0,q1,q2) equals
    +- mu_0 / (2 area).  The sign is measured once per type/face pair by
    evaluating at a generic face point; the invariance (ratio exactly +-1)
    is asserted.
    """
    mu = np.array([0.31, 0.33, 0.36])
    table = np.empty((6, 4))
    for s in range(6):
        corners = CORNER_OFFSETS[s] / mesh.n + 0.0
        amap = AffineMap(mesh.B[s], np.zeros(3), mesh.detB[s], mesh.Binv[s])
        for j1 in range(4):
            loc = FACES[j1]
            q = corners[list(loc)]
            cr = np.cross(q[1] - q[0], q[2] - q[0])
            area = 0.5 * np.linalg.norm(cr)
            n_c = cr / np.linalg.norm(cr)
            xstar = mu @ q
            xhat = amap.Binv @ (xstar - corners[0])
            desc = ShapeDescriptor(
                EDGE_FACE, face=j1, edge=face_edges(j1)[0], idx=(0,)
            )
            phihat = shapes.eval_shape(desc, xhat)
            phi = (amap.B @ phihat) / amap.det
            ratio = float(phi @ n_c) / (mu[0] / (2.0 * area))
            if abs(abs(ratio) - 1.0) > 1e-8:
                raise RuntimeError(
                    f"trace invariance violated for type {s} face {j1}: {ratio}"
                )
            table[s, j1] = np.sign(ratio)
    return table


def build_dofmap(mesh: Mesh, p: int, shapes: ShapeSet | None = None) -> DofMap:
    """Sign-consistent global dof numbering for the degree-p space.

    `shapes` must be the raw (unit-scale) shape set; the raw formulas have
    matching traces across faces so the relative orientation is a pure sign.
    """
    if p < 1:
        raise ValueError("p must be >= 1")
    if shapes is None:
        from .basis import enumerate_shapes

        shapes = enumerate_shapes(p)
    if shapes.p != p or not np.allclose(shapes.scales, 1.0):
        raise ValueError("build_dofmap requires the raw degree-p shape set")

    ndf = face_dof_count(p)
    n_i = interior_dim(p)
    nloc = len(shapes)
    kind, facej, slot = _local_slot_map(shapes)
    sign_table = _face_sign_table(mesh, shapes)

    faces = mesh.faces
    nface = len(faces)
    N = nface * ndf + mesh.ntets * n_i

    # face id per (tet, local face)
    face_of = np.empty((mesh.ntets, 4), dtype=int)
    for f, inc in enumerate(faces):
        for t, j1 in inc:
            face_of[t, j1] = f

    types = np.arange(mesh.ntets) % 6
    face_sign = sign_table[types]  # (ntets, 4)

    L = np.empty((mesh.ntets, nloc), dtype=np.int64)
    S = np.ones((mesh.ntets, nloc))
    tet_ids = np.arange(mesh.ntets)
    for a in range(nloc):
        if kind[a] == 0:
            j1 = facej[a]
            L[:, a] = face_of[:, j1] * ndf + slot[a]
            S[:, a] = face_sign[:, j1]
        else:
            L[:, a] = nface * ndf + tet_ids * n_i + slot[a]
    return DofMap(p, mesh, N, ndf, n_i, L, S, face_sign)
