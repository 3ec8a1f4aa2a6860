"""Semi-Lagrangian time stepping for magnetic transport at constant velocity.

With a constant, divergence-free velocity the induction equation transports
the field rigidly along straight characteristics, so a step is the L2
projection of the exactly-advected discrete field.  On the uniform periodic
mesh every characteristic foot pattern is translation invariant: each
(target type, quadrature point) pair maps to a fixed source type, cube shift
and reference point, which collapses a step into a handful of dense
element-to-element transfer matrices applied over all cubes at once.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field as dc_field

import numpy as np

from .assembly import FemField, Space, div_l2_norm, l2_error, l2_project
from .divfree import CorrectionReport, correct
from .mesh import Mesh

#: Transport velocity of the benchmark problem.
U_DEFAULT = (1.0, 1.0, 0.0)


def exact_B(t: float, X) -> np.ndarray:
    """Closed-form solution: a traveling wave advected at velocity (1,1,0).

    Divergence free for all t; periodic with period 1 in each coordinate.
    """
    X = np.asarray(X, dtype=float)
    x, y, z = X[..., 0], X[..., 1], X[..., 2]
    s = np.sin(2 * np.pi * (x + y - z - 2 * t))
    return np.stack(
        [s + np.sin(2 * np.pi * (y - t)), np.sin(2 * np.pi * (x - t)), s],
        axis=-1,
    )


def exact_div_B(t: float, X) -> np.ndarray:
    """Analytic divergence of exact_B (identically zero; kept for testing)."""
    X = np.asarray(X, dtype=float)
    x, y, z = X[..., 0], X[..., 1], X[..., 2]
    c = 2 * np.pi * np.cos(2 * np.pi * (x + y - z - 2 * t))
    return c - c


@dataclass
class InductionProblem:
    """Benchmark configuration: advect exact_B and correct the divergence."""

    level: int
    p: int = 3
    dt: float = 0.005
    steps: int = 100
    U: tuple = U_DEFAULT
    mode: str = "none"
    cadence: str = "final"
    tol: float = 5e-6

    @property
    def t_end(self) -> float:
        return self.steps * self.dt

    def __post_init__(self):
        if self.cadence not in ("final", "every-step"):
            raise ValueError(f"unknown cadence {self.cadence!r}")


@dataclass
class ExperimentRow:
    """One line of a convergence table."""

    level: int
    l2_error: float
    order: float
    div_norm: float
    div_order: float
    dim: int
    mode: str
    wall_time: float = 0.0


class Advector:
    """One semi-Lagrangian step operator for fixed velocity and dt."""

    def __init__(self, space: Space, U=U_DEFAULT, dt: float = 0.005,
                 degree: int | None = None):
        self.space = space
        self.U = np.asarray(U, dtype=float)
        self.dt = float(dt)
        if degree is None:
            degree = 2 * space.p + 24
        self.degree = degree
        self._build_patterns()

    def _build_patterns(self):
        space, m = self.space, self.space.mesh
        rule, phi, wdet = space.phys_table(self.degree)
        shift = self.U * self.dt
        ijk = m.cube_ijk
        n = m.n
        groups = []
        for s in range(6):
            xq = rule.points @ m.B[s].T
            foot = xq - shift[None, :]
            tets, ref = m.locate(foot)
            stypes = tets % 6
            scubes = tets // 6
            keys = scubes * 6 + stypes
            for key in np.unique(keys):
                qs = np.flatnonzero(keys == key)
                sp_ = int(key % 6)
                vals_src, _ = space.shapes.eval_all(ref[qs])
                psrc = np.einsum("ij,qbj->qbi", m.B[sp_], vals_src) / m.detB[sp_]
                T = np.einsum("q,qai,qbi->ab", wdet[qs], phi[s][qs], psrc)
                d = ijk[key // 6]
                src_ijk = (ijk + d[None, :]) % n
                src_cube = (src_ijk[:, 0] * n + src_ijk[:, 1]) * n + src_ijk[:, 2]
                groups.append((s, sp_, src_cube, T))
        self.groups = groups

    def step(self, fld: FemField) -> FemField:
        """Advance one step: project the field advected by U*dt."""
        space = self.space
        c_loc = space.gather(fld.coeffs)
        local = np.zeros_like(c_loc)
        for s, sp_, src_cube, T in self.groups:
            local[space.tets_of_type(s)] += c_loc[src_cube * 6 + sp_] @ T.T
        rhs = space.scatter_add(local)
        return FemField(space, space.mass_solver()(rhs, x0=fld.coeffs))


def step_semi_lagrangian(fld: FemField, dt: float, U=U_DEFAULT) -> FemField:
    """Single-shot step (builds the pattern tables; use Advector in loops)."""
    return Advector(fld.space, U=U, dt=dt).step(fld)


def run_experiment(problem: InductionProblem, space: Space | None = None,
                   ) -> tuple[ExperimentRow, CorrectionReport, FemField]:
    """Project the initial data, march to t_end, correct, measure.

    Returns the table row (orders unset, see run_convergence), the correction
    report and the final corrected field.
    """
    t0 = time.perf_counter()
    if space is None:
        space = Space(Mesh(problem.level), problem.p)
    fld = l2_project(space, lambda X: exact_B(0.0, X))
    adv = Advector(space, U=problem.U, dt=problem.dt)
    for _ in range(problem.steps):
        fld = adv.step(fld)
        if problem.cadence == "every-step" and problem.mode != "none":
            fld, _ = correct(fld, problem.mode, tol=problem.tol)
    exact_end = lambda X: exact_B(problem.t_end, X)
    fld, report = correct(fld, problem.mode, tol=problem.tol, exact=exact_end)
    err = report.l2_after
    row = ExperimentRow(
        level=problem.level,
        l2_error=err,
        order=np.nan,
        div_norm=report.div_after,
        div_order=np.nan,
        dim=space.dofmap.N,
        mode=problem.mode,
        wall_time=time.perf_counter() - t0,
    )
    return row, report, fld


def fill_orders(rows: list[ExperimentRow]) -> list[ExperimentRow]:
    """Set convergence orders between consecutive levels (h halves per level)."""
    for prev, cur in zip(rows, rows[1:]):
        if prev.l2_error > 0 and cur.l2_error > 0:
            cur.order = float(np.log2(prev.l2_error / cur.l2_error))
        if prev.div_norm > 0 and cur.div_norm > 0:
            cur.div_order = float(np.log2(prev.div_norm / cur.div_norm))
    return rows


def run_convergence(levels, p=3, mode="none", dt=0.005, steps=100,
                    tol=5e-6, cadence="final") -> list[ExperimentRow]:
    """Run the benchmark over a list of levels and tabulate orders."""
    rows = []
    for lvl in levels:
        prob = InductionProblem(level=lvl, p=p, dt=dt, steps=steps,
                                mode=mode, cadence=cadence, tol=tol)
        row, _, _ = run_experiment(prob)
        rows.append(row)
    return fill_orders(rows)
