"""Semi-Lagrangian stepping: exact solution, single steps, convergence."""

import numpy as np
import pytest

from hdivct.assembly import Space, l2_error, l2_project
from hdivct.induction import (
    Advector,
    ExperimentRow,
    InductionProblem,
    U_DEFAULT,
    exact_B,
    exact_div_B,
    fill_orders,
    run_experiment,
)
from hdivct.mesh import Mesh


def test_exact_solution_is_periodic():
    rng = np.random.default_rng(0)
    X = rng.random((30, 3))
    for shift in ([1, 0, 0], [0, 1, 0], [0, 0, 1], [2, -1, 3]):
        assert np.allclose(exact_B(0.3, X + shift), exact_B(0.3, X), atol=1e-12)


def test_exact_solution_advects_at_unit_diagonal_velocity():
    rng = np.random.default_rng(1)
    X = rng.random((50, 3))
    U = np.asarray(U_DEFAULT)
    for t in (0.1, 0.37, 2.0):
        assert np.allclose(exact_B(t, X), exact_B(0.0, X - U * t), atol=1e-12)


def test_exact_divergence_is_zero():
    """Finite-difference divergence vanishes at random points and times."""
    rng = np.random.default_rng(2)
    h = 1e-6
    for _ in range(10):
        t = rng.random() * 2
        X = rng.random((10, 3))
        div = np.zeros(10)
        for k in range(3):
            e = np.zeros(3)
            e[k] = h
            div += (exact_B(t, X + e)[:, k] - exact_B(t, X - e)[:, k]) / (2 * h)
        assert np.abs(div).max() < 1e-4
        assert np.abs(exact_div_B(t, X)).max() == 0.0


def test_zero_dt_step_is_identity():
    space = Space(Mesh(1), 3)
    fld = l2_project(space, lambda X: exact_B(0.0, X))
    out = Advector(space, dt=0.0).step(fld)
    scale = np.abs(fld.coeffs).max()
    assert np.abs(out.coeffs - fld.coeffs).max() < 1e-8 * scale


def test_lattice_shift_step_is_exact():
    """When U*dt lands on the cube lattice the step permutes elements."""
    space = Space(Mesh(2), 3)
    fld = l2_project(space, lambda X: exact_B(0.0, X))
    out = Advector(space, dt=0.5).step(fld)
    ref = l2_project(space, lambda X: exact_B(0.0, X - np.array([0.5, 0.5, 0.0])))
    scale = np.abs(fld.coeffs).max()
    assert np.abs(out.coeffs - ref.coeffs).max() < 1e-8 * scale


def test_single_step_error_near_projection_error():
    space = Space(Mesh(2), 3)
    fld = l2_project(space, lambda X: exact_B(0.0, X))
    dt = 0.005
    out = Advector(space, dt=dt).step(fld)
    err = l2_error(out, lambda X: exact_B(dt, X))
    proj = l2_error(fld, lambda X: exact_B(0.0, X))
    assert err < 2.0 * proj


def test_step_wraps_periodically():
    """A foot outside the unit cube is fetched from the periodic image."""
    space = Space(Mesh(1), 2)
    fld = l2_project(space, lambda X: exact_B(0.0, X), degree=10)
    dt = 0.25
    out = Advector(space, dt=dt, degree=12).step(fld)
    pts = np.array([[0.05, 0.1, 0.5], [0.9, 0.02, 0.3]])  # feet wrap negative
    vals = out.eval_at(pts)
    assert np.all(np.isfinite(vals))


def test_problem_validation_and_t_end():
    with pytest.raises(ValueError):
        InductionProblem(level=1, cadence="sometimes")
    prob = InductionProblem(level=1, dt=0.01, steps=50)
    assert prob.t_end == pytest.approx(0.5)


def test_fill_orders():
    rows = [
        ExperimentRow(2, 0.4, np.nan, 0.8, np.nan, 10, "none"),
        ExperimentRow(3, 0.1, np.nan, 0.2, np.nan, 80, "none"),
    ]
    fill_orders(rows)
    assert rows[1].order == pytest.approx(2.0)
    assert rows[1].div_order == pytest.approx(2.0)
    assert np.isnan(rows[0].order)


def test_short_runs_converge_with_level():
    """A few steps at successive levels shrink the error markedly."""
    errs = []
    for lvl in (1, 2):
        prob = InductionProblem(level=lvl, steps=5, dt=0.005)
        row, _, _ = run_experiment(prob)
        errs.append(row.l2_error)
    assert errs[1] < 0.25 * errs[0]


def test_run_experiment_reports_dimension_and_mode():
    prob = InductionProblem(level=1, steps=2, mode="local+global")
    row, report, fld = run_experiment(prob)
    assert row.dim == 240
    assert row.mode == "local+global"
    assert report.div_after < 1e-8
    assert row.div_norm == pytest.approx(report.div_after)
