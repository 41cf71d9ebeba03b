"""Adaptive-loop contracts, rate fitting, and the goal-error bound."""
import numpy as np
import pytest

from goafem.driver import (
    ConvergenceRecord,
    DriverError,
    RunConfig,
    fit_rate,
    read_records,
    run_goafem,
    verify_goal_bound,
    write_records,
)
from goafem.fespace import FeSpace, interpolate
from goafem.mesh import is_refinement_of, uniform_refine, unit_square
from goafem.problems import (
    LinearGradientGoalProblem,
    problem_manufactured,
)


def _records(vals):
    records = []
    cum = 0
    for level, (dofs, product) in enumerate(vals):
        cum += dofs
        records.append(
            ConvergenceRecord(
                level=level, n_elements=2 * dofs + 2, dofs=dofs, cumulative_dofs=cum,
                eta=np.sqrt(product), zeta=np.sqrt(product), estimator=product,
                goal_value=0.0, n_marked=1,
            )
        )
    return records


def test_single_level_run_has_one_record():
    config = RunConfig(problem="manufactured", max_levels=0)
    records = run_goafem(config)
    assert len(records) == 1
    record = records[0]
    assert record.estimator > 0.0
    problem = problem_manufactured()
    # C measured on that single level is finite.
    assert abs(problem.exact_goal - record.goal_value) / record.estimator < np.inf


def test_run_contracts_ms_linear():
    config = RunConfig(problem="ms-linear", degree=1, theta=0.5,
                       strategy="doerfler-smaller", max_levels=10,
                       max_cumulative_dofs=10**9)
    records, traces = run_goafem(config, trace=True)
    assert len(records) == 11
    cums = [r.cumulative_dofs for r in records]
    assert all(b > a for a, b in zip(cums[:-1], cums[1:]))
    assert all(r.estimator > 0.0 for r in records)
    # Loop order: REFINE at level l consumes exactly the MARK output of level l.
    for a, b, rec in zip(traces[:-1], traces[1:], records[:-1]):
        assert rec.n_marked == len(a.marked)
        refmap = is_refinement_of(b.space.mesh, a.space.mesh)
        assert not np.isin(a.marked.indices, refmap.kept_coarse).any()
    # Monotone cost whenever something was marked.
    for a, b in zip(records[:-1], records[1:]):
        if a.n_marked > 0:
            assert b.dofs > a.dofs


def test_exact_data_terminates_at_level_zero():
    # A gradient load that is itself a discrete gradient makes u_H exact on
    # the initial mesh: all indicators vanish and the loop stops (the final
    # record is still emitted).
    mesh = uniform_refine(unit_square(), 3)
    space = FeSpace(mesh, 1)
    u0 = interpolate(space, lambda x: x[:, 0] * (1 - x[:, 0]) * x[:, 1] * (1 - x[:, 1]))
    coeff = u0.coefficients.copy()
    coeff[space.dirichlet_mask] = 0.0
    from goafem.fespace import DiscreteFunction, eval_gradients

    u0 = DiscreteFunction(space, coeff)
    grads = eval_gradients(u0, 0)[:, 0, :]  # P1 gradients are constant

    def field(x):
        # Piecewise-constant field equal to grad(u0) elementwise; evaluated
        # at interior sample points only, so centroid lookup is safe.
        centroids = mesh.centroids()
        idx = np.argmin(
            np.linalg.norm(x[:, None, :] - centroids[None, :, :], axis=2), axis=1
        )
        return grads[idx]

    problem = LinearGradientGoalProblem("exact-data", mesh, field, field)
    config = RunConfig(problem="ms-linear", max_levels=50, estimator_floor=1e-12)
    records = run_goafem(config, problem=problem)
    assert len(records) == 1
    assert records[0].estimator <= 1e-12
    assert records[0].n_marked == 0


def test_records_csv_roundtrip(tmp_path):
    config = RunConfig(problem="manufactured", max_levels=4)
    path = tmp_path / "run.csv"
    records = run_goafem(config, csv_path=path)
    loaded = read_records(path)
    assert len(loaded) == len(records)
    for a, b in zip(records, loaded):
        assert a.csv_row() == b.csv_row()
    write_records(records, tmp_path / "again.csv")
    assert (tmp_path / "again.csv").read_text() == path.read_text()


# ---------------------------------------------------------------------------
# Rate fitting.
# ---------------------------------------------------------------------------

def test_fit_rate_exact_power_law():
    records = _records([(2**k, float(2**k + 10) ** -2) for k in range(10)])
    for r in records:
        object.__setattr__(r, "estimator", float(r.cumulative_dofs) ** -2)
    assert fit_rate(records, 0.5) == pytest.approx(-2.0, abs=1e-10)


def test_fit_rate_with_noise():
    rng = np.random.default_rng(12)
    records = _records([(2**k, 1.0) for k in range(20)])
    for r in records:
        noisy = float(r.cumulative_dofs) ** -2 * (1.0 + 0.01 * rng.standard_normal())
        object.__setattr__(r, "estimator", noisy)
    assert fit_rate(records, 1.0) == pytest.approx(-2.0, abs=0.05)


def test_fit_rate_constant_products():
    records = _records([(2**k, 1.0) for k in range(8)])
    assert fit_rate(records, 0.5) == pytest.approx(0.0, abs=1e-12)


def test_fit_rate_errors():
    records = _records([(2**k, 1.0) for k in range(3)])
    with pytest.raises(DriverError):
        fit_rate(records, 0.5)  # fewer than four records
    records = _records([(8, 1.0) for _ in range(6)])
    for r in records:
        object.__setattr__(r, "cumulative_dofs", 64)
    with pytest.raises(DriverError):
        fit_rate(records, 1.0)  # degenerate abscissae
    bad = _records([(2**k, 1.0) for k in range(6)])
    object.__setattr__(bad[-1], "estimator", 0.0)
    with pytest.raises(DriverError):
        fit_rate(bad, 1.0)


# ---------------------------------------------------------------------------
# Goal-error bound helper.
# ---------------------------------------------------------------------------

def test_verify_goal_bound_zero_ratio_when_exact():
    records = _records([(4, 1.0), (8, 0.5)])
    object.__setattr__(records[0], "goal_value", 0.25)
    object.__setattr__(records[1], "goal_value", 0.125)
    ratios, worst = verify_goal_bound(records, 0.125)
    assert ratios[1] == 0.0
    assert worst == ratios[0]


def test_verify_goal_bound_flags_falsified_bound():
    records = _records([(4, 1.0)])
    object.__setattr__(records[0], "estimator", 0.0)
    object.__setattr__(records[0], "goal_value", 1.0)
    with pytest.raises(DriverError, match="falsified"):
        verify_goal_bound(records, 0.0)


def test_goal_bound_on_manufactured_run():
    problem = problem_manufactured()
    config = RunConfig(problem="manufactured", degree=1, max_levels=8,
                       max_cumulative_dofs=10**9)
    records = run_goafem(config, problem=problem)
    assert len(records) >= 9
    ratios, worst = verify_goal_bound(records, problem.exact_goal)
    assert np.isfinite(worst)
    assert max(ratios[2:]) <= 2.0 * ratios[2]


def test_goal_bound_with_fine_mesh_reference_lshape():
    # Reference goal from a 2-extra-uniform-refinement solve stands in for
    # the unknown exact value.
    from goafem.fespace import FeSpace
    from goafem.mesh import uniform_refine
    from goafem.problems import problem_lshape_quadratic

    problem = problem_lshape_quadratic()
    config = RunConfig(problem="lshape-quadratic", degree=1, max_levels=6,
                       max_cumulative_dofs=10**9)
    records, traces = run_goafem(config, problem=problem, trace=True)
    fine_mesh = uniform_refine(traces[-1].space.mesh, 2)
    space = FeSpace(fine_mesh, 1)
    ctx = problem.setup(space)
    u, _ = problem.solve_primal(ctx)
    reference = problem.goal(ctx, u)
    ratios, worst = verify_goal_bound(records, reference)
    assert np.isfinite(worst)
    assert all(np.isfinite(r) for r in ratios)


def test_termination_contract_after_floor():
    config = RunConfig(problem="manufactured", max_levels=3,
                       estimator_floor=1e9)  # floor above everything
    records = run_goafem(config)
    assert len(records) == 1  # terminated after the first ESTIMATE
    assert records[0].n_marked == 0


def test_run_config_validation():
    with pytest.raises(DriverError):
        RunConfig(problem="manufactured", degree=4)
    with pytest.raises(DriverError):
        RunConfig(problem="manufactured", theta=0.0)
    with pytest.raises(DriverError):
        RunConfig(problem="manufactured", max_levels=-1)
