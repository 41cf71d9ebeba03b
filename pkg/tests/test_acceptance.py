"""Acceptance criteria, one test per criterion.

Each test prints a [PASS]/[FAIL] line with the measured quantities; run
with `pytest tests/test_acceptance.py -v -s` to see them.  The figure runs
use theta = 0.5 and a cumulative-DOF budget past 1e5, as the rate criteria
require; they are produced once per session and reused.
"""
import pytest

from goafem.cli import _run_all, figure_configs
from goafem.driver import fit_rate, read_records
from goafem.verification import (
    estimator_boundedness_check,
    goal_suite,
    local_efficiency_check,
    marking_suite,
    mesh_suite,
    same_function_reduction_check,
    stability_check,
)

THETA = 0.5
BUDGET = 150_000


def _emit(ok: bool, text: str) -> None:
    print(f"\n[{'PASS' if ok else 'FAIL'}] {text}")


def _produce_bundle(tmp_path_factory, which, tag):
    out = tmp_path_factory.mktemp(tag)
    configs = figure_configs(which, THETA, BUDGET)
    _run_all(configs, out, jobs=1)
    return out, configs


@pytest.fixture(scope="session")
def fig2_first(tmp_path_factory):
    return _produce_bundle(tmp_path_factory, "fig2", "fig2-a")


@pytest.fixture(scope="session")
def fig2_second(tmp_path_factory):
    # Produced independently of fig2_first for the determinism criterion.
    return _produce_bundle(tmp_path_factory, "fig2", "fig2-b")


@pytest.fixture(scope="session")
def fig3_bundle(tmp_path_factory):
    return _produce_bundle(tmp_path_factory, "fig3", "fig3")


def test_fig2_rates(fig2_first):
    """Slopes of eta*zeta vs cumulative DOFs: [-p - 0.35, -p + 0.35]."""
    out, configs = fig2_first
    lines = []
    ok = True
    for config in configs:
        records = read_records(out / f"{config.name}.csv")
        assert records[-1].cumulative_dofs >= 100_000
        slope = fit_rate(records, 0.5)
        hit = -config.degree - 0.35 <= slope <= -config.degree + 0.35
        ok &= hit
        lines.append(f"{config.name}: alpha = {slope:+.3f} (target {-config.degree})")
    _emit(ok, "fig2 rates, 12 runs:\n  " + "\n  ".join(lines))
    assert ok


def test_fig3_companion_rates(fig3_bundle):
    """L-shape quadratic goal: p = 1 in [-1.35, -0.65], p = 3 in [-3.4, -2.6]."""
    out, configs = fig3_bundle
    windows = {1: (-1.35, -0.65), 3: (-3.4, -2.6)}
    lines = []
    ok = True
    for config in configs:
        records = read_records(out / f"{config.name}.csv")
        slope = fit_rate(records, 0.5)
        if config.degree in windows:
            assert records[-1].cumulative_dofs >= 100_000
            lo, hi = windows[config.degree]
            ok &= lo <= slope <= hi
        lines.append(f"{config.name}: alpha = {slope:+.3f}")
    _emit(ok, "fig3-companion rates:\n  " + "\n  ".join(lines))
    assert ok


def test_goal_error_bound():
    """|G(u) - G_l| <= C eta_l zeta_l with the max ratio <= 2x its level-2 value."""
    results = goal_suite(levels=9)
    result = results[0]
    _emit(result.passed, result.name + ": " + result.detail)
    assert result.passed


def test_reliability_instance():
    """||grad(u - u_l)|| / mu_l bounded over >= 8 levels (2x level-2 rule)."""
    results = goal_suite(levels=9)
    result = results[1]
    _emit(result.passed, result.name + ": " + result.detail)
    assert result.passed


def test_axiom_suite():
    """Reduction (exact q_red = 2^(-1/2)), stability, local efficiency spread."""
    results = same_function_reduction_check(n_meshes=20, seed=7)
    results += stability_check("ms-linear", degree=1)
    results += stability_check("lshape-quadratic", degree=1)
    results += estimator_boundedness_check()
    results += local_efficiency_check(n_trials=20, seed=11)
    for result in results:
        _emit(result.passed, result.name + ": " + result.detail)
    assert all(r.passed for r in results)


def test_marking_suite():
    """Defining inequalities on 100 random fields, brute-force minimality,
    strategy-B termination for every built-in W."""
    results = marking_suite(n_fields=100, seed=3)
    for result in results:
        _emit(result.passed, result.name + ": " + result.detail)
    assert all(r.passed for r in results)


def test_mesh_suite():
    """R1/R2/R3 on 500 randomized refine calls; conformity and area to 1e-12."""
    results = mesh_suite(n_trials=500, seed=2024)
    for result in results:
        _emit(result.passed, result.name + ": " + result.detail)
    assert all(r.passed for r in results)


def test_fig2_determinism(fig2_first, fig2_second):
    """Repeated figure production yields byte-identical CSVs."""
    out_a, configs = fig2_first
    out_b, _ = fig2_second
    ok = True
    for config in configs:
        a = (out_a / f"{config.name}.csv").read_bytes()
        b = (out_b / f"{config.name}.csv").read_bytes()
        ok &= a == b
    _emit(ok, f"fig2 determinism across repeated runs ({len(configs)} CSV pairs)")
    assert ok
