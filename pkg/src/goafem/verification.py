"""Property and axiom suites: mesh invariants, estimator axioms, marking laws.

Each suite returns a list of (name, passed, detail) tuples so the CLI can
print one line per invariant and the test suite can assert on them.
"""
from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from itertools import combinations

import numpy as np

from goafem.driver import RunConfig, run_goafem, verify_goal_bound
from goafem.estimators import IndicatorField, ScalarLoad, estimate_poisson, oscillation
from goafem.fespace import (
    DiscreteFunction,
    FeSpace,
    eval_gradients,
    prolongate,
)
from goafem.marking import (
    BUILTIN_WEIGHTS,
    MarkRequest,
    builtin_weight,
    doerfler_satisfied,
    mark_doerfler,
    mark_equidistribution,
    mark_general,
    mark_goafem,
    mark_maximum,
    strategy_b_satisfied,
    weight_constant,
)
from goafem.mesh import (
    Triangulation,
    is_refinement_of,
    l_shape,
    patch_of,
    refine_nvb,
    uniform_refine,
    unit_square,
)
from goafem.problems import ManufacturedGoalProblem, problem_manufactured
from goafem.quadrature import triangle_rule


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str

    def line(self) -> str:
        return f"[{'PASS' if self.passed else 'FAIL'}] {self.name}: {self.detail}"


def _random_mesh(rng: np.random.Generator, base: str = "square",
                 levels: int = 3, frac: float = 0.3) -> Triangulation:
    mesh = unit_square() if base == "square" else l_shape()
    for _ in range(levels):
        n = mesh.n_elements
        k = max(1, int(frac * n))
        marked = rng.choice(n, size=k, replace=False)
        mesh = refine_nvb(mesh, marked)
    return mesh


# ---------------------------------------------------------------------------
# Mesh suite: refinement axioms on randomized refine calls.
# ---------------------------------------------------------------------------

def mesh_suite(n_trials: int = 500, seed: int = 2024,
               calibration_trials: int = 100) -> list[CheckResult]:
    """Refinement axioms on randomized refine calls.

    R4/R5 constants stabilize once the (finitely many) NVB similarity and
    adjacency classes have appeared, so the constants observed after the
    calibration trials must not exceed the calibration envelope.  The shape
    regularity reference comes from uniform refinements, which realize all
    NVB similarity classes of the built-in meshes.
    """
    rng = np.random.default_rng(seed)
    kappa_ref = max(
        uniform_refine(unit_square(), 3).shape_regularity(),
        uniform_refine(l_shape(), 3).shape_regularity(),
    )

    meshes = [unit_square(), l_shape()]
    marked_ok = area_ok = child_ok = conform_ok = True
    kappa_max = 0.0
    patch_cal, size_cal = 0, 0.0
    patch_max, size_max = 0, 0.0
    worst_area = 0.0
    for trial in range(n_trials):
        mesh = meshes[trial % 2]
        if mesh.n_elements > 4000:
            meshes[trial % 2] = unit_square() if trial % 2 == 0 else l_shape()
            mesh = meshes[trial % 2]
        n = mesh.n_elements
        k = int(rng.integers(1, max(2, n // 2)))
        marked = rng.choice(n, size=min(k, n), replace=False)
        bis = 3 if trial % 25 == 7 else 1
        fine = refine_nvb(mesh, marked, bisections_per_marked=bis)
        refmap = is_refinement_of(fine, mesh)
        # R1: marked elements are refined.
        marked_ok &= not np.isin(marked, refmap.kept_coarse).any()
        # R2: children partition their parent (area conservation per parent).
        child_area = np.zeros(mesh.n_elements)
        np.add.at(child_area, refmap.fine_to_coarse, fine.areas)
        err = np.max(np.abs(child_area - mesh.areas) / mesh.areas)
        worst_area = max(worst_area, err)
        area_ok &= err <= 1e-12
        # R3: proper children have at most half the parent area.
        proper = np.isin(refmap.fine_to_coarse, refmap.refined_coarse)
        ratio = fine.areas[proper] / mesh.areas[refmap.fine_to_coarse[proper]]
        child_ok &= bool(np.all(ratio <= 0.5 + 1e-12))
        # Conformity is enforced by the constructor; total area too.
        conform_ok &= abs(fine.areas.sum() - fine.domain_area) <= 1e-12 * fine.domain_area
        kappa_max = max(kappa_max, fine.shape_regularity())
        c1, c2 = _patch_constants(fine)
        if trial < calibration_trials:
            patch_cal, size_cal = max(patch_cal, c1), max(size_cal, c2)
        else:
            patch_max, size_max = max(patch_max, c1), max(size_max, c2)
        meshes[trial % 2] = fine

    results = [
        CheckResult("R1 marked-are-refined", marked_ok, f"{n_trials} randomized refine calls"),
        CheckResult("R2 child-area-partition", area_ok, f"max relative defect {worst_area:.2e}"),
        CheckResult("R3 child-size-halving", child_ok, "|T'| <= |T|/2 (1 + 1e-12)"),
        CheckResult(
            "R4/R5 patch constants stabilize",
            patch_max <= patch_cal and size_max <= size_cal,
            f"patch size {patch_max} <= {patch_cal}, area ratio {size_max:.1f} <= {size_cal:.1f}",
        ),
        CheckResult(
            "shape regularity", kappa_max <= kappa_ref * (1 + 1e-9),
            f"max diam/sqrt(area) {kappa_max:.6f} vs reference {kappa_ref:.6f}",
        ),
        CheckResult("conformity and area conservation", conform_ok, "tolerance 1e-12"),
    ]
    return results


def _patch_constants(mesh: Triangulation):
    """Max patch cardinality and max area ratio within a patch (all elements)."""
    import scipy.sparse as sp

    nt, nv = mesh.n_elements, mesh.n_vertices
    incidence = sp.coo_matrix(
        (np.ones(3 * nt), (np.repeat(np.arange(nt), 3), mesh.triangles.reshape(-1))),
        shape=(nt, nv),
    ).tocsr()
    overlap = (incidence @ incidence.T).tocsr()
    card = int(np.max(np.diff(overlap.indptr)))
    areas = mesh.areas[overlap.indices]
    bounds = overlap.indptr
    amax = np.maximum.reduceat(areas, bounds[:-1])
    amin = np.minimum.reduceat(areas, bounds[:-1])
    return card, float(np.max(amax / amin))


# ---------------------------------------------------------------------------
# Axiom suite: estimator stability, reduction, local discrete efficiency.
# ---------------------------------------------------------------------------

def same_function_reduction_check(n_meshes: int = 20, seed: int = 7) -> list[CheckResult]:
    """Reduction with vanished perturbation: refine all, re-evaluate, compare.

    For a fixed discrete function and elementwise-polynomial data, one
    bisection of every element scales the volume term by 1/2 and the edge
    term by 2^(-1/2), so the refined-element aggregate contracts by
    q_red = 2^(-1/2).
    """
    rng = np.random.default_rng(seed)
    q_red = 2.0 ** -0.5
    worst = 0.0
    ok = True

    def f_poly(x):
        return 3.0 + x[:, 0] + 2.0 * x[:, 1]

    for trial in range(n_meshes):
        mesh = _random_mesh(rng, "square" if trial % 2 == 0 else "lshape",
                            levels=int(rng.integers(2, 5)))
        p = int(rng.integers(1, 4))
        space = FeSpace(mesh, p)
        u = DiscreteFunction(space, rng.standard_normal(space.n_dofs))
        coarse = estimate_poisson(space, u, ScalarLoad(f_poly, polynomial=True))
        fine_mesh = uniform_refine(mesh, 1)
        fine_space = FeSpace(fine_mesh, p)
        u_fine = prolongate(u, fine_space)
        fine = estimate_poisson(fine_space, u_fine, ScalarLoad(f_poly, polynomial=True))
        refmap = is_refinement_of(fine_mesh, mesh)
        lhs = fine.aggregate(refmap.new_fine) ** 2
        rhs = q_red * coarse.aggregate(refmap.refined_coarse) ** 2
        ok &= lhs <= rhs
        worst = max(worst, lhs / rhs)
    return [
        CheckResult(
            "B2 same-function reduction", ok,
            f"max ratio xi_h^2 / (q_red xi_H^2) = {worst:.6f} over {n_meshes} meshes",
        )
    ]


def _transfer_energy(space_c, space_f, df_c, df_f) -> float:
    """Energy norm of df_f - (df_c prolongated), computed on the fine space."""
    from goafem.fespace import energy_norm

    lifted = prolongate(df_c, space_f)
    return energy_norm(space_f, df_f.coefficients - lifted.coefficients)


def stability_constants(problem_name: str, degree: int = 1, levels: int = 9,
                        combination: str | None = None) -> dict:
    """Measured B1 constants per refinement step of an adaptive run."""
    cfg = RunConfig(problem=problem_name, degree=degree, theta=0.5,
                    strategy="doerfler-smaller", combination=combination,
                    max_levels=levels, max_cumulative_dofs=10**9)
    records, traces = run_goafem(cfg, trace=True)
    mu_consts, nu_consts = [], []
    for a, b in zip(traces[:-1], traces[1:]):
        refmap = is_refinement_of(b.space.mesh, a.space.mesh)
        du = _transfer_energy(a.space, b.space, a.primal, b.primal)
        dz = _transfer_energy(a.space, b.space, a.dual, b.dual)
        dmu = abs(b.mu.aggregate(refmap.inherited_fine) - a.mu.aggregate(refmap.kept_coarse))
        dnu = abs(b.nu.aggregate(refmap.inherited_fine) - a.nu.aggregate(refmap.kept_coarse))
        if du > 0.0:
            mu_consts.append(dmu / du)
        if du + dz > 0.0 and dnu > 0.0:
            nu_consts.append(dnu / (du + dz))
    return {"mu": mu_consts, "nu": nu_consts, "records": records}


def stability_check(problem_name: str, degree: int = 1,
                    combination: str | None = None) -> list[CheckResult]:
    """B1 instance over 8 adaptive levels: the measured constant (the running
    supremum of per-transition ratios) may not grow past twice its level-2
    value."""
    data = stability_constants(problem_name, degree, levels=8, combination=combination)
    results = []
    for key in ("mu", "nu"):
        running = np.maximum.accumulate(np.asarray(data[key]))
        finite = bool(np.all(np.isfinite(running)))
        base = running[min(2, len(running) - 1)] if len(running) else 0.0
        bounded = len(running) == 0 or running[-1] <= 2.0 * base
        results.append(
            CheckResult(
                f"B1 stability [{problem_name}, {key}]",
                finite and bounded,
                f"measured constants {['%.3f' % c for c in running]}",
            )
        )
    return results


def estimator_boundedness_check(problem_name: str = "ms-linear",
                                degree: int = 1) -> list[CheckResult]:
    cfg = RunConfig(problem=problem_name, degree=degree, theta=0.5,
                    strategy="doerfler-smaller", max_levels=10,
                    max_cumulative_dofs=10**9)
    records = run_goafem(cfg)
    eta0, zeta0 = records[0].eta, records[0].zeta
    ok = all(r.eta <= 10 * eta0 and r.zeta <= 10 * zeta0 for r in records)
    return [
        CheckResult(
            "estimator uniform boundedness", ok,
            f"sup eta {max(r.eta for r in records):.3e} vs 10 x level-0 {10 * eta0:.3e}",
        )
    ]


def local_efficiency_constants(n_trials: int = 20, seed: int = 11) -> list[float]:
    """Measured local-discrete-efficiency constants for random bisec(3) trials."""
    rng = np.random.default_rng(seed)
    problem = problem_manufactured()
    mesh = uniform_refine(problem.initial_mesh, 4)
    space = FeSpace(mesh, 1)
    ctx = problem.setup(space)
    u_coarse, _ = problem.solve_primal(ctx)
    mu = estimate_poisson(space, u_coarse, ScalarLoad(problem.f))
    osc = oscillation(space, problem.f, q=0)
    constants = []
    for _ in range(n_trials):
        t = int(rng.integers(0, mesh.n_elements))
        patch = patch_of(mesh, t)
        fine_mesh = refine_nvb(mesh, [t], bisections_per_marked=3)
        fine_space = FeSpace(fine_mesh, 1)
        fine_ctx = problem.setup(fine_space)
        u_fine, _ = problem.solve_primal(fine_ctx)
        refmap = is_refinement_of(fine_mesh, mesh)
        lifted = prolongate(u_coarse, fine_space)
        diff = DiscreteFunction(fine_space, u_fine.coefficients - lifted.coefficients)
        grads = eval_gradients(diff, 2)
        rule = triangle_rule(2)
        per_elem = np.einsum("tqd,tqd,q->t", grads, grads, rule.weights) * fine_mesh.areas
        in_patch = np.isin(refmap.fine_to_coarse, patch.members)
        err_sq = float(per_elem[in_patch].sum())
        osc_sq = osc.aggregate_squared(patch.members)
        constants.append(mu.values[t] ** 2 / (err_sq + osc_sq))
    return constants


def local_efficiency_check(n_trials: int = 20, seed: int = 11) -> list[CheckResult]:
    consts = local_efficiency_constants(n_trials, seed)
    spread = max(consts) / min(consts)
    return [
        CheckResult(
            "local discrete efficiency (bisec3)", spread < 1e3,
            f"constant spread max/min = {spread:.1f} over {n_trials} trials",
        )
    ]


def axioms_suite(seed: int = 7) -> list[CheckResult]:
    results = same_function_reduction_check(seed=seed)
    results += stability_check("ms-linear", degree=1)
    results += stability_check("lshape-quadratic", degree=1)
    results += estimator_boundedness_check()
    results += local_efficiency_check()
    return results


# ---------------------------------------------------------------------------
# Marking suite.
# ---------------------------------------------------------------------------

def _mesh_pool(rng: np.random.Generator, count: int = 12) -> list[Triangulation]:
    pool = []
    for i in range(count):
        pool.append(_random_mesh(rng, "square", levels=int(rng.integers(1, 4)), frac=0.4))
    return pool


def _random_field(rng: np.random.Generator, mesh: Triangulation) -> IndicatorField:
    vals = rng.random(mesh.n_elements) ** 2
    vals[rng.random(mesh.n_elements) < 0.15] = 0.0
    return IndicatorField(mesh, vals)


def _brute_force_doerfler_size(values_sq, theta: float) -> int:
    exact = [Fraction(v) for v in values_sq.tolist()]
    total = sum(exact, Fraction(0))
    target = Fraction(theta) * total
    n = len(exact)
    for size in range(n + 1):
        for subset in combinations(range(n), size):
            if sum((exact[i] for i in subset), Fraction(0)) >= target:
                return size
    return n


def marking_suite(n_fields: int = 100, seed: int = 3) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    pool = _mesh_pool(rng)
    results = []

    doerfler_ok = maximum_ok = equi_ok = general_ok = True
    nonempty_ok = deterministic_ok = True
    for _ in range(n_fields):
        mesh = pool[int(rng.integers(0, len(pool)))]
        xi = _random_field(rng, mesh)
        theta = float(rng.uniform(0.05, 1.0))
        m = mark_doerfler(xi, theta)
        doerfler_ok &= doerfler_satisfied(xi, m, theta)
        deterministic_ok &= np.array_equal(m.indices, mark_doerfler(xi, theta).indices)
        mm = mark_maximum(xi, theta)
        top = xi.values.max(initial=0.0)
        expected = (
            np.flatnonzero(xi.values > 0.0) if theta == 1.0
            else np.flatnonzero(xi.values >= (1 - theta) * top)
        )
        maximum_ok &= np.array_equal(mm.indices, expected) or top == 0.0
        me = mark_equidistribution(xi, theta)
        total_sq = float(np.sum(xi.squared))
        expected = (
            np.flatnonzero(xi.squared > 0.0) if theta == 1.0
            else np.flatnonzero(xi.squared >= (1 - theta) * total_sq / mesh.n_elements)
        )
        equi_ok &= np.array_equal(me.indices, expected) or total_sq == 0.0
        c = float(rng.uniform(0.5, 2.0))
        mg = mark_general(xi, lambda t: c * t)
        unmarked = np.setdiff1d(np.arange(mesh.n_elements), mg.indices)
        rest_max = xi.values[unmarked].max(initial=0.0)
        general_ok &= rest_max <= c * xi.aggregate(mg.indices) + 1e-15
        if xi.total > 0:
            nonempty_ok &= len(m) > 0 and len(mm) > 0 and len(me) > 0
    results.append(CheckResult("Dörfler bulk inequality (exact arithmetic)", doerfler_ok,
                               f"{n_fields} random fields"))
    results.append(CheckResult("maximum criterion threshold set", maximum_ok, "exact sets"))
    results.append(CheckResult("equidistribution threshold set", equi_ok, "exact sets"))
    results.append(CheckResult("general criterion inequality", general_ok, "M(t) = c t"))
    results.append(CheckResult("nonemptiness on nonzero fields", nonempty_ok, ""))
    results.append(CheckResult("determinism", deterministic_ok, "repeated calls identical"))

    # Dörfler minimality by brute force on small fields.
    minimal_ok = True
    small = refine_nvb(refine_nvb(unit_square(), [0]), [0, 1])  # <= 12 elements
    for _ in range(25):
        xi = _random_field(rng, small)
        theta = float(rng.uniform(0.1, 0.95))
        m = mark_doerfler(xi, theta)
        minimal_ok &= len(m) == _brute_force_doerfler_size(xi.squared, theta)
    results.append(
        CheckResult("Dörfler minimality (brute force, <= 12 elements)", minimal_ok,
                    f"{small.n_elements}-element mesh, 25 fields")
    )

    # Two-indicator bulk criterion: termination, feasibility, constant chain.
    b_ok = chain_ok = True
    for _ in range(n_fields):
        mesh = pool[int(rng.integers(0, len(pool)))]
        eta = _random_field(rng, mesh)
        zeta = _random_field(rng, mesh)
        if eta.total == 0.0 or zeta.total == 0.0:
            continue
        theta = float(rng.uniform(0.05, 1.0))
        for name in BUILTIN_WEIGHTS:
            req = MarkRequest(theta=theta, strategy="strategy-b", combine="strategy-b",
                              w_fn=builtin_weight(name), w_name=name)
            m = mark_goafem(eta, zeta, req)
            b_ok &= strategy_b_satisfied(eta, zeta, m, req.w_fn, theta)
            cw = weight_constant(req.w_fn)
            x = eta.aggregate(m.indices) ** 2 / eta.total**2
            y = zeta.aggregate(m.indices) ** 2 / zeta.total**2
            chain_ok &= theta <= cw * max(x, y) + 1e-12
    results.append(CheckResult("strategy-B termination and feasibility", b_ok,
                               f"all built-in W on {n_fields} field pairs"))
    results.append(CheckResult("strategy-B constant chain theta <= C_W max", chain_ok, ""))
    return results


# ---------------------------------------------------------------------------
# Goal suite: goal-error bound and reliability on the manufactured problem.
# ---------------------------------------------------------------------------

def true_energy_error(space: FeSpace, u: DiscreteFunction, grad_exact) -> float:
    """||grad(u_exact - u_H)|| by exactness-20 quadrature of the closed form."""
    exact = 20
    rule = triangle_rule(exact)
    mesh = space.mesh
    xy = np.einsum("qk,tkd->tqd", rule.points, mesh.vertices[mesh.triangles])
    g_exact = np.asarray(grad_exact(xy.reshape(-1, 2))).reshape(xy.shape)
    g_h = eval_gradients(u, exact)
    diff = g_exact - g_h
    val = np.einsum("tqd,tqd,q,t->", diff, diff, rule.weights, mesh.areas)
    return float(np.sqrt(max(val, 0.0)))


def goal_suite(levels: int = 9) -> list[CheckResult]:
    problem = problem_manufactured()
    cfg = RunConfig(problem="manufactured", degree=1, theta=0.5,
                    strategy="doerfler-smaller", max_levels=levels,
                    max_cumulative_dofs=10**9)
    records, traces = run_goafem(cfg, problem=problem, trace=True)
    ratios, worst = verify_goal_bound(records, problem.exact_goal)
    base = ratios[2]
    goal_ok = max(ratios[2:]) <= 2.0 * base
    results = [
        CheckResult(
            "goal-error bound |G(u) - G_l| <= C eta zeta", goal_ok,
            f"ratios {['%.4f' % r for r in ratios]} (max {worst:.4f})",
        )
    ]
    rel = []
    for t in traces:
        err = true_energy_error(t.space, t.primal, ManufacturedGoalProblem.grad_u_exact)
        rel.append(err / t.mu.total if t.mu.total > 0 else 0.0)
    rel_ok = max(rel[2:]) <= 2.0 * rel[2]
    results.append(
        CheckResult(
            "reliability ||grad(u - u_l)|| <= C_rel mu", rel_ok,
            f"ratios {['%.4f' % r for r in rel]}",
        )
    )
    return results


SUITES = {
    "mesh": mesh_suite,
    "axioms": axioms_suite,
    "marking": marking_suite,
    "goal": goal_suite,
}
