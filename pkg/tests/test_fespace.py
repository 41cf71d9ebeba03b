"""Space, quadrature, assembly, and evaluation tests against oracles."""
from math import factorial

import numpy as np
import pytest

from goafem.fespace import (
    DiscreteFunction,
    FeSpace,
    assemble_load_gradient,
    assemble_load_scalar,
    assemble_mass_weighted,
    assemble_stiffness,
    eval_element,
    eval_values,
    interpolate,
    local_nodes,
    prolongate,
    prolongation_matrix,
    shape_values,
    zero_function,
)
from goafem.mesh import refine_nvb, uniform_refine, unit_square
from goafem.quadrature import edge_rule, triangle_rule
from goafem.solver import solve_dirichlet

RNG = np.random.default_rng(42)


# ---------------------------------------------------------------------------
# Quadrature.
# ---------------------------------------------------------------------------

@pytest.mark.parametrize("degree", [0, 1, 2, 3, 4, 6, 8, 10, 14, 20])
def test_triangle_rule_exactness(degree):
    rule = triangle_rule(degree)
    assert np.all(rule.weights > 0)
    assert rule.weights.sum() == pytest.approx(1.0, abs=1e-14)
    for a in range(degree + 1):
        for b in range(degree + 1 - a):
            value = 0.5 * np.sum(rule.weights * rule.points[:, 1] ** a * rule.points[:, 2] ** b)
            exact = factorial(a) * factorial(b) / factorial(a + b + 2)
            assert value == pytest.approx(exact, abs=1e-13 * max(1.0, exact))


@pytest.mark.parametrize("degree", [1, 3, 7, 11])
def test_edge_rule_exactness(degree):
    t, w = edge_rule(degree)
    for k in range(degree + 1):
        assert np.sum(w * t**k) == pytest.approx(1.0 / (k + 1), abs=1e-14)


# ---------------------------------------------------------------------------
# Shape functions and DOF layout.
# ---------------------------------------------------------------------------

@pytest.mark.parametrize("p", [1, 2, 3])
def test_lagrange_property(p):
    nodes = local_nodes(p)
    values = shape_values(p, nodes)
    assert np.abs(values - np.eye(len(nodes))).max() == 0.0


@pytest.mark.parametrize("p", [1, 2, 3])
def test_dof_count_formula(p):
    mesh = uniform_refine(unit_square(), 3)
    space = FeSpace(mesh, p)
    interior = mesh.n_elements if p == 3 else 0
    expected = mesh.n_vertices + (p - 1) * mesh.n_edges + interior
    assert space.n_dofs == expected
    # Dirichlet DOFs sit on the boundary, so dim < n_dofs on this mesh.
    assert 0 < space.dim < space.n_dofs


def test_full_dirichlet_two_triangles_has_no_free_dofs():
    space = FeSpace(unit_square(), 1)
    assert space.dim == 0


# ---------------------------------------------------------------------------
# Stiffness.
# ---------------------------------------------------------------------------

def _sympy_hat_stiffness_center():
    """Exact integral of |grad(hat)|^2 over the four triangles at the center
    node of the once-refined square."""
    import sympy as sp

    x, y = sp.symbols("x y")
    mesh = uniform_refine(unit_square(), 1)
    space = FeSpace(mesh, 1)
    center = int(np.flatnonzero(~space.dirichlet_mask)[0])
    total = sp.Integer(0)
    for tri in mesh.triangles:
        if center not in tri:
            continue
        pts = [sp.Matrix(mesh.vertices[v]) for v in tri]
        local = list(tri).index(center)
        # Linear polynomial equal to 1 at the center vertex, 0 at the others.
        a, b, c = sp.symbols("a b c")
        sol = sp.solve(
            [a * q[0] + b * q[1] + c - (1 if i == local else 0) for i, q in enumerate(pts)],
            [a, b, c],
        )
        grad2 = sol[a] ** 2 + sol[b] ** 2
        area = sp.Rational(1, 2) * sp.Abs(
            (pts[1] - pts[0]).T.dot(sp.Matrix([[0, -1], [1, 0]]) * (pts[2] - pts[0]))
        )
        total += grad2 * area
    return float(total)


def test_stiffness_center_node_against_symbolic_oracle():
    mesh = uniform_refine(unit_square(), 1)
    space = FeSpace(mesh, 1)
    matrix = assemble_stiffness(space)
    free = np.flatnonzero(space.free_dofs)
    assert len(free) == 1
    value = matrix[free[0], free[0]]
    assert value == pytest.approx(_sympy_hat_stiffness_center(), abs=1e-13)


@pytest.mark.parametrize("p", [1, 2, 3])
def test_stiffness_exact_symmetry_and_kernel(p):
    mesh = refine_nvb(uniform_refine(unit_square(), 2), [0, 5, 7])
    space = FeSpace(mesh, p)
    matrix = assemble_stiffness(space)
    assert abs(matrix - matrix.T).max() == 0.0
    ones = np.ones(space.n_dofs)
    assert np.abs(matrix @ ones).max() <= 1e-12


def test_stiffness_elementwise_coefficient():
    mesh = uniform_refine(unit_square(), 2)
    space = FeSpace(mesh, 1)
    coeff = np.full(mesh.n_elements, 3.0)
    assert abs(assemble_stiffness(space, coeff) - 3.0 * assemble_stiffness(space)).max() \
        <= 1e-14


def test_stiffness_matrix_coefficient_identity():
    mesh = uniform_refine(unit_square(), 2)
    space = FeSpace(mesh, 2)
    identity = assemble_stiffness(space, np.eye(2))
    assert abs(identity - assemble_stiffness(space)).max() <= 1e-13


# ---------------------------------------------------------------------------
# Mass and loads.
# ---------------------------------------------------------------------------

def test_mass_zero_weight():
    space = FeSpace(unit_square(), 2)
    assert abs(assemble_mass_weighted(space, 0.0)).max() == 0.0


def test_mass_single_triangle_closed_form():
    # P1 mass matrix on any triangle is |T|/12 * (2,1,1; 1,2,1; 1,1,2).
    mesh = unit_square()
    space = FeSpace(mesh, 1)
    matrix = assemble_mass_weighted(space, 1.0).toarray()
    tri = mesh.triangles[0]
    area = mesh.areas[0]
    expected = area / 12.0 * np.array([[2, 1, 1], [1, 2, 1], [1, 1, 2]], dtype=float)
    block = matrix[np.ix_(tri, tri)]
    # Shared diagonal entries accumulate both triangles; compare off-diagonal
    # entries of vertices not shared by both triangles.
    assert block[0, 1] == pytest.approx(expected[0, 1], rel=1e-14)
    assert block[0, 2] == pytest.approx(expected[0, 2], rel=1e-14)


def test_mass_row_sums_are_domain_area():
    for p in (1, 2, 3):
        mesh = uniform_refine(unit_square(), 2)
        space = FeSpace(mesh, p)
        total = assemble_mass_weighted(space, 1.0).sum()
        assert total == pytest.approx(mesh.domain_area, rel=1e-13)


def test_load_scalar_trivial_cases():
    mesh = uniform_refine(unit_square(), 2)
    for p in (1, 2, 3):
        space = FeSpace(mesh, p)
        assert np.abs(assemble_load_scalar(space, 0.0)).max() == 0.0
        assert assemble_load_scalar(space, 1.0).sum() == pytest.approx(1.0, rel=1e-13)


def test_load_scalar_against_high_order_quadrature():
    def f(x):
        return 2 * np.pi**2 * np.sin(np.pi * x[:, 0]) * np.sin(np.pi * x[:, 1])

    # Fine enough that the default 2p+4 rule is within 1e-10 of exactness 20.
    mesh = uniform_refine(unit_square(), 7)
    for p in (1, 2, 3):
        space = FeSpace(mesh, p)
        load = assemble_load_scalar(space, f)
        oracle = assemble_load_scalar(space, f, exactness=20)
        scale = np.abs(oracle).max()
        assert np.abs(load - oracle).max() <= 1e-10 * scale


def test_load_gradient_trivial_and_interior():
    mesh = uniform_refine(unit_square(), 3)
    for p in (1, 2, 3):
        space = FeSpace(mesh, p)
        zero = assemble_load_gradient(space, lambda x: np.zeros_like(x))
        assert np.abs(zero).max() == 0.0
        const = assemble_load_gradient(space, lambda x: np.tile([2.0, -1.0], (len(x), 1)))
        # Any basis function vanishing on the domain boundary integrates its
        # gradient to zero.
        assert np.abs(const[space.free_dofs]).max() <= 1e-13


def test_load_gradient_against_per_element_oracle():
    from goafem.problems import ms_linear_f, ms_linear_mesh

    mesh = ms_linear_mesh()
    space = FeSpace(mesh, 1)
    load = assemble_load_gradient(space, ms_linear_f)
    # Oracle: for P1, int_T grad(phi_i) = |T| * (constant gradient of phi_i).
    oracle = np.zeros(space.n_dofs)
    fields = ms_linear_f(mesh.centroids())
    for t, tri in enumerate(mesh.triangles):
        for local, dof in enumerate(tri):
            grad = space.grad_lambda[t, local]
            oracle[dof] += mesh.areas[t] * float(fields[t] @ grad)
    assert np.abs(load - oracle).max() <= 1e-14


def test_load_gradient_rejects_nonconstant_field():
    from goafem.fespace import FeSpaceError

    space = FeSpace(unit_square(), 1)
    with pytest.raises(FeSpaceError):
        assemble_load_gradient(space, lambda x: np.column_stack([x[:, 0], x[:, 1]]))


# ---------------------------------------------------------------------------
# Interpolation and evaluation.
# ---------------------------------------------------------------------------

@pytest.mark.parametrize("p", [1, 2, 3])
def test_interpolation_reproduces_polynomials(p):
    mesh = refine_nvb(uniform_refine(unit_square(), 1), [1, 2])
    space = FeSpace(mesh, p)

    def poly(x):
        out = 1.0 + 2.0 * x[:, 0] - x[:, 1]
        if p >= 2:
            out = out + 0.5 * x[:, 0] * x[:, 1] - x[:, 1] ** 2
        if p >= 3:
            out = out + x[:, 0] ** 2 * x[:, 1]
        return out

    df = interpolate(space, poly)
    rule = triangle_rule(2 * p)
    xy = np.einsum("qk,tkd->tqd", rule.points, mesh.vertices[mesh.triangles])
    values = eval_values(df, 2 * p)
    exact = poly(xy.reshape(-1, 2)).reshape(values.shape)
    assert np.abs(values - exact).max() <= 1e-12


def _containing_elements(space, pts):
    """Brute-force point location: first element containing each point."""
    owner = np.empty(len(pts), dtype=np.int64)
    for i, q in enumerate(pts):
        all_elems = np.arange(space.mesh.n_elements)
        lam = space.barycentric(all_elems, np.broadcast_to(q, (len(all_elems), 1, 2)))
        owner[i] = int(np.flatnonzero(np.all(lam[:, 0, :] >= -1e-12, axis=1))[0])
    return owner


@pytest.mark.parametrize("p", [1, 2, 3])
def test_nestedness_roundtrip(p):
    coarse_mesh = refine_nvb(uniform_refine(unit_square(), 2), [3])
    coarse = FeSpace(coarse_mesh, p)
    df = DiscreteFunction(coarse, RNG.standard_normal(coarse.n_dofs))
    fine = FeSpace(refine_nvb(coarse_mesh, [0, 1, 4]), p)
    lifted = prolongate(df, fine)
    pts = RNG.random((50, 2))
    from goafem.fespace import eval_at_points
    from goafem.mesh import is_refinement_of

    # Evaluate both functions at identical physical points.
    refmap = is_refinement_of(fine.mesh, coarse_mesh)
    owner = _containing_elements(fine, pts)
    fine_vals, _ = eval_at_points(lifted, owner, pts[:, None, :])
    coarse_vals, _ = eval_at_points(df, refmap.fine_to_coarse[owner], pts[:, None, :])
    assert fine_vals.shape == (50, 1)
    assert np.abs(fine_vals - coarse_vals).max() <= 1e-12


def test_interpolation_error_decay_p2():
    def fn(x):
        return np.sin(np.pi * x[:, 0]) * np.sin(np.pi * x[:, 1])

    errors = []
    mesh = uniform_refine(unit_square(), 4)
    for _ in range(3):
        space = FeSpace(mesh, 2)
        df = interpolate(space, fn)
        rule = triangle_rule(12)
        xy = np.einsum("qk,tkd->tqd", rule.points, mesh.vertices[mesh.triangles])
        diff = eval_values(df, 12) - fn(xy.reshape(-1, 2)).reshape(-1, rule.n_points)
        err = np.sqrt(np.einsum("tq,q,t->", diff**2, rule.weights, mesh.areas))
        errors.append(err)
        mesh = uniform_refine(mesh, 2)  # halves h
    for e0, e1 in zip(errors[:-1], errors[1:]):
        assert e0 / e1 == pytest.approx(8.0, rel=0.2)


def test_eval_element_laplacians():
    mesh = uniform_refine(unit_square(), 2)
    points = np.array([[1 / 3, 1 / 3, 1 / 3], [0.2, 0.5, 0.3]])
    space1 = FeSpace(mesh, 1)
    df1 = DiscreteFunction(space1, RNG.standard_normal(space1.n_dofs))
    _, _, laps = eval_element(df1, 0, points)
    assert np.abs(laps).max() == 0.0
    for p in (2, 3):
        space = FeSpace(mesh, p)
        df = interpolate(space, lambda x: x[:, 0] ** 2 + x[:, 1] ** 2)
        for element in range(mesh.n_elements):
            _, _, laps = eval_element(df, element, points)
            assert laps == pytest.approx([4.0, 4.0], abs=1e-10)


def test_eval_element_gradient_against_finite_differences():
    mesh = uniform_refine(unit_square(), 2)
    space = FeSpace(mesh, 3)
    df = DiscreteFunction(space, RNG.standard_normal(space.n_dofs))
    element = 5
    centroid = np.full(3, 1 / 3)
    _, grads, _ = eval_element(df, element, centroid)

    def value_at(xy):
        lam = space.barycentric(np.array([element]), xy.reshape(1, 1, 2))
        coeff = df.coefficients[space.element_dofs[element]]
        return float(shape_values(3, lam[0, 0]) @ coeff)

    x0 = mesh.vertices[mesh.triangles[element]].mean(axis=0)
    h = 1e-6
    fd = np.array(
        [
            (value_at(x0 + [h, 0]) - value_at(x0 - [h, 0])) / (2 * h),
            (value_at(x0 + [0, h]) - value_at(x0 - [0, h])) / (2 * h),
        ]
    )
    assert np.abs(grads[0] - fd).max() <= 1e-6


def test_eval_element_bad_index():
    from goafem.fespace import FeSpaceError

    space = FeSpace(unit_square(), 1)
    df = zero_function(space)
    with pytest.raises(FeSpaceError):
        eval_element(df, 2, np.array([[1 / 3, 1 / 3, 1 / 3]]))


# ---------------------------------------------------------------------------
# Galerkin orthogonality across nested spaces.
# ---------------------------------------------------------------------------

@pytest.mark.parametrize("p", [1, 2])
def test_galerkin_orthogonality_instance(p):
    def f(x):
        return 2 * np.pi**2 * np.sin(np.pi * x[:, 0]) * np.sin(np.pi * x[:, 1])

    coarse_mesh = uniform_refine(unit_square(), 3)
    coarse = FeSpace(coarse_mesh, p)
    fine = FeSpace(refine_nvb(coarse_mesh, np.arange(0, coarse_mesh.n_elements, 3)), p)
    matrix = assemble_stiffness(fine)
    load = assemble_load_scalar(fine, f)
    u_h, _, _ = solve_dirichlet(fine, matrix, load)
    transfer = prolongation_matrix(coarse, fine)
    residual = transfer.T @ (matrix @ u_h.coefficients - load)
    free_coarse = coarse.free_dofs
    assert np.abs(residual[free_coarse]).max() <= 1e-9 * np.linalg.norm(load)
