"""Concrete goal problems: primal/dual solves, indicator recipes, goal values.

Each problem exposes the same interface consumed by the adaptive driver:
``setup`` assembles per-level data, ``solve_primal`` / ``solve_dual``
produce the discrete solutions (the dual may depend on the primal),
``indicators`` returns the raw primal/dual indicator fields (mu, nu), and
``goal`` evaluates the discrete goal quantity from the primal solution.
"""
from __future__ import annotations

import numpy as np

from goafem.estimators import (
    GradientLoad,
    ScalarLoad,
    SemilinearDual,
    SemilinearPrimal,
    WeightedGradientDual,
    combine,
    estimate_poisson,
)
from goafem.fespace import (
    DiscreteFunction,
    FeSpace,
    assemble_load_gradient,
    assemble_load_scalar,
    assemble_load_weighted_gradient,
    assemble_mass_weighted,
    assemble_stiffness,
    eval_gradients,
    integrate,
    piecewise_constant_field,
    pointwise_values,
)
from goafem.mesh import MeshError, Triangulation, l_shape, uniform_refine, unit_square
from goafem.solver import SolveReport, SpdOperator, PointwiseComposition, newton_semilinear

PROBLEM_NAMES = ("ms-linear", "lshape-quadratic", "semilinear", "manufactured")


class ProblemError(ValueError):
    """Invalid problem construction or configuration."""


class GoalProblem:
    """Base interface; subclasses fill in the per-level recipes."""

    name: str = ""
    combination: str = "separate"
    exact_goal: float | None = None

    def __init__(self, initial_mesh: Triangulation, combination: str):
        self.initial_mesh = initial_mesh
        self.combination = combination

    def setup(self, space: FeSpace) -> dict:
        raise NotImplementedError

    def solve_primal(self, ctx: dict):
        raise NotImplementedError

    def solve_dual(self, ctx: dict, u: DiscreteFunction):
        raise NotImplementedError

    def indicators(self, ctx: dict, u: DiscreteFunction, z: DiscreteFunction):
        raise NotImplementedError

    def goal(self, ctx: dict, u: DiscreteFunction) -> float:
        raise NotImplementedError

    def combined_indicators(self, ctx, u, z):
        mu, nu = self.indicators(ctx, u, z)
        eta, zeta = combine(mu, nu, self.combination)
        return mu, nu, eta, zeta


def _free_operator(space: FeSpace, matrix, rel_tol: float) -> SpdOperator:
    free = np.flatnonzero(space.free_dofs)
    return SpdOperator(matrix[free][:, free].tocsr(), rel_tol)


def _solve_free(space: FeSpace, operator: SpdOperator, rhs: np.ndarray):
    free = np.flatnonzero(space.free_dofs)
    x, report = operator.solve(rhs[free])
    coeff = np.zeros(space.n_dofs)
    coeff[free] = x
    return DiscreteFunction(space, coeff), report


class LinearGradientGoalProblem(GoalProblem):
    """Poisson with gradient-field load and linear gradient-field goal.

    Primal F(v) = int f_vec . grad(v), dual G(v) = int g_vec . grad(v), and
    goal value G(u_H).  The fields must be constant on every element.
    """

    def __init__(self, name: str, initial_mesh: Triangulation, f_field, g_field,
                 combination: str = "separate", rel_tol: float = 1e-10):
        super().__init__(initial_mesh, combination)
        self.name = name
        self.f_field = f_field
        self.g_field = g_field
        self.rel_tol = rel_tol

    def setup(self, space: FeSpace) -> dict:
        matrix = assemble_stiffness(space)
        operator = _free_operator(space, matrix, self.rel_tol)
        f_elem = piecewise_constant_field(space, self.f_field)
        g_elem = piecewise_constant_field(space, self.g_field)
        return {
            "space": space,
            "matrix": matrix,
            "operator": operator,
            "dual_operator": operator,
            "f_elem": f_elem,
            "g_elem": g_elem,
            "load": assemble_load_gradient(space, f_elem),
            "goal_vector": assemble_load_gradient(space, g_elem),
        }

    def solve_primal(self, ctx):
        return _solve_free(ctx["space"], ctx["operator"], ctx["load"])

    def solve_dual(self, ctx, u):
        return _solve_free(ctx["space"], ctx["dual_operator"], ctx["goal_vector"])

    def indicators(self, ctx, u, z):
        space = ctx["space"]
        mu = estimate_poisson(space, u, GradientLoad(ctx["f_elem"]))
        nu = estimate_poisson(space, z, GradientLoad(ctx["g_elem"]))
        return mu, nu

    def goal(self, ctx, u) -> float:
        return float(ctx["goal_vector"] @ u.coefficients)


class ManufacturedGoalProblem(GoalProblem):
    """Unit-square Poisson with known solution sin(pi x) sin(pi y), goal int u."""

    def __init__(self, combination: str = "separate", rel_tol: float = 1e-10):
        # Start past the two-element mesh so measured constants are meaningful
        # from the first levels (and the space is nonempty for p = 1).
        super().__init__(uniform_refine(unit_square(), 3), combination)
        self.name = "manufactured"
        self.rel_tol = rel_tol
        self.exact_goal = 4.0 / np.pi**2

    @staticmethod
    def u_exact(x: np.ndarray) -> np.ndarray:
        return np.sin(np.pi * x[:, 0]) * np.sin(np.pi * x[:, 1])

    @staticmethod
    def grad_u_exact(x: np.ndarray) -> np.ndarray:
        sx, cx = np.sin(np.pi * x[:, 0]), np.cos(np.pi * x[:, 0])
        sy, cy = np.sin(np.pi * x[:, 1]), np.cos(np.pi * x[:, 1])
        return np.pi * np.column_stack([cx * sy, sx * cy])

    @staticmethod
    def f(x: np.ndarray) -> np.ndarray:
        return 2.0 * np.pi**2 * np.sin(np.pi * x[:, 0]) * np.sin(np.pi * x[:, 1])

    def setup(self, space: FeSpace) -> dict:
        matrix = assemble_stiffness(space)
        operator = _free_operator(space, matrix, self.rel_tol)
        return {
            "space": space,
            "matrix": matrix,
            "operator": operator,
            "dual_operator": operator,
            "load": assemble_load_scalar(space, self.f),
            "goal_vector": assemble_load_scalar(space, 1.0),
        }

    def solve_primal(self, ctx):
        return _solve_free(ctx["space"], ctx["operator"], ctx["load"])

    def solve_dual(self, ctx, u):
        return _solve_free(ctx["space"], ctx["dual_operator"], ctx["goal_vector"])

    def indicators(self, ctx, u, z):
        space = ctx["space"]
        mu = estimate_poisson(space, u, ScalarLoad(self.f))
        nu = estimate_poisson(space, z, ScalarLoad(1.0, polynomial=True))
        return mu, nu

    def goal(self, ctx, u) -> float:
        return float(ctx["goal_vector"] @ u.coefficients)


GOAL_WEIGHT_CENTER = np.array([0.5, 0.5])
GOAL_WEIGHT_SHIFT = 1e-2


def goal_weight(x: np.ndarray) -> np.ndarray:
    """lambda_y(x) = 1 / (1e-2 + ||x - y||^2) with y = (0.5, 0.5)."""
    d = x - GOAL_WEIGHT_CENTER
    return 1.0 / (GOAL_WEIGHT_SHIFT + np.einsum("nd,nd->n", d, d))


def goal_weight_gradient(x: np.ndarray) -> np.ndarray:
    """grad lambda_y(x) = -2 (x - y) lambda_y(x)^2."""
    d = x - GOAL_WEIGHT_CENTER
    lam = 1.0 / (GOAL_WEIGHT_SHIFT + np.einsum("nd,nd->n", d, d))
    return -2.0 * d * (lam**2)[:, None]


class LshapeQuadraticGoalProblem(GoalProblem):
    """L-shape Poisson with f = 1 and quadratic gradient-weighted goal.

    Goal G(u) = 1/2 int lambda_y |grad u|^2; the linearized dual problem has
    right-hand side int lambda_y grad(u_H) . grad(v), assembled after the
    primal solve.
    """

    def __init__(self, combination: str = "product_form", rel_tol: float = 1e-10):
        if combination not in ("product_form", "symmetric"):
            raise ProblemError("combination must be product_form or symmetric")
        super().__init__(l_shape(), combination)
        self.name = "lshape-quadratic"
        self.rel_tol = rel_tol

    def setup(self, space: FeSpace) -> dict:
        matrix = assemble_stiffness(space)
        operator = _free_operator(space, matrix, self.rel_tol)
        return {
            "space": space,
            "matrix": matrix,
            "operator": operator,
            "dual_operator": operator,
            "load": assemble_load_scalar(space, 1.0, exactness=2 * space.degree),
        }

    def solve_primal(self, ctx):
        return _solve_free(ctx["space"], ctx["operator"], ctx["load"])

    def solve_dual(self, ctx, u):
        rhs = assemble_load_weighted_gradient(ctx["space"], goal_weight, u)
        return _solve_free(ctx["space"], ctx["dual_operator"], rhs)

    def indicators(self, ctx, u, z):
        space = ctx["space"]
        mu = estimate_poisson(space, u, ScalarLoad(1.0, polynomial=True))
        nu = estimate_poisson(
            space, z, WeightedGradientDual(goal_weight, goal_weight_gradient, u)
        )
        return mu, nu

    def goal(self, ctx, u) -> float:
        space = ctx["space"]
        exact = 2 * space.degree + 4
        grads = eval_gradients(u, exact)
        wq = pointwise_values(space, goal_weight, exact)
        vals = wq * np.einsum("tqd,tqd->tq", grads, grads)
        return 0.5 * integrate(space, vals, exact)


def default_semilinear_goal_region(x: np.ndarray) -> np.ndarray:
    """Indicator of the quarter disk ||x|| < 1/2 in the unit square."""
    return (np.einsum("nd,nd->n", x, x) < 0.25).astype(float)


class SemilinearGoalProblem(GoalProblem):
    """Semilinear diffusion with monotone reaction b(u) and linear goal int g u."""

    def __init__(self, b=None, bprime=None, matrix=None, f=1.0, g=None,
                 combination: str = "product_form", rel_tol: float = 1e-10,
                 newton_tol: float = 1e-10):
        if combination not in ("product_form", "symmetric", "separate"):
            raise ProblemError("invalid combination mode")
        super().__init__(unit_square(), combination)
        self.name = "semilinear"
        self.b = b if b is not None else (lambda s: s**3)
        self.bprime = bprime if bprime is not None else (lambda s: 3.0 * s**2)
        self.matrix = matrix
        self.f = f
        self.g = g if g is not None else default_semilinear_goal_region
        self.rel_tol = rel_tol
        self.newton_tol = newton_tol

    def setup(self, space: FeSpace) -> dict:
        # The default goal region is an indicator function; sample it with a
        # high-order rule so data resolution trails the discretization error.
        return {
            "space": space,
            "goal_vector": assemble_load_scalar(space, self.g, exactness=20),
        }

    def solve_primal(self, ctx):
        space = ctx["space"]
        data = {"b": self.b, "bprime": self.bprime, "f": self.f, "A": self.matrix}
        u, history = newton_semilinear(space, data, tol=self.newton_tol)
        report = SolveReport(len(history) - 1, history[-1], 0.0)
        return u, report

    def solve_dual(self, ctx, u):
        space = ctx["space"]
        jac = assemble_stiffness(space, self.matrix) + assemble_mass_weighted(
            space, PointwiseComposition(self.bprime, u)
        )
        operator = _free_operator(space, jac, self.rel_tol)
        ctx["dual_operator"] = operator
        ctx["dual_matrix"] = jac
        return _solve_free(space, operator, ctx["goal_vector"])

    def indicators(self, ctx, u, z):
        space = ctx["space"]
        mu = estimate_poisson(space, u, SemilinearPrimal(self.b, self.f, self.matrix))
        nu = estimate_poisson(
            space, z, SemilinearDual(self.bprime, self.g, u, self.matrix)
        )
        return mu, nu

    def goal(self, ctx, u) -> float:
        return float(ctx["goal_vector"] @ u.coefficients)


# ---------------------------------------------------------------------------
# Named constructors.
# ---------------------------------------------------------------------------

MS_LINEAR_LINES = (0.5, 1.5)


def ms_linear_f(x: np.ndarray) -> np.ndarray:
    out = np.zeros_like(x)
    out[x[:, 0] + x[:, 1] < 0.5, 0] = -1.0
    return out


def ms_linear_g(x: np.ndarray) -> np.ndarray:
    out = np.zeros_like(x)
    out[x[:, 0] + x[:, 1] > 1.5, 0] = 1.0
    return out


def _resolves_lines(mesh: Triangulation, lines) -> bool:
    """True when no element interior straddles any line x0 + x1 = c."""
    s = mesh.vertices[mesh.triangles].sum(axis=2)
    for c in lines:
        d = s - c
        straddles = (d.max(axis=1) > 1e-12) & (d.min(axis=1) < -1e-12)
        if straddles.any():
            return False
    return True


def ms_linear_mesh() -> Triangulation:
    """Unit-square mesh refined uniformly until the data lines are mesh lines."""
    mesh = unit_square()
    for _ in range(8):
        if _resolves_lines(mesh, MS_LINEAR_LINES):
            return mesh
        mesh = uniform_refine(mesh, 1)
    raise MeshError("could not align the initial mesh with the data lines")


def problem_ms_linear(combination: str = "separate") -> LinearGradientGoalProblem:
    """Unit-square problem with piecewise-constant gradient data and goal."""
    return LinearGradientGoalProblem(
        "ms-linear", ms_linear_mesh(), ms_linear_f, ms_linear_g, combination
    )


def problem_lshape_quadratic(combination: str = "product_form") -> LshapeQuadraticGoalProblem:
    return LshapeQuadraticGoalProblem(combination)


def problem_semilinear(b=None, bprime=None, matrix=None, f=1.0, g=None,
                       combination: str = "product_form") -> SemilinearGoalProblem:
    return SemilinearGoalProblem(b, bprime, matrix, f, g, combination)


def problem_manufactured(combination: str = "separate") -> ManufacturedGoalProblem:
    return ManufacturedGoalProblem(combination)


def by_name(name: str, combination: str | None = None) -> GoalProblem:
    """Problem instance from its CLI name, with an optional combination override."""
    if name == "ms-linear":
        return problem_ms_linear(combination or "separate")
    if name == "lshape-quadratic":
        return problem_lshape_quadratic(combination or "product_form")
    if name == "semilinear":
        return problem_semilinear(combination=combination or "product_form")
    if name == "manufactured":
        return problem_manufactured(combination or "separate")
    raise ProblemError(
        f"unknown problem {name!r}; valid names: {', '.join(PROBLEM_NAMES)}"
    )
