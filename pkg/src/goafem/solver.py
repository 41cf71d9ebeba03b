"""Linear SPD solves and the damped Newton loop for the semilinear problem."""
from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from goafem.fespace import (
    DiscreteFunction,
    FeSpace,
    assemble_load_scalar,
    assemble_mass_weighted,
    assemble_stiffness,
    eval_values,
)
from goafem.quadrature import triangle_rule

DIRECT_SOLVER_LIMIT = 200_000


class SolverError(RuntimeError):
    """Breakdown, non-SPD operator, or non-converged iteration."""


@dataclass(frozen=True)
class SolveReport:
    iterations: int
    relative_residual: float
    wall_time: float


class SpdOperator:
    """SPD operator with a reusable factorization (direct) or CG fallback."""

    def __init__(self, matrix: sp.spmatrix, rel_tol: float = 1e-10):
        if not 0.0 < rel_tol < 1.0:
            raise SolverError("rel_tol must lie in (0, 1)")
        matrix = matrix.tocsr()
        if matrix.shape[0] != matrix.shape[1]:
            raise SolverError("operator must be square")
        if matrix.nnz and abs(matrix - matrix.T).max() > 0.0:
            raise SolverError("operator is not symmetric")
        self.matrix = matrix
        self.rel_tol = rel_tol
        self._factor = None

    def solve(self, rhs: np.ndarray) -> tuple[np.ndarray, SolveReport]:
        start = time.perf_counter()
        n = self.matrix.shape[0]
        rhs = np.asarray(rhs, dtype=float)
        if rhs.shape != (n,):
            raise SolverError("right-hand side has wrong length")
        norm_b = float(np.linalg.norm(rhs))
        if n == 0 or norm_b == 0.0:
            return np.zeros(n), SolveReport(0, 0.0, time.perf_counter() - start)
        if n <= DIRECT_SOLVER_LIMIT:
            if self._factor is None:
                try:
                    self._factor = spla.splu(self.matrix.tocsc())
                except RuntimeError as exc:
                    raise SolverError(f"factorization failed: {exc}") from exc
            x = self._factor.solve(rhs)
            iterations = 0
        else:
            scale = 1.0 / np.sqrt(self.matrix.diagonal())
            d = sp.diags(scale)
            count = {"n": 0}

            def cb(_):
                count["n"] += 1

            y, info = spla.cg(
                d @ self.matrix @ d, d @ rhs, rtol=self.rel_tol * 1e-2, atol=0.0,
                maxiter=20 * n, callback=cb,
            )
            if info != 0:
                raise SolverError(f"conjugate gradients did not converge (info={info})")
            x = d @ y
            iterations = count["n"]
        residual = float(np.linalg.norm(self.matrix @ x - rhs)) / norm_b
        if not np.isfinite(residual) or residual > self.rel_tol:
            raise SolverError(
                f"solver residual {residual:.3e} exceeds tolerance {self.rel_tol:.3e}"
            )
        return x, SolveReport(iterations, residual, time.perf_counter() - start)


def solve_spd(operator, rhs: np.ndarray, rel_tol: float = 1e-10):
    """Solve an SPD system to ||Ax - b|| <= rel_tol ||b||; deterministic."""
    op = operator if isinstance(operator, SpdOperator) else SpdOperator(operator, rel_tol)
    return op.solve(rhs)


def solve_dirichlet(space: FeSpace, matrix: sp.spmatrix, rhs: np.ndarray,
                    rel_tol: float = 1e-10, operator: SpdOperator | None = None):
    """Solve on the free DOFs of a space and extend by zero; returns a function.

    Passing a pre-built ``operator`` (for the same restricted matrix) reuses
    its factorization; results are identical to a fresh solve.
    """
    free = np.flatnonzero(space.free_dofs)
    if operator is None:
        operator = SpdOperator(matrix[free][:, free].tocsr(), rel_tol)
    x, report = operator.solve(np.asarray(rhs, dtype=float)[free])
    coeff = np.zeros(space.n_dofs)
    coeff[free] = x
    return DiscreteFunction(space, coeff), report, operator


def newton_semilinear(space: FeSpace, data: dict, initial: DiscreteFunction | None = None,
                      tol: float = 1e-10, max_iter: int = 30):
    """Solve int A grad(u).grad(v) + b(u) v = int f v for all v in S^p_0.

    ``data`` holds callables ``b`` and ``bprime`` (with b' >= 0), the load
    ``f``, and optionally a constant SPD matrix ``A``.  Plain Newton with
    step halving; the initial iterate defaults to zero.
    """
    b, bprime = data["b"], data["bprime"]
    f, matrix = data["f"], data.get("A")
    p = space.degree
    exact = 2 * p + 4
    rule = triangle_rule(exact)
    free = np.flatnonzero(space.free_dofs)

    stiffness = assemble_stiffness(space, matrix)
    load = assemble_load_scalar(space, f)
    norm_f = float(np.linalg.norm(load[free]))
    if norm_f == 0.0:
        norm_f = 1.0

    u = initial if initial is not None else DiscreteFunction(space, np.zeros(space.n_dofs))
    coeff = u.coefficients.copy()

    def residual_vector(c):
        df = DiscreteFunction(space, c)
        bu = b(eval_values(df, exact))
        vals, _, _ = _basis(space, exact)
        fe = np.einsum("tq,q,ql,t->tl", bu, rule.weights, vals, space.mesh.areas)
        out = stiffness @ c - load
        np.add.at(out, space.element_dofs.reshape(-1), fe.reshape(-1))
        return out

    res = residual_vector(coeff)
    res_norm = float(np.linalg.norm(res[free]))
    history = [res_norm]
    for _ in range(max_iter):
        if res_norm <= tol * norm_f:
            return DiscreteFunction(space, coeff), history
        df = DiscreteFunction(space, coeff)
        bp = bprime(eval_values(df, exact))
        if np.any(bp < 0):
            raise SolverError("b' takes a negative value: monotonicity violated")
        jac = stiffness + assemble_mass_weighted(space, PointwiseComposition(bprime, df))
        op = SpdOperator(jac[free][:, free].tocsr(), rel_tol=1e-12)
        try:
            delta, _ = op.solve(-res[free])
        except SolverError as exc:
            raise SolverError(f"non-SPD Newton operator: {exc}") from exc
        step = 1.0
        for _ in range(30):
            trial = coeff.copy()
            trial[free] += step * delta
            trial_res = residual_vector(trial)
            trial_norm = float(np.linalg.norm(trial_res[free]))
            if trial_norm < res_norm or res_norm == 0.0:
                break
            step *= 0.5
        else:
            raise SolverError("Newton step halving failed to reduce the residual")
        coeff, res, res_norm = trial, trial_res, trial_norm
        history.append(res_norm)
    if res_norm <= tol * norm_f:
        return DiscreteFunction(space, coeff), history
    raise SolverError(f"Newton did not converge in {max_iter} iterations")


class PointwiseComposition:
    """Pointwise composition g(df(x)), usable as an assembly weight."""

    def __init__(self, g, df: DiscreteFunction):
        self.g = g
        self.df = df

    def element_values(self, exactness: int) -> np.ndarray:
        return self.g(eval_values(self.df, exactness))


def _basis(space: FeSpace, exactness: int):
    from goafem.fespace import _basis_tables

    return _basis_tables(space.degree, exactness)
