"""Residual refinement indicators, combinations, and data oscillation.

Per element T, an indicator has the structure

    xi(T)^2 = h_T^2 ||volume residual||_{L2(T)}^2
            + h_T ||normal-flux jump||_{L2(boundary of T inside the domain)}^2

with h_T = |T|^(1/2).  Every interior edge integral is computed once and
added to both adjacent elements; boundary edges contribute nothing.
"""
from __future__ import annotations

from dataclasses import dataclass
import numpy as np

from goafem.fespace import (
    DiscreteFunction,
    FeSpace,
    eval_at_points,
    eval_gradients,
    eval_laplacians,
    eval_values,
    piecewise_constant_field,
    pointwise_values,
    quadrature_points_xy,
)
from goafem.mesh import Triangulation
from goafem.quadrature import edge_rule, triangle_rule


class EstimatorError(ValueError):
    """Recipe/data mismatch or incompatible indicator fields."""


@dataclass(frozen=True)
class IndicatorField:
    """Nonnegative per-element refinement indicators on one mesh."""

    mesh: Triangulation
    values: np.ndarray

    def __post_init__(self):
        values = np.ascontiguousarray(np.asarray(self.values, dtype=float))
        if values.shape != (self.mesh.n_elements,):
            raise EstimatorError("one indicator per element required")
        if np.any(values < 0):
            raise EstimatorError("indicators must be nonnegative")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def squared(self) -> np.ndarray:
        return self.values**2

    @property
    def total(self) -> float:
        """Global value: l2 aggregate over all elements."""
        return float(np.sqrt(np.sum(self.values**2)))

    def aggregate(self, indices) -> float:
        """l2 aggregate over a subset of elements."""
        idx = np.asarray(indices, dtype=np.int64)
        return float(np.sqrt(np.sum(self.values[idx] ** 2)))


@dataclass(frozen=True)
class OscillationField:
    """Per-element squared oscillation values osc(T, D)^2."""

    mesh: Triangulation
    squared: np.ndarray

    def __post_init__(self):
        squared = np.ascontiguousarray(np.asarray(self.squared, dtype=float))
        if squared.shape != (self.mesh.n_elements,):
            raise EstimatorError("one value per element required")
        squared = np.maximum(squared, 0.0)
        squared.setflags(write=False)
        object.__setattr__(self, "squared", squared)

    @property
    def total_squared(self) -> float:
        return float(np.sum(self.squared))

    def aggregate_squared(self, indices) -> float:
        idx = np.asarray(indices, dtype=np.int64)
        return float(np.sum(self.squared[idx]))


# ---------------------------------------------------------------------------
# Estimator data recipes.
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ScalarLoad:
    """-Laplace(u) = f: residual Laplacian(u_H) + f, flux grad(u_H)."""

    f: object
    polynomial: bool = False


@dataclass(frozen=True)
class GradientLoad:
    """F(v) = int vf . grad(v) with piecewise-constant vf: flux grad(u_H) - vf."""

    field: object


@dataclass(frozen=True)
class WeightedGradientDual:
    """Dual of a gradient-weighted goal: data carries the primal solution.

    The dual problem is a(v, z) = int w grad(u_H) . grad(v), so the residual
    flux is w grad(u_H) - grad(z_H) and the volume residual its divergence
    Laplacian(z_H) - w Laplacian(u_H) - grad(w) . grad(u_H); the terms cancel
    as z_H resolves the dual solution.
    """

    weight: object
    grad_weight: object
    primal: DiscreteFunction


@dataclass(frozen=True)
class SemilinearPrimal:
    """div(A grad u) = b(u) - f: residual div(A grad u_H) - b(u_H) + f."""

    b: object
    f: object
    matrix: object = None


@dataclass(frozen=True)
class SemilinearDual:
    """Linearized dual of the semilinear problem at the primal solution."""

    bprime: object
    g: object
    primal: DiscreteFunction
    matrix: object = None


def _interior_edges(mesh: Triangulation):
    """Interior edge indices with their two adjacent elements (left, right)."""
    te = mesh.tri_edges.reshape(-1)
    order = np.argsort(te, kind="stable")
    tris = order // 3
    counts = np.bincount(te, minlength=mesh.n_edges)
    starts = np.concatenate([[0], np.cumsum(counts)])
    interior = np.flatnonzero(counts == 2)
    left = tris[starts[interior]]
    right = tris[starts[interior] + 1]
    return interior, left, right


def _assemble_field(space: FeSpace, volume_sq: np.ndarray, flux_at,
                    edge_exactness: int) -> IndicatorField:
    """Combine per-element volume terms with interior-edge jump terms.

    ``flux_at(side_elements, xy)`` returns the flux of the given side at
    physical points xy of shape (nE, nq, 2).
    """
    mesh = space.mesh
    interior, left, right = _interior_edges(mesh)
    squared = volume_sq.copy()
    if len(interior):
        a = mesh.vertices[mesh.edges[interior, 0]]
        b = mesh.vertices[mesh.edges[interior, 1]]
        tang = b - a
        length = np.linalg.norm(tang, axis=1)
        normal = np.column_stack([tang[:, 1], -tang[:, 0]]) / length[:, None]
        t, w = edge_rule(edge_exactness)
        xy = a[:, None, :] + t[None, :, None] * tang[:, None, :]
        jump = np.einsum(
            "ekd,ed->ek", flux_at(left, xy) - flux_at(right, xy), normal
        )
        integral = length * np.einsum("ek,k->e", jump**2, w)
        h = np.sqrt(mesh.areas)
        np.add.at(squared, left, h[left] * integral)
        np.add.at(squared, right, h[right] * integral)
    return IndicatorField(mesh, np.sqrt(np.maximum(squared, 0.0)))


def _volume_squared(space: FeSpace, residual_q: np.ndarray, exactness: int) -> np.ndarray:
    rule = triangle_rule(exactness)
    return space.mesh.areas**2 * np.einsum("tq,q->t", residual_q**2, rule.weights)


def estimate_poisson(space: FeSpace, df: DiscreteFunction, data) -> IndicatorField:
    """Residual indicators for ``df`` under the given data recipe."""
    if df.space.mesh is not space.mesh:
        raise EstimatorError("discrete function does not live on the given space")
    p = space.degree

    if isinstance(data, ScalarLoad):
        exact = 2 * p if data.polynomial else 2 * p + 4
        res = eval_laplacians(df, exact) + pointwise_values(space, data.f, exact)
        vol = _volume_squared(space, res, exact)

        def flux(elems, xy):
            _, grads = eval_at_points(df, elems, xy)
            return grads

        return _assemble_field(space, vol, flux, exact)

    if isinstance(data, GradientLoad):
        field = (
            data.field
            if isinstance(data.field, np.ndarray)
            else piecewise_constant_field(space, data.field)
        )
        if field.shape != (space.mesh.n_elements, 2):
            raise EstimatorError("per-element field must have shape (n_elements, 2)")
        exact = 2 * p
        res = eval_laplacians(df, exact)
        vol = _volume_squared(space, res, exact)

        def flux(elems, xy):
            _, grads = eval_at_points(df, elems, xy)
            return grads - field[elems][:, None, :]

        return _assemble_field(space, vol, flux, exact)

    if isinstance(data, WeightedGradientDual):
        u = data.primal
        if u.space.mesh is not space.mesh:
            raise EstimatorError("primal solution lives on a different mesh")
        exact = 2 * p + 4
        xyq = quadrature_points_xy(space, exact)
        flat = xyq.reshape(-1, 2)
        wq = np.asarray(data.weight(flat), dtype=float).reshape(xyq.shape[:2])
        gwq = np.asarray(data.grad_weight(flat), dtype=float).reshape(xyq.shape)
        res = (
            eval_laplacians(df, exact)
            - wq * eval_laplacians(u, exact)
            - np.einsum("tqd,tqd->tq", gwq, eval_gradients(u, exact))
        )
        vol = _volume_squared(space, res, exact)

        def flux(elems, xy):
            _, gz = eval_at_points(df, elems, xy)
            _, gu = eval_at_points(u, elems, xy)
            w = np.asarray(data.weight(xy.reshape(-1, 2)), dtype=float).reshape(xy.shape[:2])
            return gz - w[..., None] * gu

        return _assemble_field(space, vol, flux, exact)

    if isinstance(data, (SemilinearPrimal, SemilinearDual)):
        exact = 2 * p + 4
        matrix = None if data.matrix is None else np.asarray(data.matrix, dtype=float)
        div_part = eval_laplacians(df, exact, matrix)
        if isinstance(data, SemilinearPrimal):
            res = div_part - data.b(eval_values(df, exact)) + pointwise_values(
                space, data.f, exact
            )
        else:
            u = data.primal
            if u.space.mesh is not space.mesh:
                raise EstimatorError("primal solution lives on a different mesh")
            res = div_part - data.bprime(eval_values(u, exact)) * eval_values(
                df, exact
            ) + pointwise_values(space, data.g, exact)
        vol = _volume_squared(space, res, exact)

        def flux(elems, xy):
            _, grads = eval_at_points(df, elems, xy)
            if matrix is None:
                return grads
            return np.einsum("dj,ekj->ekd", matrix, grads)

        return _assemble_field(space, vol, flux, exact)

    raise EstimatorError(f"unknown estimator data recipe: {type(data).__name__}")


# ---------------------------------------------------------------------------
# Combination of primal/dual indicators.
# ---------------------------------------------------------------------------

COMBINATION_MODES = ("separate", "product_form", "symmetric")


def combine(mu: IndicatorField, nu: IndicatorField, mode: str):
    """Combine raw indicators (mu, nu) into the pair (eta, zeta).

    separate:     (eta, zeta) = (mu, nu)
    product_form: (eta, zeta) = (mu, sqrt(mu^2 + nu^2))
    symmetric:    eta = zeta = sqrt(mu^2 + nu^2)
    """
    if mu.mesh is not nu.mesh:
        raise EstimatorError("indicator fields live on different meshes")
    if mode == "separate":
        return mu, nu
    if mode == "product_form":
        return mu, IndicatorField(mu.mesh, np.hypot(mu.values, nu.values))
    if mode == "symmetric":
        root = IndicatorField(mu.mesh, np.hypot(mu.values, nu.values))
        return root, root
    raise EstimatorError(f"unknown combination mode {mode!r}")


def weighted_indicator(eta: IndicatorField, zeta: IndicatorField) -> IndicatorField:
    """rho(T)^2 = eta(T)^2 zeta^2 + eta^2 zeta(T)^2 (globally weighted)."""
    if eta.mesh is not zeta.mesh:
        raise EstimatorError("indicator fields live on different meshes")
    eta_sq = float(np.sum(eta.values**2))
    zeta_sq = float(np.sum(zeta.values**2))
    rho_sq = eta.squared * zeta_sq + eta_sq * zeta.squared
    return IndicatorField(eta.mesh, np.sqrt(rho_sq))


# ---------------------------------------------------------------------------
# Data oscillation.
# ---------------------------------------------------------------------------

def _monomials(q: int, t: np.ndarray) -> np.ndarray:
    """Scaled local monomials up to degree q at points t of shape (..., 2)."""
    x, y = t[..., 0], t[..., 1]
    cols = [np.ones_like(x)]
    if q >= 1:
        cols += [x, y]
    if q >= 2:
        cols += [x * x, x * y, y * y]
    if q >= 3:
        raise EstimatorError("oscillation projection implemented for q <= 2")
    return np.stack(cols, axis=-1)


def oscillation(space: FeSpace, data, q: int) -> OscillationField:
    """Elementwise |T| ||(1 - Pi_q) D||^2 with the L2 projection Pi_q."""
    if q < 0:
        raise EstimatorError("projection degree q must be nonnegative")
    exact = 2 * q + 6
    rule = triangle_rule(exact)
    mesh = space.mesh
    xy = quadrature_points_xy(space, exact)
    d_vals = pointwise_values(space, data, exact)
    centroid = mesh.centroids()
    h = np.sqrt(mesh.areas)
    t = (xy - centroid[:, None, :]) / h[:, None, None]
    m = _monomials(q, t)  # (nt, nq, k)
    w = rule.weights
    gram = np.einsum("tqi,tqj,q->tij", m, m, w)
    rhs = np.einsum("tqi,tq,q->ti", m, d_vals, w)
    coeff = np.linalg.solve(gram, rhs[..., None])[..., 0]
    res = d_vals - np.einsum("tqi,ti->tq", m, coeff)
    sq = mesh.areas**2 * np.einsum("tq,q->t", res**2, w)
    return OscillationField(mesh, sq)
