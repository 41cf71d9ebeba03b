"""Conforming Lagrange spaces S^p_0 on triangulations, p = 1, 2, 3.

Degrees of freedom are numbered vertices first, then edge nodes (edges
sorted by vertex pair, nodes within an edge ordered from the lower-index
vertex), then element-interior nodes.  Dirichlet constraints are handled
by symmetric elimination against ``FeSpace.free_dofs``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
import scipy.sparse as sp

from goafem.mesh import Triangulation
from goafem.quadrature import triangle_rule


class FeSpaceError(ValueError):
    """Invalid space construction or evaluation request."""


# ---------------------------------------------------------------------------
# Reference shape functions in barycentric coordinates.
# Local order: 3 vertex nodes, then (p-1) nodes per local edge k (the edge
# opposite vertex k, nodes ordered toward vertex (k+2)%3), then interior.
# ---------------------------------------------------------------------------

def local_nodes(degree: int) -> np.ndarray:
    """Barycentric coordinates of the local Lagrange nodes."""
    eye = np.eye(3)
    nodes = [eye[0], eye[1], eye[2]]
    if degree == 1:
        return np.array(nodes)
    for k in range(3):
        a, b = (k + 1) % 3, (k + 2) % 3
        if degree == 2:
            lam = np.zeros(3)
            lam[a] = lam[b] = 0.5
            nodes.append(lam)
        else:
            lam = np.zeros(3)
            lam[a], lam[b] = 2.0 / 3.0, 1.0 / 3.0
            nodes.append(lam.copy())
            lam[a], lam[b] = 1.0 / 3.0, 2.0 / 3.0
            nodes.append(lam)
    if degree == 3:
        nodes.append(np.full(3, 1.0 / 3.0))
    return np.array(nodes)


def n_local_dofs(degree: int) -> int:
    return (degree + 1) * (degree + 2) // 2


def shape_values(degree: int, lam: np.ndarray) -> np.ndarray:
    """Shape function values; lam has shape (..., 3), result (..., nloc)."""
    lam = np.asarray(lam, dtype=float)
    l0, l1, l2 = lam[..., 0], lam[..., 1], lam[..., 2]
    ls = (l0, l1, l2)
    if degree == 1:
        return np.stack(ls, axis=-1)
    cols = []
    if degree == 2:
        cols += [l * (2.0 * l - 1.0) for l in ls]
        for k in range(3):
            a, b = ls[(k + 1) % 3], ls[(k + 2) % 3]
            cols.append(4.0 * a * b)
    elif degree == 3:
        cols += [0.5 * l * (3.0 * l - 1.0) * (3.0 * l - 2.0) for l in ls]
        for k in range(3):
            a, b = ls[(k + 1) % 3], ls[(k + 2) % 3]
            cols.append(4.5 * a * b * (3.0 * a - 1.0))
            cols.append(4.5 * a * b * (3.0 * b - 1.0))
        cols.append(27.0 * l0 * l1 * l2)
    else:
        raise FeSpaceError("degree must be 1, 2 or 3")
    return np.stack(cols, axis=-1)


def shape_gradients(degree: int, lam: np.ndarray) -> np.ndarray:
    """Formal barycentric partials d(phi)/d(lambda_k); shape (..., nloc, 3)."""
    lam = np.asarray(lam, dtype=float)
    base = lam.shape[:-1]
    nloc = n_local_dofs(degree)
    out = np.zeros(base + (nloc, 3))
    ls = [lam[..., i] for i in range(3)]
    if degree == 1:
        for i in range(3):
            out[..., i, i] = 1.0
        return out
    if degree == 2:
        for i in range(3):
            out[..., i, i] = 4.0 * ls[i] - 1.0
        for k in range(3):
            a, b = (k + 1) % 3, (k + 2) % 3
            out[..., 3 + k, a] = 4.0 * ls[b]
            out[..., 3 + k, b] = 4.0 * ls[a]
        return out
    for i in range(3):
        out[..., i, i] = 0.5 * (27.0 * ls[i] ** 2 - 18.0 * ls[i] + 2.0)
    for k in range(3):
        a, b = (k + 1) % 3, (k + 2) % 3
        ja, jb = 3 + 2 * k, 3 + 2 * k + 1
        out[..., ja, a] = 4.5 * ls[b] * (6.0 * ls[a] - 1.0)
        out[..., ja, b] = 4.5 * ls[a] * (3.0 * ls[a] - 1.0)
        out[..., jb, a] = 4.5 * ls[b] * (3.0 * ls[b] - 1.0)
        out[..., jb, b] = 4.5 * ls[a] * (6.0 * ls[b] - 1.0)
    out[..., 9, 0] = 27.0 * ls[1] * ls[2]
    out[..., 9, 1] = 27.0 * ls[0] * ls[2]
    out[..., 9, 2] = 27.0 * ls[0] * ls[1]
    return out


def shape_hessians(degree: int, lam: np.ndarray) -> np.ndarray:
    """Formal second barycentric partials; shape (..., nloc, 3, 3)."""
    lam = np.asarray(lam, dtype=float)
    base = lam.shape[:-1]
    nloc = n_local_dofs(degree)
    out = np.zeros(base + (nloc, 3, 3))
    ls = [lam[..., i] for i in range(3)]
    if degree == 1:
        return out
    if degree == 2:
        for i in range(3):
            out[..., i, i, i] = 4.0
        for k in range(3):
            a, b = (k + 1) % 3, (k + 2) % 3
            out[..., 3 + k, a, b] = 4.0
            out[..., 3 + k, b, a] = 4.0
        return out
    for i in range(3):
        out[..., i, i, i] = 27.0 * ls[i] - 9.0
    for k in range(3):
        a, b = (k + 1) % 3, (k + 2) % 3
        ja, jb = 3 + 2 * k, 3 + 2 * k + 1
        out[..., ja, a, a] = 27.0 * ls[b]
        out[..., ja, a, b] = out[..., ja, b, a] = 4.5 * (6.0 * ls[a] - 1.0)
        out[..., jb, b, b] = 27.0 * ls[a]
        out[..., jb, a, b] = out[..., jb, b, a] = 4.5 * (6.0 * ls[b] - 1.0)
    out[..., 9, 0, 1] = out[..., 9, 1, 0] = 27.0 * ls[2]
    out[..., 9, 0, 2] = out[..., 9, 2, 0] = 27.0 * ls[1]
    out[..., 9, 1, 2] = out[..., 9, 2, 1] = 27.0 * ls[0]
    return out


@lru_cache(maxsize=None)
def _basis_tables(degree: int, exactness: int):
    rule = triangle_rule(exactness)
    lam = rule.points
    return shape_values(degree, lam), shape_gradients(degree, lam), shape_hessians(degree, lam)


# ---------------------------------------------------------------------------
# Space and discrete functions.
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FeSpace:
    """Lagrange space of degree p with homogeneous Dirichlet data on the boundary."""

    mesh: Triangulation
    degree: int
    element_dofs: np.ndarray = field(init=False, repr=False, compare=False)
    dof_coordinates: np.ndarray = field(init=False, repr=False, compare=False)
    dirichlet_mask: np.ndarray = field(init=False, repr=False, compare=False)
    grad_lambda: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        mesh, p = self.mesh, self.degree
        if p not in (1, 2, 3):
            raise FeSpaceError("degree must be 1, 2 or 3")
        nv, ne, nt = mesh.n_vertices, mesh.n_edges, mesh.n_elements
        nloc = n_local_dofs(p)
        edofs = np.empty((nt, nloc), dtype=np.int64)
        edofs[:, :3] = mesh.triangles
        if p >= 2:
            per_edge = p - 1
            for k in range(3):
                a = mesh.triangles[:, (k + 1) % 3]
                b = mesh.triangles[:, (k + 2) % 3]
                base = nv + mesh.tri_edges[:, k] * per_edge
                if p == 2:
                    edofs[:, 3 + k] = base
                else:
                    fwd = a < b
                    edofs[:, 3 + 2 * k] = np.where(fwd, base, base + 1)
                    edofs[:, 3 + 2 * k + 1] = np.where(fwd, base + 1, base)
        if p == 3:
            edofs[:, 9] = nv + 2 * ne + np.arange(nt)
        n_dofs = nv + (p - 1) * ne + (1 if p == 3 else 0) * nt

        coords = np.empty((n_dofs, 2))
        nodes = local_nodes(p)
        xy = np.einsum("lk,tkd->tld", nodes, mesh.vertices[mesh.triangles])
        coords[edofs.reshape(-1)] = xy.reshape(-1, 2)

        dirichlet = np.zeros(n_dofs, dtype=bool)
        dirichlet[: nv][mesh.boundary_vertex_mask()] = True
        if p >= 2:
            b_edges = mesh.edge_index_of(mesh.boundary_edges)
            for j in range(p - 1):
                dirichlet[nv + b_edges * (p - 1) + j] = True

        pts = mesh.vertices[mesh.triangles]
        e1 = pts[:, 1] - pts[:, 0]
        e2 = pts[:, 2] - pts[:, 0]
        det = (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])[:, None]
        g1 = np.column_stack([e2[:, 1], -e2[:, 0]]) / det
        g2 = np.column_stack([-e1[:, 1], e1[:, 0]]) / det
        glam = np.stack([-g1 - g2, g1, g2], axis=1)

        for name, value in (
            ("element_dofs", edofs),
            ("dof_coordinates", coords),
            ("dirichlet_mask", dirichlet),
            ("grad_lambda", glam),
        ):
            value.setflags(write=False)
            object.__setattr__(self, name, value)

    @property
    def n_dofs(self) -> int:
        return len(self.dof_coordinates)

    @property
    def free_dofs(self) -> np.ndarray:
        return ~self.dirichlet_mask

    @property
    def dim(self) -> int:
        """Dimension of S^p_0, i.e. the number of non-Dirichlet DOFs."""
        return int(np.count_nonzero(self.free_dofs))

    def metric(self) -> np.ndarray:
        """Per-element Gram matrices grad_lambda . grad_lambda, shape (nt, 3, 3)."""
        return np.einsum("tkd,tjd->tkj", self.grad_lambda, self.grad_lambda)

    def barycentric(self, elements: np.ndarray, xy: np.ndarray) -> np.ndarray:
        """Barycentric coordinates of physical points inside given elements.

        ``elements`` has shape (m,), ``xy`` shape (m, ..., 2).
        """
        p0 = self.mesh.vertices[self.mesh.triangles[elements, 0]]
        diff = xy - p0.reshape((len(p0),) + (1,) * (xy.ndim - 2) + (2,))
        g = self.grad_lambda[elements]
        l1 = np.einsum("m...d,md->m...", diff, g[:, 1])
        l2 = np.einsum("m...d,md->m...", diff, g[:, 2])
        return np.stack([1.0 - l1 - l2, l1, l2], axis=-1)


@dataclass(frozen=True)
class DiscreteFunction:
    """Coefficient vector over the DOFs of a space."""

    space: FeSpace
    coefficients: np.ndarray

    def __post_init__(self):
        coeff = np.ascontiguousarray(np.asarray(self.coefficients, dtype=float))
        if coeff.shape != (self.space.n_dofs,):
            raise FeSpaceError("coefficient length must equal the DOF count")
        coeff.setflags(write=False)
        object.__setattr__(self, "coefficients", coeff)


def zero_function(space: FeSpace) -> DiscreteFunction:
    return DiscreteFunction(space, np.zeros(space.n_dofs))


def interpolate(space: FeSpace, fn) -> DiscreteFunction:
    """Nodal interpolation of ``fn``; ``fn`` maps an (n, 2) array to (n,) values."""
    return DiscreteFunction(space, np.asarray(fn(space.dof_coordinates), dtype=float))


# ---------------------------------------------------------------------------
# Evaluation.
# ---------------------------------------------------------------------------

def eval_values(df: DiscreteFunction, exactness: int) -> np.ndarray:
    """Values at the quadrature points of every element; shape (nt, nq)."""
    vals, _, _ = _basis_tables(df.space.degree, exactness)
    coeff = df.coefficients[df.space.element_dofs]
    return np.einsum("tl,ql->tq", coeff, vals)


def eval_gradients(df: DiscreteFunction, exactness: int) -> np.ndarray:
    """Gradients at the quadrature points of every element; shape (nt, nq, 2)."""
    _, grads, _ = _basis_tables(df.space.degree, exactness)
    coeff = df.coefficients[df.space.element_dofs]
    return np.einsum("tl,qlk,tkd->tqd", coeff, grads, df.space.grad_lambda)


def eval_laplacians(df: DiscreteFunction, exactness: int, matrix=None) -> np.ndarray:
    """div(A grad) at quadrature points for constant A (identity by default)."""
    _, _, hess = _basis_tables(df.space.degree, exactness)
    coeff = df.coefficients[df.space.element_dofs]
    g = df.space.grad_lambda
    if matrix is None:
        metric = np.einsum("tkd,tjd->tkj", g, g)
    else:
        metric = np.einsum("tkd,de,tje->tkj", g, np.asarray(matrix, dtype=float), g)
    return np.einsum("tl,qlkj,tkj->tq", coeff, hess, metric)


def eval_at_points(df: DiscreteFunction, elements: np.ndarray, xy: np.ndarray):
    """Values and gradients of ``df`` at physical points within given elements.

    ``elements`` has shape (m,) and ``xy`` shape (m, k, 2); the points must
    lie in the closure of the corresponding element.
    """
    space = df.space
    lam = space.barycentric(elements, xy)
    vals = shape_values(space.degree, lam)
    grads = shape_gradients(space.degree, lam)
    coeff = df.coefficients[space.element_dofs[elements]]
    values = np.einsum("ml,mkl->mk", coeff, vals)
    gradients = np.einsum("ml,mklj,mjd->mkd", coeff, grads, space.grad_lambda[elements])
    return values, gradients


def eval_element(df: DiscreteFunction, element: int, points):
    """Values, gradients and Laplacians at barycentric points of one element."""
    space = df.space
    if not 0 <= element < space.mesh.n_elements:
        raise FeSpaceError("element index out of range")
    lam = np.asarray(points, dtype=float).reshape(-1, 3)
    coeff = df.coefficients[space.element_dofs[element]]
    g = space.grad_lambda[element]
    vals = shape_values(space.degree, lam) @ coeff
    grads = np.einsum("l,qlk,kd->qd", coeff, shape_gradients(space.degree, lam), g)
    metric = g @ g.T
    laps = np.einsum("l,qlkj,kj->q", coeff, shape_hessians(space.degree, lam), metric)
    return vals, grads, laps


# ---------------------------------------------------------------------------
# Assembly.
# ---------------------------------------------------------------------------

def _scatter(space: FeSpace, element_matrices: np.ndarray) -> sp.csr_matrix:
    edofs = space.element_dofs
    nloc = edofs.shape[1]
    rows = np.repeat(edofs, nloc, axis=1).reshape(-1)
    cols = np.tile(edofs, (1, nloc)).reshape(-1)
    mat = sp.coo_matrix(
        (element_matrices.reshape(-1), (rows, cols)), shape=(space.n_dofs, space.n_dofs)
    )
    return mat.tocsr()


def _symmetrize(element_matrices: np.ndarray) -> np.ndarray:
    """Mirror the upper triangle so element matrices are bitwise symmetric."""
    iu, ju = np.triu_indices(element_matrices.shape[1], k=1)
    out = element_matrices.copy()
    out[:, ju, iu] = out[:, iu, ju]
    return out


def _weight_values(space: FeSpace, weight, exactness: int) -> np.ndarray:
    """Pointwise weight evaluated at the quadrature points, shape (nt, nq).

    Accepts None (1), a scalar, an (n, 2) -> (n,) callable, a
    DiscreteFunction, or any object with ``element_values(exactness)``.
    """
    rule = triangle_rule(exactness)
    nt, nq = space.mesh.n_elements, rule.n_points
    if weight is None:
        return np.ones((nt, nq))
    if isinstance(weight, DiscreteFunction):
        return eval_values(weight, exactness)
    if np.isscalar(weight):
        return np.full((nt, nq), float(weight))
    if hasattr(weight, "element_values"):
        return np.asarray(weight.element_values(exactness), dtype=float).reshape(nt, nq)
    xy = np.einsum("qk,tkd->tqd", rule.points, space.mesh.vertices[space.mesh.triangles])
    return np.asarray(weight(xy.reshape(-1, 2)), dtype=float).reshape(nt, nq)


def pointwise_values(space: FeSpace, fn, exactness: int) -> np.ndarray:
    """Public face of :func:`_weight_values`."""
    return _weight_values(space, fn, exactness)


def quadrature_points_xy(space: FeSpace, exactness: int) -> np.ndarray:
    """Physical quadrature points per element, shape (nt, nq, 2)."""
    rule = triangle_rule(exactness)
    return np.einsum("qk,tkd->tqd", rule.points, space.mesh.vertices[space.mesh.triangles])


def assemble_stiffness(space: FeSpace, coefficient=None) -> sp.csr_matrix:
    """Matrix of (i, j) -> sum_T int_T c grad(phi_i) . grad(phi_j).

    ``coefficient`` is None (c = 1), a per-element array, or a constant
    2x2 symmetric matrix.
    """
    p = space.degree
    rule = triangle_rule(2 * p)
    _, grads, _ = _basis_tables(p, 2 * p)
    struct = np.einsum("q,qlk,qmj->lmkj", rule.weights, grads, grads)
    g = space.grad_lambda
    if coefficient is not None and np.ndim(coefficient) == 2:
        metric = np.einsum("tkd,de,tje->tkj", g, np.asarray(coefficient, dtype=float), g)
        ke = np.einsum("lmkj,tkj,t->tlm", struct, metric, space.mesh.areas)
    else:
        metric = np.einsum("tkd,tjd->tkj", g, g)
        scale = space.mesh.areas
        if coefficient is not None:
            scale = scale * np.asarray(coefficient, dtype=float)
        ke = np.einsum("lmkj,tkj,t->tlm", struct, metric, scale)
    return _scatter(space, _symmetrize(ke))


def assemble_mass_weighted(space: FeSpace, weight) -> sp.csr_matrix:
    """Matrix of (i, j) -> sum_T int_T w phi_i phi_j for a pointwise weight."""
    p = space.degree
    exact = 2 * p if (weight is None or np.isscalar(weight)) else 2 * p + 4
    rule = triangle_rule(exact)
    vals, _, _ = _basis_tables(p, exact)
    wq = _weight_values(space, weight, exact) * rule.weights
    ke = np.einsum("tq,ql,qm,t->tlm", wq, vals, vals, space.mesh.areas)
    return _scatter(space, _symmetrize(ke))


def assemble_load_scalar(space: FeSpace, f, exactness: int | None = None) -> np.ndarray:
    """Vector of i -> sum_T int_T f phi_i."""
    p = space.degree
    exact = exactness if exactness is not None else 2 * p + 4
    rule = triangle_rule(exact)
    vals, _, _ = _basis_tables(p, exact)
    fq = _weight_values(space, f, exact) * rule.weights
    fe = np.einsum("tq,ql,t->tl", fq, vals, space.mesh.areas)
    out = np.zeros(space.n_dofs)
    np.add.at(out, space.element_dofs.reshape(-1), fe.reshape(-1))
    return out


def piecewise_constant_field(space: FeSpace, vf) -> np.ndarray:
    """Per-element constant vectors of a piecewise-constant vector field.

    Raises if ``vf`` is not constant on some element (sampled at four
    strictly interior points).
    """
    mesh = space.mesh
    samples = np.array(
        [
            [1 / 3, 1 / 3, 1 / 3],
            [0.64, 0.18, 0.18],
            [0.18, 0.64, 0.18],
            [0.18, 0.18, 0.64],
        ]
    )
    xy = np.einsum("sk,tkd->tsd", samples, mesh.vertices[mesh.triangles])
    vals = np.asarray(vf(xy.reshape(-1, 2)), dtype=float).reshape(mesh.n_elements, 4, 2)
    if not np.all(np.abs(vals - vals[:, :1]) <= 1e-12):
        raise FeSpaceError("vector field is not constant per element of this mesh")
    return vals[:, 0]


def assemble_load_gradient(space: FeSpace, vf) -> np.ndarray:
    """Vector of i -> sum_T vf|_T . int_T grad(phi_i) for piecewise-constant vf."""
    field_vals = vf if isinstance(vf, np.ndarray) else piecewise_constant_field(space, vf)
    if field_vals.shape != (space.mesh.n_elements, 2):
        raise FeSpaceError("per-element field must have shape (n_elements, 2)")
    p = space.degree
    rule = triangle_rule(2 * p)
    _, grads, _ = _basis_tables(p, 2 * p)
    grad_int = np.einsum("q,qlk,tkd,t->tld", rule.weights, grads, space.grad_lambda,
                         space.mesh.areas)
    fe = np.einsum("tld,td->tl", grad_int, field_vals)
    out = np.zeros(space.n_dofs)
    np.add.at(out, space.element_dofs.reshape(-1), fe.reshape(-1))
    return out


def assemble_load_weighted_gradient(space: FeSpace, weight, df: DiscreteFunction) -> np.ndarray:
    """Vector of i -> sum_T int_T w grad(df) . grad(phi_i) (dual data for
    gradient-weighted goals)."""
    p = space.degree
    exact = 2 * p + 4
    rule = triangle_rule(exact)
    _, grads, _ = _basis_tables(p, exact)
    wq = _weight_values(space, weight, exact) * rule.weights
    gdf = eval_gradients(df, exact)
    fe = np.einsum("tq,tqd,qlk,tkd,t->tl", wq, gdf, grads, space.grad_lambda,
                   space.mesh.areas, optimize=True)
    out = np.zeros(space.n_dofs)
    np.add.at(out, space.element_dofs.reshape(-1), fe.reshape(-1))
    return out


def integrate(space: FeSpace, values: np.ndarray, exactness: int) -> float:
    """Integral over the domain of per-quadrature-point values (nt, nq)."""
    rule = triangle_rule(exactness)
    return float(np.einsum("tq,q,t->", values, rule.weights, space.mesh.areas))


# ---------------------------------------------------------------------------
# Transfer between nested spaces.
# ---------------------------------------------------------------------------

def prolongate(df: DiscreteFunction, fine_space: FeSpace) -> DiscreteFunction:
    """Represent a coarse function exactly on a refined mesh (nested spaces)."""
    from goafem.mesh import is_refinement_of

    if fine_space.degree != df.space.degree:
        raise FeSpaceError("prolongation requires equal polynomial degree")
    refmap = is_refinement_of(fine_space.mesh, df.space.mesh)
    mesh = fine_space.mesh
    nodes = local_nodes(fine_space.degree)
    xy = np.einsum("lk,tkd->tld", nodes, mesh.vertices[mesh.triangles])
    vals, _ = eval_at_points(df, refmap.fine_to_coarse, xy)
    coeff = np.zeros(fine_space.n_dofs)
    coeff[fine_space.element_dofs.reshape(-1)] = vals.reshape(-1)
    return DiscreteFunction(fine_space, coeff)


def prolongation_matrix(coarse: FeSpace, fine: FeSpace) -> sp.csr_matrix:
    """Sparse matrix P with P @ coarse_coefficients = fine coefficients."""
    from goafem.mesh import is_refinement_of

    if fine.degree != coarse.degree:
        raise FeSpaceError("prolongation requires equal polynomial degree")
    refmap = is_refinement_of(fine.mesh, coarse.mesh)
    mesh = fine.mesh
    nodes = local_nodes(fine.degree)
    xy = np.einsum("lk,tkd->tld", nodes, mesh.vertices[mesh.triangles])
    lam = coarse.barycentric(refmap.fine_to_coarse, xy)
    vals = shape_values(coarse.degree, lam)  # (nt_fine, nloc_fine, nloc_coarse)
    seen = np.zeros(fine.n_dofs, dtype=bool)
    rows, cols, data = [], [], []
    cdofs = coarse.element_dofs[refmap.fine_to_coarse]
    fdofs = fine.element_dofs
    for t in range(mesh.n_elements):
        for l, dof in enumerate(fdofs[t]):
            if seen[dof]:
                continue
            seen[dof] = True
            rows.extend([dof] * cdofs.shape[1])
            cols.extend(cdofs[t])
            data.extend(vals[t, l])
    return sp.coo_matrix((data, (rows, cols)), shape=(fine.n_dofs, coarse.n_dofs)).tocsr()


def energy_norm(space: FeSpace, coefficients: np.ndarray) -> float:
    """H1 seminorm of a coefficient vector via exact elementwise quadrature."""
    df = DiscreteFunction(space, coefficients)
    g = eval_gradients(df, 2 * space.degree)
    rule = triangle_rule(2 * space.degree)
    val = np.einsum("tqd,tqd,q,t->", g, g, rule.weights, space.mesh.areas)
    return float(np.sqrt(max(val, 0.0)))
