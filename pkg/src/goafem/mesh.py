"""Conforming triangle meshes with newest-vertex bisection (NVB) refinement.

A triangle is stored as a vertex-index triple ordered so that the edge
opposite the first-listed vertex is its refinement edge.  Bisection inserts
the midpoint of the refinement edge; the two non-refinement edges of the
parent become the refinement edges of the children.  Conforming closure
bisects any element whose refinement edge carries a hanging node until a
fixed point is reached.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

GEOM_TOL = 1e-14
AREA_RTOL = 1e-12


def _cross2(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0]


class MeshError(ValueError):
    """Invalid mesh data, invalid marked set, or non-refinement query."""


def _sorted_pairs(pairs: np.ndarray) -> np.ndarray:
    return np.sort(np.asarray(pairs, dtype=np.int64).reshape(-1, 2), axis=1)


def _edge_keys(pairs: np.ndarray, n_vertices: int) -> np.ndarray:
    return pairs[:, 0].astype(np.int64) * np.int64(n_vertices) + pairs[:, 1]


@dataclass(frozen=True)
class Triangulation:
    """Immutable conforming triangulation of a polygonal 2D domain.

    Parameters
    ----------
    vertices : (nv, 2) float array
        Vertex coordinates.
    triangles : (nt, 3) int array
        Vertex indices per triangle; the edge opposite the first-listed
        vertex is the refinement edge.  Counterclockwise orientation.
    boundary_edges : (nb, 2) int array
        Dirichlet boundary edges as sorted vertex pairs.
    generation : (nt,) int array
        Bisection count of each triangle since the initial mesh.
    domain_area : float
        Area of the covered domain (conservation is checked against it).
    """

    vertices: np.ndarray
    triangles: np.ndarray
    boundary_edges: np.ndarray
    generation: np.ndarray
    domain_area: float
    # Lineage for fast refinement maps; None for initial/loaded meshes.
    parent_mesh: "Triangulation | None" = field(default=None, repr=False, compare=False)
    parent_elements: np.ndarray | None = field(default=None, repr=False, compare=False)
    # Derived connectivity, filled in __post_init__.
    edges: np.ndarray = field(init=False, repr=False, compare=False)
    tri_edges: np.ndarray = field(init=False, repr=False, compare=False)
    areas: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        vertices = np.ascontiguousarray(np.asarray(self.vertices, dtype=float))
        triangles = np.ascontiguousarray(np.asarray(self.triangles, dtype=np.int64))
        boundary = _sorted_pairs(self.boundary_edges)
        boundary = boundary[np.lexsort((boundary[:, 1], boundary[:, 0]))]
        generation = np.ascontiguousarray(np.asarray(self.generation, dtype=np.int64))
        if vertices.ndim != 2 or vertices.shape[1] != 2:
            raise MeshError("vertices must be an (nv, 2) array")
        if triangles.ndim != 2 or triangles.shape[1] != 3:
            raise MeshError("triangles must be an (nt, 3) array")
        if triangles.size and (triangles.min() < 0 or triangles.max() >= len(vertices)):
            raise MeshError("triangle vertex index out of range")
        if generation.shape != (len(triangles),):
            raise MeshError("generation must have one entry per triangle")

        p = vertices[triangles]
        areas = 0.5 * _cross2(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])
        if np.any(areas <= GEOM_TOL):
            raise MeshError("all triangles must be counterclockwise with positive area")
        total = float(areas.sum())
        if abs(total - self.domain_area) > AREA_RTOL * max(1.0, abs(self.domain_area)):
            raise MeshError(
                f"triangle areas sum to {total!r}, expected domain area {self.domain_area!r}"
            )

        # Unique undirected edges; tri_edges[t, k] is the edge opposite local vertex k.
        per_tri = np.stack(
            [triangles[:, [1, 2]], triangles[:, [2, 0]], triangles[:, [0, 1]]], axis=1
        ).reshape(-1, 2)
        edges, inverse = np.unique(np.sort(per_tri, axis=1), axis=0, return_inverse=True)
        tri_edges = inverse.reshape(-1, 3)
        counts = np.bincount(tri_edges.ravel(), minlength=len(edges))
        if np.any(counts > 2):
            raise MeshError("an edge is shared by more than two triangles")
        computed_boundary = edges[counts == 1]
        if computed_boundary.shape != boundary.shape or not np.array_equal(
            computed_boundary, boundary
        ):
            raise MeshError(
                "declared boundary edges do not match the mesh boundary "
                "(hanging node or wrong boundary data)"
            )

        for name, value in (
            ("vertices", vertices),
            ("triangles", triangles),
            ("boundary_edges", boundary),
            ("generation", generation),
            ("edges", edges),
            ("tri_edges", tri_edges),
            ("areas", areas),
        ):
            value.setflags(write=False)
            object.__setattr__(self, name, value)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_elements(self) -> int:
        return len(self.triangles)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    def element_size(self) -> np.ndarray:
        """Mesh-size h_T = |T|^(1/2) per element."""
        return np.sqrt(self.areas)

    def centroids(self) -> np.ndarray:
        return self.vertices[self.triangles].mean(axis=1)

    def boundary_vertex_mask(self) -> np.ndarray:
        mask = np.zeros(self.n_vertices, dtype=bool)
        mask[self.boundary_edges.ravel()] = True
        return mask

    def edge_index_of(self, pairs: np.ndarray) -> np.ndarray:
        """Indices into ``edges`` of the given (sorted or unsorted) vertex pairs."""
        pairs = _sorted_pairs(pairs)
        keys = _edge_keys(self.edges, self.n_vertices)
        query = _edge_keys(pairs, self.n_vertices)
        idx = np.searchsorted(keys, query)
        idx = np.clip(idx, 0, len(keys) - 1)
        if np.any(keys[idx] != query):
            raise MeshError("pair is not an edge of the mesh")
        return idx

    def shape_regularity(self) -> float:
        """max over elements of diam(T) / |T|^(1/2)."""
        p = self.vertices[self.triangles]
        d01 = np.linalg.norm(p[:, 0] - p[:, 1], axis=1)
        d12 = np.linalg.norm(p[:, 1] - p[:, 2], axis=1)
        d20 = np.linalg.norm(p[:, 2] - p[:, 0], axis=1)
        diam = np.max(np.stack([d01, d12, d20]), axis=0)
        return float(np.max(diam / np.sqrt(self.areas)))


@dataclass(frozen=True)
class MarkedSet:
    """Validated set of element indices of one triangulation."""

    indices: np.ndarray

    @classmethod
    def of(cls, indices, mesh: Triangulation) -> "MarkedSet":
        idx = np.asarray(list(indices) if not isinstance(indices, np.ndarray) else indices,
                         dtype=np.int64).ravel()
        if idx.size and (idx.min() < 0 or idx.max() >= mesh.n_elements):
            raise MeshError("marked element index out of range")
        if len(np.unique(idx)) != len(idx):
            raise MeshError("duplicate marked element indices")
        idx = np.sort(idx)
        idx.setflags(write=False)
        return cls(idx)

    def __len__(self) -> int:
        return len(self.indices)

    def __iter__(self):
        return iter(self.indices.tolist())


@dataclass(frozen=True)
class Patch:
    """Elements whose closure intersects the closure of the center element."""

    center: int
    members: np.ndarray
    area: float


@dataclass(frozen=True)
class RefinementMap:
    """Element maps between a coarse mesh and one of its refinements."""

    fine_to_coarse: np.ndarray   # (nt_fine,) coarse ancestor of each fine element
    inherited_fine: np.ndarray   # fine elements identical to a coarse element
    new_fine: np.ndarray         # fine elements created by refinement
    kept_coarse: np.ndarray      # coarse elements still present in the fine mesh
    refined_coarse: np.ndarray   # coarse elements that were bisected

    def children_of(self, coarse_element: int) -> np.ndarray:
        return np.flatnonzero(self.fine_to_coarse == coarse_element)


def _marked_indices(mesh: Triangulation, marked) -> np.ndarray:
    if isinstance(marked, MarkedSet):
        marked = MarkedSet.of(marked.indices, mesh)
    else:
        marked = MarkedSet.of(marked, mesh)
    return marked.indices


def _refine_once(mesh: Triangulation, marked_idx: np.ndarray):
    """One bisection pass: split marked refinement edges, then conforming closure.

    Returns the refined mesh and the parent map (child -> parent element).
    """
    nv = mesh.n_vertices
    tri = mesh.triangles
    tri_edges = mesh.tri_edges
    split = np.zeros(mesh.n_edges, dtype=bool)
    split[tri_edges[marked_idx, 0]] = True
    # Closure: an element any of whose edges is split must split its refinement edge.
    while True:
        needs = split[tri_edges].any(axis=1) & ~split[tri_edges[:, 0]]
        if not needs.any():
            break
        split[tri_edges[needs, 0]] = True

    split_idx = np.flatnonzero(split)
    midpoint = np.full(mesh.n_edges, -1, dtype=np.int64)
    midpoint[split_idx] = nv + np.arange(len(split_idx))
    mids = 0.5 * (
        mesh.vertices[mesh.edges[split_idx, 0]] + mesh.vertices[mesh.edges[split_idx, 1]]
    )
    new_vertices = np.vstack([mesh.vertices, mids])

    s0 = split[tri_edges[:, 0]]
    s1 = split[tri_edges[:, 1]]
    s2 = split[tri_edges[:, 2]]
    counts = np.where(s0, 2 + s1.astype(np.int64) + s2.astype(np.int64), 1)
    offs = np.concatenate([[0], np.cumsum(counts)])
    n_new = int(offs[-1])
    child = np.empty((n_new, 3), dtype=np.int64)
    gen = np.empty(n_new, dtype=np.int64)
    parent = np.repeat(np.arange(mesh.n_elements, dtype=np.int64), counts)

    z0, z1, z2 = tri[:, 0], tri[:, 1], tri[:, 2]
    m0 = midpoint[tri_edges[:, 0]]
    m1 = midpoint[tri_edges[:, 1]]
    m2 = midpoint[tri_edges[:, 2]]
    start = offs[:-1]

    keep = ~s0
    child[start[keep]] = tri[keep]
    gen[start[keep]] = mesh.generation[keep]

    # First child (m0, z0, z1); bisected again if its refinement edge (z0, z1) is split.
    c1s = s0 & ~s2
    pos = start[c1s]
    child[pos] = np.column_stack([m0, z0, z1])[c1s]
    gen[pos] = mesh.generation[c1s] + 1
    c1p = s0 & s2
    pos = start[c1p]
    child[pos] = np.column_stack([m2, m0, z0])[c1p]
    child[pos + 1] = np.column_stack([m2, z1, m0])[c1p]
    gen[pos] = mesh.generation[c1p] + 2
    gen[pos + 1] = mesh.generation[c1p] + 2

    # Second child (m0, z2, z0); bisected again if its refinement edge (z2, z0) is split.
    start2 = start + 1 + s2.astype(np.int64)
    c2s = s0 & ~s1
    pos = start2[c2s]
    child[pos] = np.column_stack([m0, z2, z0])[c2s]
    gen[pos] = mesh.generation[c2s] + 1
    c2p = s0 & s1
    pos = start2[c2p]
    child[pos] = np.column_stack([m1, m0, z2])[c2p]
    child[pos + 1] = np.column_stack([m1, z0, m0])[c2p]
    gen[pos] = mesh.generation[c2p] + 2
    gen[pos + 1] = mesh.generation[c2p] + 2

    # Split Dirichlet boundary edges inherit the flag on both halves.
    b_idx = mesh.edge_index_of(mesh.boundary_edges)
    b_split = split[b_idx]
    kept_b = mesh.boundary_edges[~b_split]
    sb = mesh.boundary_edges[b_split]
    mb = midpoint[b_idx[b_split]]
    new_b = np.vstack(
        [kept_b, np.column_stack([sb[:, 0], mb]), np.column_stack([mb, sb[:, 1]])]
    ) if len(sb) else kept_b

    refined = Triangulation(
        vertices=new_vertices,
        triangles=child,
        boundary_edges=new_b,
        generation=gen,
        domain_area=mesh.domain_area,
        parent_mesh=mesh,
        parent_elements=parent,
    )
    return refined, parent


def refine_nvb(mesh: Triangulation, marked, bisections_per_marked: int = 1) -> Triangulation:
    """Refine ``mesh`` by newest-vertex bisection of the marked elements.

    With ``bisections_per_marked = 1`` every marked element is bisected once;
    with 3 every marked element is bisected through three levels, so that
    each of its edges (and its interior) carries a new vertex.  Conforming
    closure is applied after every bisection pass.
    """
    marked_idx = _marked_indices(mesh, marked)
    if bisections_per_marked == 1:
        return _refine_once(mesh, marked_idx)[0]
    if bisections_per_marked != 3:
        raise MeshError("bisections_per_marked must be 1 or 3")
    mask = np.zeros(mesh.n_elements, dtype=bool)
    mask[marked_idx] = True
    current = mesh
    for _ in range(3):
        current, parent = _refine_once(current, np.flatnonzero(mask))
        mask = mask[parent]
    return current


def uniform_refine(mesh: Triangulation, levels: int) -> Triangulation:
    """Bisect every element once per level (all-marked NVB refinement)."""
    if levels < 0:
        raise MeshError("levels must be nonnegative")
    for _ in range(levels):
        mesh, _ = _refine_once(mesh, np.arange(mesh.n_elements, dtype=np.int64))
    return mesh


def patch_of(mesh: Triangulation, element: int) -> Patch:
    """All elements sharing at least a vertex with ``element``."""
    if not 0 <= element < mesh.n_elements:
        raise MeshError("element index out of range")
    verts = mesh.triangles[element]
    members = np.flatnonzero(np.isin(mesh.triangles, verts).any(axis=1))
    return Patch(center=int(element), members=members, area=float(mesh.areas[members].sum()))


def _lineage_map(fine: Triangulation, coarse: Triangulation) -> np.ndarray | None:
    """fine -> coarse ancestor map via the recorded refinement chain, if any."""
    chain = []
    current = fine
    while current is not None and current is not coarse:
        chain.append(current)
        current = current.parent_mesh
    if current is not coarse:
        return None
    fine_to_coarse = np.arange(fine.n_elements, dtype=np.int64)
    for link in chain:
        fine_to_coarse = link.parent_elements[fine_to_coarse]
    return fine_to_coarse


def _locate_map(fine: Triangulation, coarse: Triangulation) -> np.ndarray:
    """Geometric fine -> coarse map for meshes without a recorded lineage."""
    n_cells = max(1, int(np.sqrt(coarse.n_elements)))
    lo = coarse.vertices.min(axis=0)
    hi = coarse.vertices.max(axis=0)
    span = np.maximum(hi - lo, 1e-300)

    def cell_of(points):
        c = np.floor((points - lo) / span * n_cells).astype(int)
        return np.clip(c, 0, n_cells - 1)

    buckets: dict[tuple[int, int], list[int]] = {}
    pc = coarse.vertices[coarse.triangles]
    cmin = cell_of(pc.min(axis=1))
    cmax = cell_of(pc.max(axis=1))
    for t in range(coarse.n_elements):
        for ix in range(cmin[t, 0], cmax[t, 0] + 1):
            for iy in range(cmin[t, 1], cmax[t, 1] + 1):
                buckets.setdefault((ix, iy), []).append(t)

    scale = float(np.sqrt(coarse.areas.max()))
    tol = 1e-10 * scale

    def contains(t, pts):
        a, b, c = pc[t]
        area2 = 2.0 * coarse.areas[t]
        la = _cross2(b - pts, c - pts) / area2
        lb = _cross2(c - pts, a - pts) / area2
        lc = _cross2(a - pts, b - pts) / area2
        return np.all(la >= -tol) and np.all(lb >= -tol) and np.all(lc >= -tol)

    fine_to_coarse = np.full(fine.n_elements, -1, dtype=np.int64)
    centroids = fine.centroids()
    pf = fine.vertices[fine.triangles]
    cells = cell_of(centroids)
    for i in range(fine.n_elements):
        for t in buckets.get((cells[i, 0], cells[i, 1]), ()):
            if contains(t, np.vstack([pf[i], centroids[i]])):
                fine_to_coarse[i] = t
                break
        if fine_to_coarse[i] < 0:
            raise MeshError(
                f"fine element {i} is not contained in any coarse element; "
                "fine is not a refinement of coarse"
            )
    return fine_to_coarse


def is_refinement_of(fine: Triangulation, coarse: Triangulation) -> RefinementMap:
    """Element maps between ``coarse`` and a mesh obtained from it by refinement.

    Raises :class:`MeshError` if ``fine`` is not (geometrically) a refinement
    of ``coarse`` or ancestor areas do not match their descendants.
    """
    fine_to_coarse = _lineage_map(fine, coarse)
    if fine_to_coarse is None:
        fine_to_coarse = _locate_map(fine, coarse)
    n_children = np.bincount(fine_to_coarse, minlength=coarse.n_elements)
    if np.any(n_children == 0):
        raise MeshError("a coarse element has no descendants in the fine mesh")
    child_area = np.zeros(coarse.n_elements)
    np.add.at(child_area, fine_to_coarse, fine.areas)
    if np.any(np.abs(child_area - coarse.areas) > AREA_RTOL * coarse.areas):
        raise MeshError("descendant areas do not sum to ancestor areas")
    inherited = n_children[fine_to_coarse] == 1
    kept = n_children == 1
    return RefinementMap(
        fine_to_coarse=fine_to_coarse,
        inherited_fine=np.flatnonzero(inherited),
        new_fine=np.flatnonzero(~inherited),
        kept_coarse=np.flatnonzero(kept),
        refined_coarse=np.flatnonzero(~kept),
    )


def make_initial_mesh(vertices, triangles, boundary_edges) -> Triangulation:
    """Build an initial mesh, assigning each refinement edge to the longest edge.

    Ties are broken by the lowest (min, max) vertex-index pair.  Triangles are
    reordered counterclockwise with the refinement edge opposite the first
    vertex.
    """
    vertices = np.asarray(vertices, dtype=float)
    triangles = np.asarray(triangles, dtype=np.int64)
    ordered = np.empty_like(triangles)
    for t, (a, b, c) in enumerate(triangles):
        best = None
        for peak, (u, v) in ((a, (b, c)), (b, (c, a)), (c, (a, b))):
            length = float(np.linalg.norm(vertices[u] - vertices[v]))
            pair = (min(u, v), max(u, v))
            key = (-length, pair)
            if best is None or key < best[0]:
                best = (key, peak, u, v)
        _, peak, u, v = best
        area = 0.5 * _cross2(vertices[u] - vertices[peak], vertices[v] - vertices[peak])
        ordered[t] = (peak, u, v) if area > 0 else (peak, v, u)
    p = vertices[ordered]
    total = float(np.sum(0.5 * _cross2(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])))
    return Triangulation(
        vertices=vertices,
        triangles=ordered,
        boundary_edges=_sorted_pairs(boundary_edges),
        generation=np.zeros(len(ordered), dtype=np.int64),
        domain_area=total,
    )


def unit_square() -> Triangulation:
    """Two-triangle mesh of (0,1)^2 with the diagonal as shared refinement edge."""
    vertices = [(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)]
    triangles = [(0, 1, 2), (0, 2, 3)]
    boundary = [(0, 1), (1, 2), (2, 3), (3, 0)]
    return make_initial_mesh(vertices, triangles, boundary)


def l_shape() -> Triangulation:
    """Six-triangle mesh of (-1,1)^2 minus [-1,0]^2, diagonals at the reentrant corner."""
    vertices = [
        (-1.0, 0.0),   # 0
        (0.0, 0.0),    # 1  reentrant corner
        (0.0, -1.0),   # 2
        (1.0, -1.0),   # 3
        (1.0, 0.0),    # 4
        (1.0, 1.0),    # 5
        (0.0, 1.0),    # 6
        (-1.0, 1.0),   # 7
    ]
    triangles = [(1, 4, 5), (1, 5, 6), (1, 6, 7), (1, 7, 0), (1, 2, 3), (1, 3, 4)]
    boundary = [(0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (5, 6), (6, 7), (7, 0)]
    return make_initial_mesh(vertices, triangles, boundary)


def save_mesh(mesh: Triangulation, path) -> None:
    """Write the mesh text format: `v x y`, `t i j k`, `b i j` lines."""
    lines = []
    for x, y in mesh.vertices:
        lines.append(f"v {float(x)!r} {float(y)!r}")
    for i, j, k in mesh.triangles:
        lines.append(f"t {i} {j} {k}")
    for i, j in mesh.boundary_edges:
        lines.append(f"b {i} {j}")
    Path(path).write_text("\n".join(lines) + "\n")


def load_mesh(path) -> Triangulation:
    """Read the mesh text format; the refinement edge is opposite the first index."""
    vertices: list[tuple[float, float]] = []
    triangles: list[tuple[int, int, int]] = []
    boundary: list[tuple[int, int]] = []
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        fields = line.split()
        try:
            if fields[0] == "v" and len(fields) == 3:
                vertices.append((float(fields[1]), float(fields[2])))
            elif fields[0] == "t" and len(fields) == 4:
                triangles.append((int(fields[1]), int(fields[2]), int(fields[3])))
            elif fields[0] == "b" and len(fields) == 3:
                boundary.append((int(fields[1]), int(fields[2])))
            else:
                raise ValueError
        except ValueError:
            raise MeshError(f"{path}:{lineno}: cannot parse mesh line {raw!r}") from None
    verts = np.asarray(vertices, dtype=float)
    tris = np.asarray(triangles, dtype=np.int64)
    p = verts[tris]
    total = float(np.sum(0.5 * _cross2(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])))
    return Triangulation(
        vertices=verts,
        triangles=tris,
        boundary_edges=_sorted_pairs(np.asarray(boundary, dtype=np.int64)),
        generation=np.zeros(len(tris), dtype=np.int64),
        domain_area=total,
    )
