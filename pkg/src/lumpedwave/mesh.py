"""Conforming triangular meshes.

Provides structured rectangle/L-shape generation, a line-oriented ASCII file
format, regular (red) refinement with optional curved-boundary snapping,
validation, and P0 prolongation between topologically nested meshes.

Conventions:
    * cells are vertex index triples with counterclockwise orientation;
    * edges are stored as vertex pairs ``(a, b)`` with ``a < b``; the global
      unit normal of an edge is the 90-degree counterclockwise rotation of
      the unit tangent pointing from ``a`` to ``b``;
    * local edge ``i`` of a cell is the edge opposite local vertex ``i``.

Meshes are immutable after construction and safe to share across threads.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

DIRICHLET_P = "dirichlet_p"
NEUMANN_U = "neumann_u"
SCATTERER = "scatterer"
BOUNDARY_TAGS = frozenset((DIRICHLET_P, NEUMANN_U, SCATTERER))

# Local edge i connects these local vertices (edge opposite vertex i).
LOCAL_EDGES = ((1, 2), (2, 0), (0, 1))

# Affine maps from child reference coordinates to parent reference
# coordinates for the four children of the regular refinement; row i holds
# (b, A) flattened as [bx, by, Axx, Axy, Ayx, Ayy] for child i.  Child cells
# are emitted as (v0,m2,m1), (v1,m0,m2), (v2,m1,m0), (m0,m1,m2).
_CHILD_REF_OFFSET = np.array(
    [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [0.5, 0.5]]
)
_CHILD_REF_MATRIX = np.array(
    [
        [[0.5, 0.0], [0.0, 0.5]],
        [[-0.5, -0.5], [0.5, 0.0]],
        [[0.0, 0.5], [-0.5, -0.5]],
        [[-0.5, 0.0], [0.0, -0.5]],
    ]
)


class MeshError(ValueError):
    """Raised for malformed mesh files or invalid mesh topology/geometry."""


def _rot90_ccw(t: np.ndarray) -> np.ndarray:
    """Rotate 2D vectors by +90 degrees: (x, y) -> (-y, x)."""
    return np.stack([-t[..., 1], t[..., 0]], axis=-1)


class TriMesh:
    """Conforming triangulation with oriented edges and boundary tags.

    Parameters
    ----------
    vertices : (V, 2) float array
        Vertex coordinates.
    cells : (C, 3) int array
        Vertex index triples, counterclockwise.
    boundary_tags : dict
        Maps boundary edges, given as ``(a, b)`` vertex pairs in either
        order, to a tag from ``BOUNDARY_TAGS``.  Every boundary edge must
        be covered exactly once; interior edges must not appear.
    """

    def __init__(self, vertices, cells, boundary_tags):
        self.vertices = np.ascontiguousarray(vertices, dtype=float)
        self.cells = np.ascontiguousarray(cells, dtype=np.int64)
        if self.vertices.ndim != 2 or self.vertices.shape[1] != 2:
            raise MeshError("vertices must be a (V, 2) array")
        if self.cells.ndim != 2 or self.cells.shape[1] != 3:
            raise MeshError("cells must be a (C, 3) array")
        if self.num_cells == 0:
            raise MeshError("mesh has no cells")
        if self.cells.min() < 0 or self.cells.max() >= self.num_vertices:
            raise MeshError("cell vertex index out of range")

        self._build_connectivity()
        self._build_geometry()
        self._assign_tags(boundary_tags)

    # -- construction helpers -------------------------------------------------

    def _build_connectivity(self):
        cells = self.cells
        if len(np.unique(np.sort(cells, axis=1), axis=0)) != len(cells):
            raise MeshError("duplicated cell")

        # all (cell, local edge) vertex pairs, sorted so (a, b) has a < b
        raw = cells[:, LOCAL_EDGES].reshape(-1, 2)  # (3C, 2)
        swapped = np.sort(raw, axis=1)
        self.edges, inverse, counts = np.unique(
            swapped, axis=0, return_inverse=True, return_counts=True
        )
        if counts.max() > 2:
            raise MeshError("non-conforming mesh: edge shared by >2 cells")
        self.cell_to_edges = inverse.reshape(-1, 3)
        self.boundary_edge_ids = np.flatnonzero(counts == 1)
        self.interior_edge_ids = np.flatnonzero(counts == 2)

        tangents = self.vertices[self.edges[:, 1]] - self.vertices[self.edges[:, 0]]
        lengths = np.linalg.norm(tangents, axis=1)
        if lengths.min() <= 0.0:
            raise MeshError("degenerate edge of zero length")
        self.edge_lengths = lengths
        self.edge_normals = _rot90_ccw(tangents / lengths[:, None])

        # sign relating the cell-local outward normal to the global normal
        p1 = self.vertices[raw[:, 0]]
        p2 = self.vertices[raw[:, 1]]
        outward = np.stack([p2[:, 1] - p1[:, 1], p1[:, 0] - p2[:, 0]], axis=-1)
        dots = np.einsum("ij,ij->i", outward, self.edge_normals[inverse])
        self.cell_edge_signs = np.where(dots > 0.0, 1, -1).reshape(-1, 3).astype(np.int8)

    def _build_geometry(self):
        p = self.vertices[self.cells]  # (C, 3, 2)
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        self.signed_areas = 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])
        if self.signed_areas.min() <= 0.0:
            if np.any(np.abs(self.signed_areas) < 1e-14 * self.edge_lengths.max() ** 2):
                raise MeshError("zero-area cell")
            raise MeshError("cell with negative orientation (not counterclockwise)")
        self.areas = self.signed_areas

        ell = self.edge_lengths[self.cell_to_edges]  # (C, 3)
        self.cell_diameters = ell.max(axis=1)
        self.h_max = float(self.cell_diameters.max())
        self.h_min = float(self.cell_diameters.min())
        # inradius over diameter, the shape-regularity ratio per cell
        self.shape_ratios = (2.0 * self.areas / ell.sum(axis=1)) / self.cell_diameters

    def _assign_tags(self, boundary_tags):
        lookup = {}
        for (a, b), tag in boundary_tags.items():
            if tag not in BOUNDARY_TAGS:
                raise MeshError(f"unknown boundary tag {tag!r}")
            key = (min(a, b), max(a, b))
            if key in lookup:
                raise MeshError(f"boundary edge {key} tagged twice")
            lookup[key] = tag

        self.boundary_tag = np.full(self.num_edges, "", dtype=object)
        for e in self.boundary_edge_ids:
            key = tuple(self.edges[e])
            try:
                self.boundary_tag[e] = lookup.pop(key)
            except KeyError:
                raise MeshError(f"boundary edge {key} has no tag") from None
        if lookup:
            raise MeshError(f"tags given for non-boundary edges: {sorted(lookup)}")

    # -- basic queries ---------------------------------------------------------

    @property
    def num_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def num_cells(self) -> int:
        return self.cells.shape[0]

    @property
    def num_edges(self) -> int:
        return self.edges.shape[0]

    def edges_with_tag(self, tag: str) -> np.ndarray:
        """Ids of boundary edges carrying the given tag."""
        return np.flatnonzero(self.boundary_tag == tag)

    def __repr__(self):
        return (
            f"TriMesh(V={self.num_vertices}, C={self.num_cells}, "
            f"E={self.num_edges}, h_max={self.h_max:.4g})"
        )


def validate_mesh(mesh: TriMesh, gamma_min: float = 0.05) -> dict:
    """Check mesh invariants and return a quality summary.

    Verifies positive orientation (already enforced at construction),
    conformity, the Euler relation consistent with the number of boundary
    loops (V - E + C = 2 - loops for a genus-0 planar mesh), tagging of all
    boundary edges, and shape regularity above ``gamma_min``.

    Returns a dict with keys ``euler``, ``boundary_loops``, ``gamma``.
    """
    euler = mesh.num_vertices - mesh.num_edges + mesh.num_cells

    # trace boundary loops
    bedges = mesh.edges[mesh.boundary_edge_ids]
    succ = {}
    for a, b in bedges:
        succ.setdefault(int(a), []).append(int(b))
        succ.setdefault(int(b), []).append(int(a))
    if any(len(v) != 2 for v in succ.values()):
        raise MeshError("boundary is not a disjoint union of closed loops")
    loops = 0
    seen = set()
    for start in succ:
        if start in seen:
            continue
        loops += 1
        prev, cur = None, start
        while True:
            seen.add(cur)
            nxt = [v for v in succ[cur] if v != prev]
            prev, cur = cur, nxt[0]
            if cur == start:
                break

    if euler != 2 - loops:
        raise MeshError(
            f"Euler relation violated: V-E+C={euler} with {loops} boundary loop(s)"
        )
    for e in mesh.boundary_edge_ids:
        if mesh.boundary_tag[e] == "":
            raise MeshError(f"untagged boundary edge {e}")

    gamma = float(mesh.shape_ratios.min())
    if gamma < gamma_min:
        raise MeshError(f"shape regularity {gamma:.3g} below minimum {gamma_min:.3g}")
    return {"euler": int(euler), "boundary_loops": loops, "gamma": gamma}


# -- structured generation -----------------------------------------------------


def generate_rect_mesh(bounds, n: int, tag: str = DIRICHLET_P) -> TriMesh:
    """Uniform diagonal-split triangulation of an axis-aligned rectangle.

    Parameters
    ----------
    bounds : ((x0, x1), (y0, y1))
        Rectangle extents; side lengths must be integer multiples of 1/n.
    n : int
        Subdivisions per unit length, so the grid spacing is h = 1/n.
    tag : str
        Boundary tag applied to every boundary edge.
    """
    (x0, x1), (y0, y1) = bounds
    if not isinstance(n, (int, np.integer)) or n < 1:
        raise ValueError(f"subdivision count must be a positive integer, got {n}")
    if x1 <= x0 or y1 <= y0:
        raise ValueError("empty rectangle")
    nx = (x1 - x0) * n
    ny = (y1 - y0) * n
    if abs(nx - round(nx)) > 1e-9 or abs(ny - round(ny)) > 1e-9:
        raise ValueError("rectangle sides must be integer multiples of 1/n")
    nx, ny = int(round(nx)), int(round(ny))

    xs = np.linspace(x0, x1, nx + 1)
    ys = np.linspace(y0, y1, ny + 1)
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    vertices = np.stack([X.ravel(), Y.ravel()], axis=1)

    def vid(i, j):
        return i * (ny + 1) + j

    I, J = np.meshgrid(np.arange(nx), np.arange(ny), indexing="ij")
    a = vid(I, J).ravel()
    b = vid(I + 1, J).ravel()
    c = vid(I, J + 1).ravel()
    d = vid(I + 1, J + 1).ravel()
    # split each square along the a-d diagonal
    lower = np.stack([a, b, d], axis=1)
    upper = np.stack([a, d, c], axis=1)
    cells = np.concatenate([lower, upper], axis=0)

    tags = {}
    for i in range(nx):
        tags[(vid(i, 0), vid(i + 1, 0))] = tag
        tags[(vid(i, ny), vid(i + 1, ny))] = tag
    for j in range(ny):
        tags[(vid(0, j), vid(0, j + 1))] = tag
        tags[(vid(nx, j), vid(nx, j + 1))] = tag
    return TriMesh(vertices, cells, tags)


def _tag_all_boundary(vertices, cells, tag):
    raw = cells[:, LOCAL_EDGES].reshape(-1, 2)
    swapped = np.sort(raw, axis=1)
    edges, counts = np.unique(swapped, axis=0, return_counts=True)
    tags = {tuple(e): tag for e in edges[counts == 1]}
    return TriMesh(vertices, cells, tags)


def generate_lshape_mesh(n: int, tag: str = DIRICHLET_P) -> TriMesh:
    """L-shaped domain (-1,1)^2 minus [0,1]^2, grid spacing 1/n."""
    full = generate_rect_mesh(((-1.0, 1.0), (-1.0, 1.0)), n, tag=tag)
    centroids = full.vertices[full.cells].mean(axis=1)
    keep = ~((centroids[:, 0] > 0.0) & (centroids[:, 1] > 0.0))
    cells = full.cells[keep]
    used = np.unique(cells)
    remap = -np.ones(full.num_vertices, dtype=np.int64)
    remap[used] = np.arange(len(used))
    return _tag_all_boundary(full.vertices[used], remap[cells], tag)


# -- file format -----------------------------------------------------------------


def read_mesh(source) -> TriMesh:
    """Read a mesh from the line-oriented ASCII format.

    The format is: header ``trimesh 1``; ``vertices N`` followed by N lines
    ``x y``; ``cells M`` followed by M lines ``i j k``; ``boundary B``
    followed by B lines ``i j TAG``.  Indices are 0-based.  ``source`` is a
    text stream or a path.
    """
    if hasattr(source, "read"):
        lines = source.read().splitlines()
    else:
        with open(source, "r", encoding="ascii") as fh:
            lines = fh.read().splitlines()
    tokens = [ln.split() for ln in lines if ln.strip() and not ln.lstrip().startswith("#")]
    pos = 0

    def take(what, count):
        nonlocal pos
        if pos >= len(tokens) or tokens[pos][0] != what or len(tokens[pos]) != 2:
            raise MeshError(f"expected '{what} <count>' near line {pos + 1}")
        try:
            k = int(tokens[pos][1])
        except ValueError:
            raise MeshError(f"bad count in '{what}' header") from None
        rows = tokens[pos + 1 : pos + 1 + k]
        if len(rows) != k or any(len(r) != count for r in rows):
            raise MeshError(f"section '{what}' expects {k} rows of {count} fields")
        pos += 1 + k
        return rows

    if not tokens or tokens[0] != ["trimesh", "1"]:
        raise MeshError("missing 'trimesh 1' header")
    pos = 1
    try:
        verts = np.array([[float(x), float(y)] for x, y in take("vertices", 2)])
        cells = np.array([[int(i), int(j), int(k)] for i, j, k in take("cells", 3)], dtype=np.int64)
        brows = take("boundary", 3)
    except ValueError as err:
        raise MeshError(f"malformed numeric field: {err}") from None
    if pos != len(tokens):
        raise MeshError("trailing content after boundary section")

    tags = {}
    for i, j, tag in brows:
        key = (min(int(i), int(j)), max(int(i), int(j)))
        if key in tags:
            raise MeshError(f"boundary edge {key} listed twice")
        tags[key] = tag
    mesh = TriMesh(verts, cells, tags)
    validate_mesh(mesh)
    return mesh


def write_mesh(mesh: TriMesh, stream) -> None:
    """Write a mesh in the format understood by :func:`read_mesh`."""
    w = stream.write
    w("trimesh 1\n")
    w(f"vertices {mesh.num_vertices}\n")
    for x, y in mesh.vertices:
        w(f"{x!r} {y!r}\n")
    w(f"cells {mesh.num_cells}\n")
    for i, j, k in mesh.cells:
        w(f"{i} {j} {k}\n")
    w(f"boundary {len(mesh.boundary_edge_ids)}\n")
    for e in mesh.boundary_edge_ids:
        a, b = mesh.edges[e]
        w(f"{a} {b} {mesh.boundary_tag[e]}\n")


# -- refinement ------------------------------------------------------------------


@dataclass(frozen=True)
class CircleProjector:
    """Radial projection onto a circle, used to snap refined boundary vertices."""

    center: tuple
    radius: float

    def __call__(self, points: np.ndarray) -> np.ndarray:
        c = np.asarray(self.center, dtype=float)
        d = points - c
        r = np.linalg.norm(d, axis=-1, keepdims=True)
        return c + self.radius * d / r


@dataclass
class RefinementMap:
    """Correspondence between a mesh and its regular refinement.

    ``parent_cell[f]`` is the coarse cell containing fine cell ``f`` and
    ``child_index[f]`` its position 0..3 in the subdivision.  The affine map
    from child reference coordinates to parent reference coordinates is
    ``ref -> child_ref_offset[ci] + child_ref_matrix[ci] @ ref``.
    ``snapped_vertices`` lists fine vertex ids moved by the boundary
    projector, with their pre-snap positions in ``unsnapped_positions``.
    """

    parent_cell: np.ndarray
    child_index: np.ndarray
    snapped_vertices: np.ndarray
    unsnapped_positions: np.ndarray
    num_coarse_cells: int
    num_fine_cells: int
    child_ref_offset: np.ndarray = field(default_factory=lambda: _CHILD_REF_OFFSET.copy())
    child_ref_matrix: np.ndarray = field(default_factory=lambda: _CHILD_REF_MATRIX.copy())

    def parent_reference_coords(self, ref_points: np.ndarray) -> np.ndarray:
        """Map per-fine-cell reference points into parent reference coords.

        ``ref_points`` has shape (Q, 2); the result has shape (F, Q, 2) with
        one row per fine cell.
        """
        A = self.child_ref_matrix[self.child_index]  # (F, 2, 2)
        b = self.child_ref_offset[self.child_index]  # (F, 2)
        return b[:, None, :] + np.einsum("fij,qj->fqi", A, ref_points)


def refine_regular(mesh: TriMesh, snap=None) -> tuple[TriMesh, RefinementMap]:
    """Split every cell into 4 by edge midpoints.

    New vertices on ``scatterer``-tagged edges are projected with ``snap``
    when given.  Tags are inherited by the two halves of each boundary edge.
    Raises MeshError if the projector moves any vertex by more than h_max/2.
    """
    V, E, C = mesh.num_vertices, mesh.num_edges, mesh.num_cells
    midpoints = 0.5 * (mesh.vertices[mesh.edges[:, 0]] + mesh.vertices[mesh.edges[:, 1]])

    snapped_ids = np.array([], dtype=np.int64)
    unsnapped = np.zeros((0, 2))
    if snap is not None:
        snap_edges = mesh.edges_with_tag(SCATTERER)
        if len(snap_edges) > 0:
            before = midpoints[snap_edges].copy()
            moved = snap(before)
            delta = np.linalg.norm(moved - before, axis=1)
            if delta.max() > 0.5 * mesh.h_max:
                raise MeshError(
                    f"boundary projector moved a vertex by {delta.max():.3g} "
                    f"> h_max/2 = {0.5 * mesh.h_max:.3g}"
                )
            midpoints[snap_edges] = moved
            snapped_ids = V + snap_edges
            unsnapped = before

    vertices = np.concatenate([mesh.vertices, midpoints], axis=0)

    v0, v1, v2 = mesh.cells[:, 0], mesh.cells[:, 1], mesh.cells[:, 2]
    m0 = V + mesh.cell_to_edges[:, 0]
    m1 = V + mesh.cell_to_edges[:, 1]
    m2 = V + mesh.cell_to_edges[:, 2]
    children = np.empty((C, 4, 3), dtype=np.int64)
    children[:, 0] = np.stack([v0, m2, m1], axis=1)
    children[:, 1] = np.stack([v1, m0, m2], axis=1)
    children[:, 2] = np.stack([v2, m1, m0], axis=1)
    children[:, 3] = np.stack([m0, m1, m2], axis=1)
    cells = children.reshape(-1, 3)

    tags = {}
    for e in mesh.boundary_edge_ids:
        a, b = mesh.edges[e]
        tag = mesh.boundary_tag[e]
        m = V + e
        tags[(int(a), int(m))] = tag
        tags[(int(m), int(b))] = tag

    fine = TriMesh(vertices, cells, tags)
    refmap = RefinementMap(
        parent_cell=np.repeat(np.arange(C, dtype=np.int64), 4),
        child_index=np.tile(np.arange(4, dtype=np.int64), C),
        snapped_vertices=snapped_ids,
        unsnapped_positions=unsnapped,
        num_coarse_cells=C,
        num_fine_cells=fine.num_cells,
    )
    return fine, refmap


def prolong_p0(field: np.ndarray, refmap: RefinementMap) -> np.ndarray:
    """Prolong a per-cell-constant field: each child inherits its parent value."""
    field = np.asarray(field)
    if field.shape[0] != refmap.num_coarse_cells:
        raise ValueError(
            f"field has {field.shape[0]} entries, expected {refmap.num_coarse_cells}"
        )
    return field[refmap.parent_cell]
