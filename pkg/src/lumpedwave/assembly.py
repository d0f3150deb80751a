"""Global operators: mass matrices, divergence coupling, boundary loads.

The lumped velocity mass uses the vertex quadrature rule, which couples
only degrees of freedom meeting at a mesh vertex and therefore yields one
dense SPD block per vertex.  The consistent mass uses the degree-2 midpoint
rule (exact for products of linears), and the divergence matrix is exact
since BDM1 divergences are piecewise constant.  Degrees of freedom on
``neumann_u`` edges are constrained to zero and eliminated by identity
rows/columns, keeping index stability across assemblies.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import sparse

from .fem import Discretization, edge_gauss_rule
from .linalg import BlockDiagMatrix
from .mesh import DIRICHLET_P, NEUMANN_U, TriMesh


@dataclass
class DofMap:
    """Velocity/pressure degree-of-freedom layout for one mesh.

    Velocity dofs are one per (edge, endpoint) pair, numbered 2*edge+side,
    grouped per mesh vertex in ``vertex_blocks`` (a partition of all
    velocity dofs).  Pressure dofs are one per cell.  ``constrained`` marks
    velocity dofs on ``neumann_u`` edges (forced to zero).
    """

    num_velocity: int
    num_pressure: int
    vertex_blocks: list
    dof_vertex: np.ndarray  # (num_velocity,) owning mesh vertex of each dof
    dof_position: np.ndarray  # (num_velocity,) position inside its vertex block
    constrained: np.ndarray  # (num_velocity,) bool


def build_dofmap(mesh: TriMesh) -> DofMap:
    nv = 2 * mesh.num_edges
    dof_vertex = mesh.edges.reshape(-1)  # dof 2E+s belongs to vertex edges[E, s]
    order = np.argsort(dof_vertex, kind="stable")
    counts = np.bincount(dof_vertex, minlength=mesh.num_vertices)
    blocks = np.split(order, np.cumsum(counts)[:-1])
    position = np.empty(nv, dtype=np.int64)
    for block in blocks:
        position[block] = np.arange(len(block))

    constrained = np.zeros(nv, dtype=bool)
    for e in mesh.edges_with_tag(NEUMANN_U):
        constrained[2 * e] = True
        constrained[2 * e + 1] = True
    return DofMap(
        num_velocity=nv,
        num_pressure=mesh.num_cells,
        vertex_blocks=blocks,
        dof_vertex=dof_vertex.astype(np.int64),
        dof_position=position,
        constrained=constrained,
    )


def assemble_lumped_mass(disc: Discretization, dofmap: DofMap, constrain: bool = True) -> BlockDiagMatrix:
    """Velocity mass with the vertex rule, block-diagonal per mesh vertex.

    At a vertex of a cell only the two basis functions tied to that corner
    are nonzero, with values dual to the two incident edge normals; each
    cell therefore adds |K|/3 times a rank-2 Gram matrix to the vertex
    block.  Constrained dofs receive identity rows/columns unless
    ``constrain`` is disabled (the plain pairing is what post-processing
    tests against).
    """
    mesh = disc.mesh
    C = mesh.num_cells

    # for local vertex v of a cell, the two incident local edges are (v+1)%3
    # and (v+2)%3; gather their global normals per (cell, vertex)
    e1 = mesh.cell_to_edges[:, (np.arange(3) + 1) % 3]  # (C, 3)
    e2 = mesh.cell_to_edges[:, (np.arange(3) + 2) % 3]
    N = np.stack([mesh.edge_normals[e1], mesh.edge_normals[e2]], axis=2)  # (C,3,2,2)
    D = np.linalg.inv(N)  # columns are the dual vectors
    G = np.einsum("cvki,cvkj->cvij", D, D)  # (C,3,2,2) dual Gram
    G = G * (mesh.areas[:, None] / 3.0)[:, :, None, None]

    # global dofs of (edge, endpoint at this vertex)
    verts = mesh.cells  # (C, 3)
    side1 = (mesh.edges[e1, 0] != verts).astype(np.int64)
    side2 = (mesh.edges[e2, 0] != verts).astype(np.int64)
    dof1 = 2 * e1 + side1
    dof2 = 2 * e2 + side2

    smax = max(len(b) for b in dofmap.vertex_blocks)
    V = mesh.num_vertices
    padded = np.zeros((V, smax, smax))
    pos1 = dofmap.dof_position[dof1]
    pos2 = dofmap.dof_position[dof2]
    pos = np.stack([pos1, pos2], axis=2)  # (C, 3, 2)
    vv = np.repeat(verts[:, :, None, None], 2, axis=2).repeat(2, axis=3)
    rows = np.repeat(pos[:, :, :, None], 2, axis=3)
    cols = np.repeat(pos[:, :, None, :], 2, axis=2)
    np.add.at(padded, (vv.ravel(), rows.ravel(), cols.ravel()), G.ravel())

    if constrain:
        cdofs = np.flatnonzero(dofmap.constrained)
        cv = dofmap.dof_vertex[cdofs]
        cp = dofmap.dof_position[cdofs]
        padded[cv, cp, :] = 0.0
        padded[cv, :, cp] = 0.0
        padded[cv, cp, cp] = 1.0

    padded_dofs = np.full((V, smax), -1, dtype=np.int64)
    sizes = np.array([len(b) for b in dofmap.vertex_blocks])
    for v, block in enumerate(dofmap.vertex_blocks):
        padded_dofs[v, : len(block)] = block
    return BlockDiagMatrix.from_padded(padded_dofs, sizes, padded, dofmap.num_velocity)


def assemble_exact_mass(disc: Discretization) -> sparse.csr_matrix:
    """Consistent BDM1 mass via the degree-2 midpoint rule (exact, SPD)."""
    q = disc.quad("edge_midpoint")
    local = np.einsum("cq,cqld,cqmd->clm", q["weights"], q["bdm1"], q["bdm1"])
    rows = np.repeat(disc.cell_dofs, 6, axis=1).ravel()
    cols = np.tile(disc.cell_dofs, (1, 6)).ravel()
    n = disc.num_velocity_dofs
    return sparse.coo_matrix((local.ravel(), (rows, cols)), shape=(n, n)).tocsr()


def assemble_div(disc: Discretization) -> sparse.csr_matrix:
    """Divergence coupling B with entries integral_K div(basis_j); exact."""
    vals = disc.div_basis * disc.mesh.areas[:, None]
    rows = np.repeat(np.arange(disc.mesh.num_cells), 6)
    cols = disc.cell_dofs.ravel()
    shape = (disc.mesh.num_cells, disc.num_velocity_dofs)
    return sparse.coo_matrix((vals.ravel(), (rows, cols)), shape=shape).tocsr()


def pressure_mass(mesh: TriMesh) -> np.ndarray:
    """Diagonal of the pressure mass matrix D: the cell areas |K|."""
    return mesh.areas.copy()


class BoundaryLoad:
    """Assembler for the Dirichlet pressure load on the velocity space.

    The load is l_j(t) = -int_{dirichlet_p} p(.,t) (n . basis_j) ds with n
    the outward normal; only the two dofs of each boundary edge see their
    own edge, where the normal trace is the linear hat at the endpoint.
    Edge integrals use 4-point Gauss (degree 7).
    """

    def __init__(self, disc: Discretization, dofmap: DofMap):
        mesh = disc.mesh
        self.num_velocity = dofmap.num_velocity
        edges = mesh.edges_with_tag(DIRICHLET_P)
        self.edges = edges
        if len(edges) == 0:
            return

        # locate the unique adjacent cell to orient the outward normal
        flat = mesh.cell_to_edges.ravel()
        order = np.argsort(flat, kind="stable")
        first = np.searchsorted(flat[order], edges)
        pos = order[first]
        sign = mesh.cell_edge_signs.ravel()[pos].astype(float)

        s, w = edge_gauss_rule(4)
        a = mesh.vertices[mesh.edges[edges, 0]]
        b = mesh.vertices[mesh.edges[edges, 1]]
        self.points = a[:, None, :] + s[None, :, None] * (b - a)[:, None, :]
        ds = mesh.edge_lengths[edges][:, None] * w[None, :]  # (Eb, G)
        self.w_hat0 = -sign[:, None] * ds * (1.0 - s)[None, :]
        self.w_hat1 = -sign[:, None] * ds * s[None, :]
        self.dof0 = 2 * edges
        self.dof1 = 2 * edges + 1

    def __call__(self, p_data, t: float) -> np.ndarray:
        out = np.zeros(self.num_velocity)
        if len(self.edges) == 0:
            return out
        vals = np.asarray(p_data(self.points, t), dtype=float)
        out[self.dof0] = np.einsum("eg,eg->e", self.w_hat0, vals)
        out[self.dof1] = np.einsum("eg,eg->e", self.w_hat1, vals)
        return out


def assemble_boundary_load(disc: Discretization, dofmap: DofMap, p_data, t: float) -> np.ndarray:
    """One-shot Dirichlet boundary load at time t; see BoundaryLoad."""
    return BoundaryLoad(disc, dofmap)(p_data, t)


def apply_normal_bc(dofmap: DofMap, field: np.ndarray) -> np.ndarray:
    """Zero the constrained (neumann_u) velocity dofs; idempotent."""
    out = np.array(field, dtype=float)
    out[dofmap.constrained] = 0.0
    return out


@dataclass
class Operators:
    """Assembled operator bundle for one mesh level."""

    disc: Discretization
    dofmap: DofMap
    mass: BlockDiagMatrix  # lumped, with constrained identity rows
    mass_plain: BlockDiagMatrix  # lumped, no constraint rows
    exact_mass: sparse.csr_matrix  # plain (no constraint rows)
    div: sparse.csr_matrix
    areas: np.ndarray  # diagonal pressure mass
    boundary_load: BoundaryLoad
    p_data: object = None
    _schur_lumped: object = field(default=None, repr=False)

    def load(self, t: float):
        """Boundary load vector at time t, or None without Dirichlet data."""
        if self.p_data is None:
            return None
        return self.boundary_load(self.p_data, t)

    def schur_lumped(self) -> sparse.csr_matrix:
        """Cached B M^-1 B^T with the lumped mass (used as preconditioner)."""
        if self._schur_lumped is None:
            from .linalg import lumped_schur

            self._schur_lumped = lumped_schur(self.mass, self.div)
        return self._schur_lumped


def assemble_operators(disc: Discretization, dofmap: DofMap = None, p_data=None) -> Operators:
    """Assemble every operator needed by the leapfrog scheme on one mesh."""
    if dofmap is None:
        dofmap = build_dofmap(disc.mesh)
    mass = assemble_lumped_mass(disc, dofmap)
    if dofmap.constrained.any():
        mass_plain = assemble_lumped_mass(disc, dofmap, constrain=False)
    else:
        mass_plain = mass
    return Operators(
        disc=disc,
        dofmap=dofmap,
        mass=mass,
        mass_plain=mass_plain,
        exact_mass=assemble_exact_mass(disc),
        div=assemble_div(disc),
        areas=pressure_mass(disc.mesh),
        boundary_load=BoundaryLoad(disc, dofmap),
        p_data=p_data,
    )
