"""Reference-element machinery for the BDM1-P0 pair.

Contains the lowest-order H(div)-conforming basis on triangles with
edge-endpoint normal degrees of freedom, triangle and edge quadrature rules,
the contravariant Piola transform, interpolation and projection operators,
and pointwise field evaluation.

Velocity degrees of freedom are indexed ``2*edge + side`` where ``side`` 0/1
refers to the endpoint with the smaller/larger vertex id of the (sorted)
global edge, and the value is the normal component along the global edge
normal at that endpoint.  This is the basis for which the vertex-rule mass
matrix couples only degrees of freedom meeting at a mesh vertex.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mesh import LOCAL_EDGES, TriMesh

REF_VERTICES = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
# outward unit normals of the reference edges (edge i opposite vertex i)
REF_NORMALS = np.array(
    [[1.0 / np.sqrt(2.0), 1.0 / np.sqrt(2.0)], [-1.0, 0.0], [0.0, -1.0]]
)
REF_EDGE_LENGTHS = np.array([np.sqrt(2.0), 1.0, 1.0])


# -- quadrature ------------------------------------------------------------------


@dataclass(frozen=True)
class QuadRule:
    """Triangle quadrature in barycentric coordinates.

    ``weights`` sum to the reference area 1/2; ``degree`` is the highest
    polynomial degree integrated exactly.
    """

    name: str
    points: np.ndarray  # (Q, 3) barycentric
    weights: np.ndarray  # (Q,)
    degree: int

    @property
    def xy(self) -> np.ndarray:
        """Rule points as reference (x, y) coordinates."""
        return self.points @ REF_VERTICES

    def integrate(self, f) -> float:
        """Integrate ``f(x, y)`` over the reference triangle."""
        pts = self.xy
        return float(np.dot(self.weights, f(pts[:, 0], pts[:, 1])))


def _dunavant6() -> tuple[np.ndarray, np.ndarray]:
    # symmetric 12-point rule of degree 6; barycentric weights sum to 1
    g1a, g1b, w1 = 0.873821971016996, 0.063089014491502, 0.050844906370207
    g2a, g2b, w2 = 0.501426509658179, 0.249286745170910, 0.116786275726379
    g3 = (0.053145049844816, 0.310352451033785, 0.636502499121399)
    w3 = 0.082851075618374
    pts, wts = [], []
    for (a, b), w in (((g1a, g1b), w1), ((g2a, g2b), w2)):
        pts += [(a, b, b), (b, a, b), (b, b, a)]
        wts += [w] * 3
    a, b, c = g3
    pts += [(a, b, c), (a, c, b), (b, a, c), (b, c, a), (c, a, b), (c, b, a)]
    wts += [w3] * 6
    return np.array(pts), np.array(wts)


def quad_rule(kind: str) -> QuadRule:
    """Return a triangle quadrature rule.

    ``vertex`` is the 3-point rule at the corners (degree 1) that realizes
    the mass lumping; ``edge_midpoint`` is the degree-2 midpoint rule used
    for exact mass matrices of piecewise linears; ``high_order`` is a
    12-point degree-6 rule for error integration.
    """
    if kind == "vertex":
        pts = np.eye(3)
        return QuadRule(kind, pts, np.full(3, 1.0 / 6.0), degree=1)
    if kind == "edge_midpoint":
        pts = 0.5 * (np.eye(3)[[1, 2, 0]] + np.eye(3)[[2, 0, 1]])
        return QuadRule(kind, pts, np.full(3, 1.0 / 6.0), degree=2)
    if kind == "high_order":
        pts, wts = _dunavant6()
        return QuadRule(kind, pts, 0.5 * wts, degree=6)
    raise ValueError(f"unknown quadrature kind {kind!r}")


def edge_gauss_rule(n: int = 4) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre nodes and weights on [0, 1] (degree 2n-1)."""
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


# -- reference basis and Piola transform -----------------------------------------


@dataclass(frozen=True)
class Bdm1Basis:
    """The six reference shape functions dual to edge-endpoint normal values.

    ``coeffs[l, d]`` holds (c0, cx, cy) of component ``d`` of shape ``l``,
    i.e. ``phi_l(x, y)[d] = c0 + cx*x + cy*y``.  Shape ``l = 2*i + j`` is
    dual to the normal component at endpoint ``j`` of reference edge ``i``
    (endpoints ordered along the counterclockwise traversal).
    """

    coeffs: np.ndarray  # (6, 2, 3)

    def dof_points(self) -> np.ndarray:
        return REF_VERTICES[[e[j] for e in LOCAL_EDGES for j in (0, 1)]]

    def dof_normals(self) -> np.ndarray:
        return np.repeat(REF_NORMALS, 2, axis=0)

    def evaluate(self, points: np.ndarray) -> np.ndarray:
        """Shape function values at reference points (..., 2) -> (..., 6, 2)."""
        p = np.asarray(points, dtype=float)
        mono = np.stack([np.ones_like(p[..., 0]), p[..., 0], p[..., 1]], axis=-1)
        return np.einsum("...k,ldk->...ld", mono, self.coeffs)

    def divergence(self) -> np.ndarray:
        """Per-shape (constant) divergence on the reference triangle."""
        return self.coeffs[:, 0, 1] + self.coeffs[:, 1, 2]


def _build_reference_basis() -> Bdm1Basis:
    pts = REF_VERTICES[[e[j] for e in LOCAL_EDGES for j in (0, 1)]]  # (6, 2)
    nrm = np.repeat(REF_NORMALS, 2, axis=0)  # (6, 2)
    poly = np.stack([np.ones(6), pts[:, 0], pts[:, 1]], axis=1)  # (6, 3)
    N = np.concatenate([poly * nrm[:, :1], poly * nrm[:, 1:]], axis=1)  # (6, 6)
    C = np.linalg.inv(N)  # column l holds monomial coefficients of shape l
    return Bdm1Basis(coeffs=C.T.reshape(6, 2, 3))


_REFERENCE_BASIS = _build_reference_basis()


def reference_basis() -> Bdm1Basis:
    return _REFERENCE_BASIS


class PiolaField:
    """Contravariant Piola image of a reference vector field on one cell.

    For the affine map F(xhat) = p0 + J xhat the transform is
    ``v(x) = J vhat(F^{-1}(x)) / det J``; it preserves edge fluxes and
    scales divergences by 1/det J.
    """

    def __init__(self, cell_vertices, ref_field):
        cv = np.asarray(cell_vertices, dtype=float)
        self.origin = cv[0]
        self.jacobian = np.stack([cv[1] - cv[0], cv[2] - cv[0]], axis=1)
        self.det = float(np.linalg.det(self.jacobian))
        if abs(self.det) < 1e-300 or not np.isfinite(self.det):
            raise ValueError("degenerate cell: zero Jacobian determinant")
        self.inv_jacobian = np.linalg.inv(self.jacobian)
        self.ref_field = ref_field

    def to_reference(self, x):
        return (np.asarray(x, dtype=float) - self.origin) @ self.inv_jacobian.T

    def __call__(self, x):
        vhat = np.asarray(self.ref_field(self.to_reference(x)), dtype=float)
        return vhat @ self.jacobian.T / self.det

    def divergence(self, x, ref_divergence):
        """Physical divergence given the reference divergence callable."""
        return np.asarray(ref_divergence(self.to_reference(x))) / self.det


def piola_map(cell_vertices, ref_field) -> PiolaField:
    """Map a reference vector field to a physical cell; see PiolaField."""
    return PiolaField(cell_vertices, ref_field)


# -- per-mesh discretization -------------------------------------------------------


class Discretization:
    """Per-mesh basis tables and quadrature caches for BDM1/P0/P1 fields.

    The physical basis on each cell is constructed directly as the dual
    basis of the global edge-endpoint normal functionals, so duality and
    H(div) conformity hold by construction.  All tables are immutable once
    built; lazily created caches are keyed by quadrature kind.
    """

    def __init__(self, mesh: TriMesh):
        self.mesh = mesh
        ce = mesh.cell_to_edges
        self.cell_dofs = np.empty((mesh.num_cells, 6), dtype=np.int64)
        self.cell_dofs[:, 0::2] = 2 * ce
        self.cell_dofs[:, 1::2] = 2 * ce + 1
        self.num_velocity_dofs = 2 * mesh.num_edges
        self.num_pressure_dofs = mesh.num_cells
        self._build_basis()
        self._quad_cache: dict[str, dict] = {}

    def _build_basis(self):
        mesh = self.mesh
        # functional r = 2*i + s of cell c: normal value at the endpoint with
        # the smaller (s=0) / larger (s=1) vertex id of global edge i
        epts = mesh.vertices[mesh.edges[mesh.cell_to_edges]]  # (C, 3, 2, 2)
        epts = epts.reshape(mesh.num_cells, 6, 2)
        enrm = np.repeat(mesh.edge_normals[mesh.cell_to_edges], 2, axis=1)  # (C, 6, 2)
        poly = np.stack([np.ones(epts.shape[:2]), epts[..., 0], epts[..., 1]], axis=-1)
        N = np.concatenate([poly * enrm[..., :1], poly * enrm[..., 1:]], axis=2)
        C = np.linalg.inv(N)  # (C, 6, 6)
        self.basis_coeffs = C.transpose(0, 2, 1).reshape(mesh.num_cells, 6, 2, 3)
        self.div_basis = self.basis_coeffs[:, :, 0, 1] + self.basis_coeffs[:, :, 1, 2]

    # -- quadrature caches ---------------------------------------------------

    def quad(self, kind: str) -> dict:
        """Per-cell quadrature data: physical points, scaled weights, bases."""
        if kind not in self._quad_cache:
            rule = quad_rule(kind)
            bary = rule.points  # (Q, 3)
            phys = np.einsum("qv,cvd->cqd", bary, self.mesh.vertices[self.mesh.cells])
            wts = 2.0 * self.mesh.areas[:, None] * rule.weights[None, :]  # (C, Q)
            self._quad_cache[kind] = {
                "rule": rule,
                "bary": bary,
                "points": phys,
                "weights": wts,
                "bdm1": self.bdm1_values(phys),
            }
        return self._quad_cache[kind]

    def bdm1_values(self, points: np.ndarray) -> np.ndarray:
        """Basis values at per-cell points (C, Q, 2) -> (C, Q, 6, 2)."""
        mono = np.stack(
            [np.ones(points.shape[:2]), points[..., 0], points[..., 1]], axis=-1
        )
        return np.einsum("cqk,cldk->cqld", mono, self.basis_coeffs)

    def bdm1_at_quad(self, coeffs: np.ndarray, kind: str) -> np.ndarray:
        """Evaluate a BDM1 coefficient vector at quadrature points (C, Q, 2)."""
        q = self.quad(kind)
        return np.einsum("cqld,cl->cqd", q["bdm1"], coeffs[self.cell_dofs])

    def p1_at_quad(self, vertex_values: np.ndarray, kind: str) -> np.ndarray:
        """Evaluate a per-cell P1 field (C, 3) at quadrature points (C, Q)."""
        return np.einsum("qv,cv->cq", self.quad(kind)["bary"], vertex_values)

    def bdm1_cell_means(self, coeffs: np.ndarray) -> np.ndarray:
        """Cell averages of a BDM1 field; exact since components are linear."""
        centroid = self.mesh.vertices[self.mesh.cells].mean(axis=1)  # (C, 2)
        mono = np.stack([np.ones(len(centroid)), centroid[:, 0], centroid[:, 1]], axis=-1)
        vals = np.einsum("ck,cldk->cld", mono, self.basis_coeffs)
        return np.einsum("cld,cl->cd", vals, coeffs[self.cell_dofs])


def interpolate_bdm1(disc: Discretization, u) -> np.ndarray:
    """Standard BDM1 interpolation of a smooth vector field.

    The normal trace on each edge is L2-projected onto linears along the
    edge (moments computed with 4-point Gauss), which preserves edge fluxes
    and hence commutes with the P0 projection of the divergence.  ``u`` maps
    points of shape (..., 2) to values of shape (..., 2).
    """
    mesh = disc.mesh
    s, w = edge_gauss_rule(4)
    a = mesh.vertices[mesh.edges[:, 0]]
    b = mesh.vertices[mesh.edges[:, 1]]
    pts = a[:, None, :] + s[None, :, None] * (b - a)[:, None, :]  # (E, G, 2)
    q = np.einsum("egd,ed->eg", np.asarray(u(pts), dtype=float), mesh.edge_normals)
    m0 = q @ w
    m1 = (q * s[None, :]) @ w
    coeffs = np.empty(2 * mesh.num_edges)
    coeffs[0::2] = 4.0 * m0 - 6.0 * m1
    coeffs[1::2] = -2.0 * m0 + 6.0 * m1
    return coeffs


def project_p0(disc: Discretization, p) -> np.ndarray:
    """L2 projection onto piecewise constants: cell means by the degree-6 rule."""
    q = disc.quad("high_order")
    vals = np.asarray(p(q["points"]), dtype=float)
    return np.einsum("cq,cq->c", q["weights"], vals) / disc.mesh.areas


def eval_field(disc: Discretization, coeffs, kind: str, point, cell: int):
    """Evaluate a discrete field at one physical point inside a hinted cell.

    ``kind`` selects the space: ``bdm1`` (coefficient vector, vector value),
    ``p0`` (per-cell constants), or ``p1`` (per-cell vertex value triples).
    The point must lie in the hinted cell up to 1e-12 in barycentric
    coordinates.
    """
    mesh = disc.mesh
    cv = mesh.vertices[mesh.cells[cell]]
    J = np.stack([cv[1] - cv[0], cv[2] - cv[0]], axis=1)
    ref = np.linalg.solve(J, np.asarray(point, dtype=float) - cv[0])
    bary = np.array([1.0 - ref.sum(), ref[0], ref[1]])
    if bary.min() < -1e-12:
        raise ValueError(
            f"point {point} outside cell {cell}: barycentric {bary}"
        )
    if kind == "p0":
        return float(np.asarray(coeffs)[cell])
    if kind == "p1":
        return float(np.asarray(coeffs)[cell] @ bary)
    if kind == "bdm1":
        mono = np.array([1.0, point[0], point[1]])
        vals = np.einsum("ldk,k->ld", disc.basis_coeffs[cell], mono)
        return np.asarray(coeffs)[disc.cell_dofs[cell]] @ vals
    raise ValueError(f"unknown field kind {kind!r}")


# -- prolongation between nested meshes -------------------------------------------


class VelocityProlongation:
    """Point evaluation of a coarse BDM1 field on a refined mesh.

    Realizes the composition with the inverse piecewise-affine refinement
    map: a fine-cell reference point is sent to parent reference
    coordinates, then evaluated with the coarse cell basis.  Sufficient for
    quadrature of differences between refinement levels.
    """

    def __init__(self, coarse_disc: Discretization, coeffs, refmap):
        self.disc = coarse_disc
        self.local_coeffs = np.asarray(coeffs)[coarse_disc.cell_dofs]  # (C, 6)
        self.refmap = refmap

    def at_reference(self, ref_points: np.ndarray) -> np.ndarray:
        """Values at the given fine-cell reference points, shape (F, Q, 2)."""
        parent_ref = self.refmap.parent_reference_coords(ref_points)  # (F, Q, 2)
        parents = self.refmap.parent_cell
        pv = self.disc.mesh.vertices[self.disc.mesh.cells[parents]]  # (F, 3, 2)
        bary = np.concatenate(
            [1.0 - parent_ref.sum(axis=-1, keepdims=True), parent_ref], axis=-1
        )
        phys = np.einsum("fqv,fvd->fqd", bary, pv)
        mono = np.stack([np.ones(phys.shape[:2]), phys[..., 0], phys[..., 1]], axis=-1)
        vals = np.einsum("fqk,fldk->fqld", mono, self.disc.basis_coeffs[parents])
        return np.einsum("fqld,fl->fqd", vals, self.local_coeffs[parents])

    def at_point(self, fine_cell: int, ref_point) -> np.ndarray:
        """Value at one reference point of one fine cell."""
        ci = self.refmap.child_index[fine_cell]
        parent = self.refmap.parent_cell[fine_cell]
        pref = self.refmap.child_ref_offset[ci] + self.refmap.child_ref_matrix[ci] @ np.asarray(ref_point, dtype=float)
        pv = self.disc.mesh.vertices[self.disc.mesh.cells[parent]]
        phys = (1.0 - pref.sum()) * pv[0] + pref[0] * pv[1] + pref[1] * pv[2]
        mono = np.array([1.0, phys[0], phys[1]])
        vals = np.einsum("ldk,k->ld", self.disc.basis_coeffs[parent], mono)
        return self.local_coeffs[parent] @ vals


def prolong_velocity(coarse_disc: Discretization, coeffs, refmap) -> VelocityProlongation:
    """Evaluation adapter for a coarse velocity field on the refined mesh."""
    return VelocityProlongation(coarse_disc, coeffs, refmap)
