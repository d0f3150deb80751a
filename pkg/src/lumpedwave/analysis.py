"""Verification instruments.

L2 error norms against exact callables, estimated orders of convergence,
the inexact elliptic projection (the lumped-product analogue of the mixed
elliptic projection, whose pressure component superconverges), the
auxiliary velocity it induces at any time, superconvergence samplers for
runs with exact solutions, and quadrature-based comparison of fields across
nested refinement levels for the self-convergence studies.

Everything here is a pure computation over immutable run outputs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .assembly import Operators
from .fem import Discretization, edge_gauss_rule, project_p0
from .linalg import saddle_solve


# -- norms and convergence orders -------------------------------------------------


def error_l2(disc: Discretization, coeffs, exact, kind: str) -> float:
    """L2 distance between a discrete field and an exact callable.

    ``kind`` is ``bdm1`` (vector), ``p0``, or ``p1``; ``exact`` maps point
    arrays (..., 2) to values.  Integration uses the degree-6 rule.
    """
    q = disc.quad("high_order")
    ex = np.asarray(exact(q["points"]), dtype=float)
    if kind == "bdm1":
        vals = disc.bdm1_at_quad(np.asarray(coeffs, dtype=float), "high_order")
        diff2 = ((vals - ex) ** 2).sum(axis=-1)
    elif kind == "p0":
        diff2 = (np.asarray(coeffs, dtype=float)[:, None] - ex) ** 2
    elif kind == "p1":
        vals = disc.p1_at_quad(np.asarray(coeffs, dtype=float), "high_order")
        diff2 = (vals - ex) ** 2
    else:
        raise ValueError(f"unknown field kind {kind!r}")
    return float(np.sqrt(np.sum(q["weights"] * diff2)))


def velocity_l2(ops: Operators, coeffs: np.ndarray) -> float:
    """L2 norm of a BDM1 coefficient vector via the consistent mass."""
    c = np.asarray(coeffs, dtype=float)
    return float(np.sqrt(c @ (ops.exact_mass @ c)))


def pressure_l2(ops: Operators, coeffs: np.ndarray) -> float:
    """L2 norm of a P0 coefficient vector."""
    c = np.asarray(coeffs, dtype=float)
    return float(np.sqrt(np.dot(c, ops.areas * c)))


def eoc(errors) -> list:
    """log2 ratios of consecutive errors; None where undefined."""
    out = [None]
    for a, b in zip(errors, errors[1:]):
        if a is None or b is None or a <= 0.0 or b <= 0.0:
            out.append(None)
        else:
            out.append(math.log2(a / b))
    return out


@dataclass
class ErrorReport:
    """Per-level error norms with estimated orders of convergence."""

    levels: list
    h: list
    tau: list
    norms: dict = field(default_factory=dict)

    def eoc_for(self, name: str) -> list:
        return eoc(self.norms[name])

    def to_csv(self, stream) -> None:
        names = list(self.norms)
        header = ["h", "tau"]
        for n in names:
            header += [n, f"eoc_{n}"]
        stream.write(",".join(header) + "\n")
        rates = {n: self.eoc_for(n) for n in names}
        for i in range(len(self.levels)):
            row = [_fmt(self.h[i]), _fmt(self.tau[i])]
            for n in names:
                row.append(_fmt(self.norms[n][i]))
                row.append(_fmt(rates[n][i]))
            stream.write(",".join(row) + "\n")


def _fmt(x) -> str:
    return "" if x is None else f"{x:.12g}"


# -- inexact elliptic projection ----------------------------------------------------


def divergence_moments(disc: Discretization, w) -> np.ndarray:
    """Cell moments (div w, 1)_K computed as boundary fluxes of ``w``.

    Uses the identity int_K div w = contour integral of w.n over the cell
    boundary with 4-point Gauss per edge, so only ``w`` itself is needed.
    """
    mesh = disc.mesh
    s, gw = edge_gauss_rule(4)
    a = mesh.vertices[mesh.edges[:, 0]]
    b = mesh.vertices[mesh.edges[:, 1]]
    pts = a[:, None, :] + s[None, :, None] * (b - a)[:, None, :]
    wn = np.einsum("egd,ed->eg", np.asarray(w(pts), dtype=float), mesh.edge_normals)
    flux = (wn @ gw) * mesh.edge_lengths
    return np.einsum(
        "ci,ci->c", mesh.cell_edge_signs.astype(float), flux[mesh.cell_to_edges]
    )


def inexact_elliptic_projection(
    ops: Operators, w, r=None, boundary_r=None, prec=None
):
    """Mixed projection of (w, r) defined with the lumped velocity product.

    Finds (w_h, r_h) with, for all discrete v and q,

        (w_h, v)_h - (r_h, div v) = (w, v) - (r, div v) - <boundary_r, n.v>
        (div w_h, q) = (div w, q),

    the boundary pairing taken over ``dirichlet_p`` edges (it vanishes for
    the homogeneous model; for inhomogeneous data it carries the time
    integral of the boundary pressure).  ``r`` and ``boundary_r`` may be
    None when zero.  Solved as a Schur-complement system on the lumped
    mass; ``prec`` preconditions the outer CG.
    """
    disc = ops.disc
    q = disc.quad("high_order")
    wv = np.asarray(w(q["points"]), dtype=float)
    f_loc = np.einsum("cq,cqld,cqd->cl", q["weights"], q["bdm1"], wv)
    if r is not None:
        r_int = np.einsum("cq,cq->c", q["weights"], np.asarray(r(q["points"]), dtype=float))
        f_loc -= disc.div_basis * r_int[:, None]
    f = np.bincount(
        disc.cell_dofs.ravel(), weights=f_loc.ravel(), minlength=ops.dofmap.num_velocity
    )
    if boundary_r is not None:
        f += ops.boundary_load(lambda pts, t: boundary_r(pts), 0.0)
    g = divergence_moments(disc, w)
    return saddle_solve(ops.mass, ops.div, f, g, prec=prec)


def auxiliary_velocity(setup, t: float) -> np.ndarray:
    """The velocity component u_h^*(t) of the auxiliary pair.

    Equal to the inexact elliptic projection of (u(t), int_0^t p ds),
    which follows from integrating the defining evolution of the auxiliary
    functions in time.  No boundary term appears: the evolution right-hand
    side (du/dt, v) - (p, div v) carries the Dirichlet boundary data
    implicitly through the momentum equation, so the time-integrated
    identity closes with volume data alone.  Requires a scenario with
    exact callables.
    """
    scen = setup.scenario
    w = lambda pts: scen.velocity(pts, t)
    r = None if t == 0.0 else (lambda pts: scen.pressure_integral(pts, t))
    w_h, _ = setup.elliptic_projection(w, r)
    return w_h


# -- run-time samplers ---------------------------------------------------------------

RAW_NORMS = ("err_u", "err_p")
SUPER_NORMS = ("super_u", "super_p")
POST_NORMS = ("post_u", "post_p")


class ErrorSampler:
    """Observer recording named error norms at sampled integer levels.

    Supported names: ``err_u``/``err_p`` (raw errors against the exact
    solution, the time average of the velocity pairing with u(t^n)),
    ``super_u`` (distance to the averaged auxiliary velocity),
    ``super_p`` (distance of the raw pressure to the projected exact
    pressure), ``post_u``/``post_p`` (errors of the post-processed fields).
    """

    def __init__(self, setup, names=RAW_NORMS, stride: int = 1):
        self.names = tuple(names)
        self.stride = int(stride)
        self.times = []
        self.series = {name: [] for name in self.names}

    def wants(self, n: int) -> bool:
        return n % self.stride == 0

    def observe(self, state, setup) -> None:
        scen = setup.scenario
        t = state.time
        self.times.append(t)
        vals = {}
        if "err_u" in self.names:
            vals["err_u"] = error_l2(
                setup.disc, state.u_hat, lambda pts: scen.velocity(pts, t), "bdm1"
            )
        if "err_p" in self.names:
            vals["err_p"] = error_l2(
                setup.disc, state.p, lambda pts: scen.pressure(pts, t), "p0"
            )
        if "super_u" in self.names:
            star = 0.5 * (
                setup.auxiliary_velocity_at(2 * state.n + 1)
                + setup.auxiliary_velocity_at(2 * state.n - 1)
            )
            vals["super_u"] = velocity_l2(setup.ops, state.u_hat - star)
        if "super_p" in self.names:
            proj = project_p0(setup.disc, lambda pts: scen.pressure(pts, t))
            vals["super_p"] = pressure_l2(setup.ops, state.p - proj)
        if "post_p" in self.names:
            ptilde = setup.pp_pressure(state.dtau_u, state.p)
            vals["post_p"] = error_l2(
                setup.disc, ptilde, lambda pts: scen.pressure(pts, t), "p1"
            )
        if "post_u" in self.names:
            utilde, _ = setup.pp_velocity(state.u_hat)
            vals["post_u"] = error_l2(
                setup.disc, utilde, lambda pts: scen.velocity(pts, t), "bdm1"
            )
        for name in self.names:
            self.series[name].append(vals[name])

    def max_norms(self) -> dict:
        return {name: max(series) for name, series in self.series.items()}


class FieldCapture:
    """Observer storing post-processed fields at sampled levels.

    Keeps ``u_tilde[n]`` (BDM1 coefficients) and ``p_tilde[n]`` (per-cell
    P1 vertex values) for the self-convergence comparison across meshes.
    """

    def __init__(self, stride: int = 1, velocity: bool = True, pressure: bool = True):
        self.stride = int(stride)
        self.velocity = velocity
        self.pressure = pressure
        self.u_tilde: dict[int, np.ndarray] = {}
        self.p_tilde: dict[int, np.ndarray] = {}

    def wants(self, n: int) -> bool:
        return n % self.stride == 0

    def observe(self, state, setup) -> None:
        if self.pressure:
            self.p_tilde[state.n] = setup.pp_pressure(state.dtau_u, state.p)
        if self.velocity:
            self.u_tilde[state.n], _ = setup.pp_velocity(state.u_hat)


# -- nested-mesh comparison -----------------------------------------------------------


class NestedComparison:
    """Quadrature of differences between a mesh and its refinement.

    The coarse field is evaluated through the inverse of the piecewise
    affine refinement map (exactly the prolongation used to compare
    discrete functions across levels); the difference is integrated with
    the fine mesh's degree-6 rule.
    """

    def __init__(self, fine_disc: Discretization, coarse_disc: Discretization, refmap):
        if refmap is None:
            raise ValueError("meshes are not linked by a refinement map")
        if refmap.num_fine_cells != fine_disc.mesh.num_cells:
            raise ValueError("refinement map does not match the fine mesh")
        self.fine = fine_disc
        self.coarse = coarse_disc
        self.refmap = refmap
        q = fine_disc.quad("high_order")
        self.weights = q["weights"]
        ref_xy = q["rule"].xy  # (Q, 2) fine-cell reference points
        pref = refmap.parent_reference_coords(ref_xy)  # (F, Q, 2)
        self.parent_bary = np.concatenate(
            [1.0 - pref.sum(axis=-1, keepdims=True), pref], axis=-1
        )
        parents = refmap.parent_cell
        pv = coarse_disc.mesh.vertices[coarse_disc.mesh.cells[parents]]
        phys = np.einsum("fqv,fvd->fqd", self.parent_bary, pv)
        mono = np.stack([np.ones(phys.shape[:2]), phys[..., 0], phys[..., 1]], axis=-1)
        self.coarse_basis = np.einsum(
            "fqk,fldk->fqld", mono, coarse_disc.basis_coeffs[parents]
        )
        self.parents = parents

    def velocity_diff(self, fine_coeffs, coarse_coeffs) -> float:
        """||u_fine - prolonged u_coarse|| over the fine mesh."""
        fine_vals = self.fine.bdm1_at_quad(np.asarray(fine_coeffs, dtype=float), "high_order")
        local = np.asarray(coarse_coeffs, dtype=float)[self.coarse.cell_dofs]
        coarse_vals = np.einsum("fqld,fl->fqd", self.coarse_basis, local[self.parents])
        diff2 = ((fine_vals - coarse_vals) ** 2).sum(axis=-1)
        return float(np.sqrt(np.sum(self.weights * diff2)))

    def pressure_p1_diff(self, fine_vals, coarse_vals) -> float:
        """||p_fine - prolonged p_coarse|| for per-cell P1 vertex values."""
        fv = self.fine.p1_at_quad(np.asarray(fine_vals, dtype=float), "high_order")
        cv = np.einsum(
            "fqv,fv->fq", self.parent_bary, np.asarray(coarse_vals, dtype=float)[self.parents]
        )
        return float(np.sqrt(np.sum(self.weights * (fv - cv) ** 2)))


def self_convergence(fine_setup, fine_capture: FieldCapture, coarse_setup, coarse_capture: FieldCapture) -> dict:
    """Max-over-time L2 differences between nested post-processed runs.

    Both captures must have observed identical step indices (the studies
    run with a fixed time step across levels).  Returns ``self_post_u``
    and ``self_post_p``.
    """
    cmp_ = NestedComparison(fine_setup.disc, coarse_setup.disc, fine_setup.refmap)
    keys = sorted(fine_capture.u_tilde or fine_capture.p_tilde)
    coarse_keys = sorted(coarse_capture.u_tilde or coarse_capture.p_tilde)
    if keys != coarse_keys:
        raise ValueError("runs captured different output times")
    out = {}
    if fine_capture.velocity:
        out["self_post_u"] = max(
            cmp_.velocity_diff(fine_capture.u_tilde[n], coarse_capture.u_tilde[n])
            for n in keys
        )
    if fine_capture.pressure:
        out["self_post_p"] = max(
            cmp_.pressure_p1_diff(fine_capture.p_tilde[n], coarse_capture.p_tilde[n])
            for n in keys
        )
    return out
