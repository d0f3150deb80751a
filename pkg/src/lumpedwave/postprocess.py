"""Superconvergent post-processing of the raw mixed approximation.

Two reconstructions lift the first-order lumped solution to second order:

* ``pp_pressure`` builds a piecewise linear (discontinuous) pressure cell
  by cell from the velocity difference quotient, fixing the cell mean to
  the raw pressure.  The local system is solvable in closed form: the
  gradient equals minus the cell mean of the difference quotient, and the
  mean constraint pins the constant.

* ``pp_velocity`` solves one global mixed system with the consistent mass:
  the reconstruction agrees with the raw velocity in the lumped pairing up
  to a divergence-orthogonal correction and matches its divergence exactly.

Both are diagnostic: they are applied at observer-requested time levels,
not inside the time loop.  If every velocity dof were constrained the
velocity system would need a pressure gauge; that case is not exercised by
the shipped scenarios and is left undone.
"""

from __future__ import annotations

import numpy as np

from .assembly import Operators
from .fem import Discretization
from .linalg import saddle_solve


def pp_pressure(disc: Discretization, dtu: np.ndarray, p: np.ndarray) -> np.ndarray:
    """Local P1 pressure reconstruction, one vertex-value triple per cell.

    On each cell the reconstructed gradient satisfies
    (grad ptilde, grad q) = -(dtu, grad q) for linear q, i.e. it equals
    minus the cell mean of ``dtu``, and the cell mean of ``ptilde`` equals
    the raw pressure ``p``.  Integrands are polynomial, so the result is
    exact up to rounding.  Returns vertex values of shape (C, 3).
    """
    mesh = disc.mesh
    grad = -disc.bdm1_cell_means(dtu)  # (C, 2)
    corners = mesh.vertices[mesh.cells]  # (C, 3, 2)
    offsets = corners - corners.mean(axis=1, keepdims=True)
    return np.asarray(p)[:, None] + np.einsum("cvd,cd->cv", offsets, grad)


def p1_cell_means(values: np.ndarray) -> np.ndarray:
    """Cell means of a P1 field given per-cell vertex values."""
    return np.asarray(values).mean(axis=1)


def pp_velocity(
    disc: Discretization,
    ops: Operators,
    u_hat: np.ndarray,
    prec=None,
    y0=None,
):
    """Global velocity reconstruction in the full (unconstrained) space.

    Solves, with M the consistent mass and B the divergence coupling,

        M u_tilde - B^T r_tilde = M_h u_hat,   B u_tilde = B u_hat,

    where M_h is the plain lumped mass (no boundary-condition rows).  The
    inner CG on M is preconditioned with the block-diagonal lumped inverse
    (spectrally within [1, 4] of M); ``prec`` optionally preconditions the
    outer Schur iteration and ``y0`` warm-starts it.  Returns
    (u_tilde, r_tilde).
    """
    f = ops.mass_plain.matvec(np.asarray(u_hat, dtype=float))
    g = ops.div @ u_hat
    x, y = saddle_solve(
        ops.exact_mass,
        ops.div,
        f,
        g,
        prec=prec,
        inner_prec=ops.mass_plain.solve,
        y0=y0,
    )
    return x, y
