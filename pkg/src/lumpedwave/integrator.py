"""Explicit leapfrog time stepping for the mass-lumped mixed system.

Velocity lives at half-integer time levels, pressure at integer levels.
A state at level n holds both bracketing velocities u^{n-1/2}, u^{n+1/2}
and the pressure p^n, so time averages, difference quotients, and the
discrete energy at level n are available without extra storage.  The
update from level n to n+1 is

    p^{n+1}   = p^n - tau D^{-1} B u^{n+1/2}
    u^{n+3/2} = u^{n+1/2} + tau M^{-1} (B^T p^{n+1} + l(t^{n+1}))

with M the lumped (block-diagonal) velocity mass, D the diagonal pressure
mass, B the divergence coupling, and l the Dirichlet boundary load.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from . import analysis, postprocess
from .assembly import DofMap, Operators, apply_normal_bc, assemble_operators, build_dofmap
from .fem import Discretization, interpolate_bdm1, project_p0
from .linalg import AmgPreconditioner
from .mesh import TriMesh


class UnstableError(RuntimeError):
    """Nonfinite values appeared during stepping (CFL violation suspected)."""


@dataclass
class LeapfrogState:
    """Staggered solution pair at integer level n.

    ``u_minus``/``u_plus`` are the velocity coefficients at t^{n-1/2} and
    t^{n+1/2}; ``p`` the pressure at t^n.  Constrained velocity dofs are
    zero in both half-step vectors.
    """

    u_minus: np.ndarray
    u_plus: np.ndarray
    p: np.ndarray
    n: int
    tau: float

    @property
    def time(self) -> float:
        return self.n * self.tau

    @property
    def u_hat(self) -> np.ndarray:
        """Average of the two bracketing velocities, approximating u(t^n)."""
        return 0.5 * (self.u_plus + self.u_minus)

    @property
    def dtau_u(self) -> np.ndarray:
        """Centered difference quotient of the velocity at t^n."""
        return (self.u_plus - self.u_minus) / self.tau


def cfl_estimate(
    mesh: TriMesh,
    dofmap: DofMap,
    mass,
    div,
    areas,
    tol: float = 1e-8,
    max_iters: int = 20000,
    seed: int = 0,
):
    """Inverse-inequality constant and largest stable time step.

    Power-iterates the generalized eigenproblem (B^T D^-1 B) x = lambda M x
    on the unconstrained subspace until the Rayleigh quotient changes by
    less than ``tol`` relatively.  Returns (c, tau_max) with
    c = h_max * sqrt(lambda_max) and tau_max = 1/sqrt(lambda_max), the
    time step for which ||div v|| <= (1/tau) ||v||_h holds with equality
    margin.
    """
    rng = np.random.default_rng(seed)
    free = ~dofmap.constrained
    x = rng.standard_normal(dofmap.num_velocity)
    x[~free] = 0.0
    x /= np.sqrt(mass.quadratic_form(x))
    lam = 0.0
    for _ in range(max_iters):
        y = div.T @ ((div @ x) / areas)
        lam_new = float(np.dot(x, y))  # x is M-normalized
        z = mass.solve(y)
        z[~free] = 0.0
        x = z / np.sqrt(mass.quadratic_form(z))
        if lam_new > 0.0 and abs(lam_new - lam) <= tol * lam_new:
            lam = lam_new
            break
        lam = lam_new
    else:
        raise RuntimeError(f"power iteration did not converge in {max_iters} iterations")
    c = mesh.h_max * np.sqrt(lam)
    return c, 1.0 / np.sqrt(lam)


def init_half_step(u0: np.ndarray, p0: np.ndarray, ops: Operators, tau: float) -> np.ndarray:
    """Velocity at t^{-1/2}: u0 - (tau/2) M^{-1} (B^T p0 + l(0))."""
    rhs = ops.div.T @ p0
    load = ops.load(0.0)
    if load is not None:
        rhs = rhs + load
    u_minus = u0 - 0.5 * tau * ops.mass.solve(rhs)
    return apply_normal_bc(ops.dofmap, u_minus)


def initial_state(u0: np.ndarray, p0: np.ndarray, ops: Operators, tau: float) -> LeapfrogState:
    """State at level 0, with u^{+1/2} from the first velocity update."""
    rhs = ops.div.T @ p0
    load = ops.load(0.0)
    if load is not None:
        rhs = rhs + load
    kick = ops.mass.solve(rhs)
    u_minus = apply_normal_bc(ops.dofmap, u0 - 0.5 * tau * kick)
    u_plus = apply_normal_bc(ops.dofmap, u0 + 0.5 * tau * kick)
    return LeapfrogState(u_minus=u_minus, u_plus=u_plus, p=np.array(p0, dtype=float), n=0, tau=tau)


def step(state: LeapfrogState, ops: Operators) -> LeapfrogState:
    """Advance one leapfrog step; raises UnstableError on nonfinite values."""
    tau = state.tau
    p_new = state.p - tau * (ops.div @ state.u_plus) / ops.areas
    rhs = ops.div.T @ p_new
    load = ops.load((state.n + 1) * tau)
    if load is not None:
        rhs = rhs + load
    u_next = state.u_plus + tau * ops.mass.solve(rhs)
    u_next = apply_normal_bc(ops.dofmap, u_next)
    if not (np.isfinite(p_new).all() and np.isfinite(u_next).all()):
        raise UnstableError(
            f"nonfinite values at step {state.n + 1}; time step likely violates the CFL bound"
        )
    return LeapfrogState(u_minus=state.u_plus, u_plus=u_next, p=p_new, n=state.n + 1, tau=tau)


def discrete_energy(state: LeapfrogState, ops: Operators) -> float:
    """E^n = ||u_hat||_h^2 + ||p||^2 - (tau^2/4) ||d_tau u||_h^2.

    Conserved exactly by the homogeneous scheme; nonnegative under the CFL
    bound, with ||u_hat||_h^2 + ||p||^2 <= 2 E^n.
    """
    a = ops.mass.quadratic_form(state.u_hat)
    b = float(np.dot(state.p, ops.areas * state.p))
    d = ops.mass.quadratic_form(state.dtau_u)
    return a + b - 0.25 * state.tau**2 * d


class LevelSetup:
    """Everything assembled for one (scenario, mesh level) pair.

    Lazily provides the CFL estimate, the AMG preconditioner on the lumped
    Schur complement, elliptic projections, and post-processing with a
    warm-started saddle solver.
    """

    def __init__(self, scenario, level: int):
        self.scenario = scenario
        self.level = level
        self.mesh, self.refmap = scenario.mesh_for_level(level)
        self.disc = Discretization(self.mesh)
        self.dofmap = build_dofmap(self.mesh)
        self.ops = assemble_operators(self.disc, self.dofmap, scenario.boundary_pressure)
        self.tau = scenario.tau_for(level)
        self._pp_warm = None
        self._aux_cache: dict[int, np.ndarray] = {}

    @cached_property
    def cfl(self):
        return cfl_estimate(self.mesh, self.dofmap, self.ops.mass, self.ops.div, self.ops.areas)

    @cached_property
    def schur_prec(self) -> AmgPreconditioner:
        return AmgPreconditioner(self.ops.schur_lumped())

    def elliptic_projection(self, w, r=None, boundary_r=None):
        return analysis.inexact_elliptic_projection(
            self.ops, w, r, boundary_r, prec=self.schur_prec
        )

    def auxiliary_velocity_at(self, half_step_index: int) -> np.ndarray:
        """u_h^* at time (half_step_index/2)*tau, cached by half index."""
        if half_step_index not in self._aux_cache:
            t = 0.5 * half_step_index * self.tau
            self._aux_cache[half_step_index] = analysis.auxiliary_velocity(self, t)
            if len(self._aux_cache) > 8:
                self._aux_cache.pop(next(iter(self._aux_cache)))
        return self._aux_cache[half_step_index]

    def pp_pressure(self, dtu: np.ndarray, p: np.ndarray) -> np.ndarray:
        return postprocess.pp_pressure(self.disc, dtu, p)

    def pp_velocity(self, u_hat: np.ndarray):
        u_tilde, r_tilde = postprocess.pp_velocity(
            self.disc,
            self.ops,
            u_hat,
            prec=self.schur_prec,
            y0=self._pp_warm,
        )
        self._pp_warm = r_tilde
        return u_tilde, r_tilde

    def initial_coefficients(self):
        """Discrete initial data (u0, p0) per the scenario's choice.

        The default routes u(0) through the inexact elliptic projection;
        the cheaper alternative interpolates it into the BDM1 space.
        Constrained dofs are zeroed either way.
        """
        scen = self.scenario
        u_exact = lambda pts: scen.velocity(pts, 0.0)
        if scen.initial_velocity == "elliptic":
            u0, _ = self.elliptic_projection(u_exact)
        elif scen.initial_velocity == "interpolation":
            u0 = interpolate_bdm1(self.disc, u_exact)
        else:
            raise ValueError(f"unknown initial velocity mode {scen.initial_velocity!r}")
        u0 = apply_normal_bc(self.dofmap, u0)
        p0 = project_p0(self.disc, lambda pts: scen.pressure(pts, 0.0))
        return u0, p0


@dataclass
class RunResult:
    setup: LevelSetup
    final_state: LeapfrogState
    num_steps: int
    tau: float


def run(
    scenario,
    level: int,
    observers=(),
    tau: float = None,
    allow_cfl_violation: bool = False,
    setup: LevelSetup = None,
) -> RunResult:
    """Execute N = T/tau leapfrog steps, observing at integer levels.

    Observers are objects with ``wants(n) -> bool`` and
    ``observe(state, setup)``; they see every integer level n = 0..N they
    ask for, including the initial one.  The time step must satisfy the
    estimated CFL bound unless ``allow_cfl_violation`` is set.
    """
    if setup is None:
        setup = LevelSetup(scenario, level)
    if tau is None:
        tau = setup.tau
    T = scenario.final_time
    num_steps = int(round(T / tau))
    if abs(num_steps * tau - T) > 1e-9 * max(T, 1.0):
        raise ValueError(f"final time {T} is not a multiple of tau={tau}")
    if not allow_cfl_violation:
        _, tau_max = setup.cfl
        if tau > tau_max * (1.0 + 1e-12):
            raise ValueError(
                f"tau={tau:g} exceeds the CFL bound tau_max={tau_max:g}; "
                "pass allow_cfl_violation to override"
            )

    u0, p0 = setup.initial_coefficients()
    state = initial_state(u0, p0, setup.ops, tau)
    while True:
        for obs in observers:
            if obs.wants(state.n):
                obs.observe(state, setup)
        if state.n >= num_steps:
            break
        state = step(state, setup.ops)
    return RunResult(setup=setup, final_state=state, num_steps=num_steps, tau=tau)
