"""Executable problem definitions.

Each scenario bundles a domain/mesh hierarchy, boundary conditions, the
time horizon and step-size rule, and (when available) the exact plane-wave
solution together with the closed-form time integral of its pressure.

The traveling profiles place the pulse outside the domain at t=0, so the
discrete initial data are near zero but are still computed by projection.
"""

from __future__ import annotations

import io
from dataclasses import dataclass
from importlib import resources

import numpy as np
from scipy.special import erf

from .mesh import (
    DIRICHLET_P,
    NEUMANN_U,
    SCATTERER,
    CircleProjector,
    TriMesh,
    generate_lshape_mesh,
    generate_rect_mesh,
    read_mesh,
    refine_regular,
)

SCATTERER_CENTER = (0.0, -1.0)
SCATTERER_RADIUS = 0.2


@dataclass(frozen=True)
class GaussianProfile:
    """g(s) = amplitude * exp(-width (s + shift)^2) with erf antiderivative."""

    amplitude: float
    width: float
    shift: float

    def __call__(self, s):
        return self.amplitude * np.exp(-self.width * (s + self.shift) ** 2)

    def derivative(self, s):
        return -2.0 * self.width * (s + self.shift) * self(s)

    def antiderivative(self, s):
        scale = self.amplitude * np.sqrt(np.pi / (4.0 * self.width))
        return scale * erf(np.sqrt(self.width) * (s + self.shift))


@dataclass(frozen=True)
class PlaneWave:
    """Exact traveling-wave pair u = k g(k.x - t), p = g(k.x - t), |k| = 1."""

    profile: GaussianProfile
    k: tuple

    def _phase(self, pts, t):
        pts = np.asarray(pts, dtype=float)
        return pts[..., 0] * self.k[0] + pts[..., 1] * self.k[1] - t

    def pressure(self, pts, t):
        return self.profile(self._phase(pts, t))

    def velocity(self, pts, t):
        g = self.profile(self._phase(pts, t))
        return np.stack([self.k[0] * g, self.k[1] * g], axis=-1)

    def velocity_dt(self, pts, t):
        gp = -self.profile.derivative(self._phase(pts, t))
        return np.stack([self.k[0] * gp, self.k[1] * gp], axis=-1)

    def pressure_integral(self, pts, t):
        """int_0^t p(., s) ds from the closed-form antiderivative."""
        pts = np.asarray(pts, dtype=float)
        kx = pts[..., 0] * self.k[0] + pts[..., 1] * self.k[1]
        G = self.profile.antiderivative
        return G(kx) - G(kx - t)


class Scenario:
    """A runnable problem: meshes per level, data, and run parameters."""

    def __init__(
        self,
        name: str,
        final_time: float,
        levels,
        mesh_builder,
        tau_rule,
        wave: PlaneWave = None,
        has_exact: bool = True,
        initial_velocity: str = "elliptic",
        boundary_data: bool = True,
    ):
        self.name = name
        self.final_time = float(final_time)
        self.levels = tuple(levels)
        self.initial_velocity = initial_velocity
        self.wave = wave
        self.has_exact = has_exact and wave is not None
        self._mesh_builder = mesh_builder
        self._tau_rule = tau_rule
        self._mesh_cache = {}
        self.boundary_pressure = self.pressure if (wave and boundary_data) else None

    def mesh_for_level(self, level: int):
        """The mesh at a refinement level, with the map from the previous one."""
        if level not in self._mesh_cache:
            self._mesh_cache[level] = self._mesh_builder(self, level)
        return self._mesh_cache[level]

    def tau_for(self, level: int) -> float:
        return self._tau_rule(level)

    # exact-solution callables (defined whenever a wave is attached; the
    # incoming wave also provides initial and boundary data for scenarios
    # without a usable exact solution)
    def pressure(self, pts, t):
        return self.wave.pressure(pts, t)

    def velocity(self, pts, t):
        return self.wave.velocity(pts, t)

    def velocity_dt(self, pts, t):
        return self.wave.velocity_dt(pts, t)

    def pressure_integral(self, pts, t):
        return self.wave.pressure_integral(pts, t)


def _rect_builder(scen, level):
    return generate_rect_mesh(((-1.0, 1.0), (-1.0, 1.0)), 2**level), None


def _lshape_builder(scen, level):
    return generate_lshape_mesh(2**level), None


def plane_wave_scenario(levels=(3, 4, 5, 6)) -> Scenario:
    """Plane-wave propagation in the square (-1,1)^2 up to T=5.

    Profile exp(-2(s+5)^2) traveling along (2,1)/sqrt(5); all boundary
    edges carry Dirichlet pressure data from the exact solution; tau = h/4.
    """
    wave = PlaneWave(
        profile=GaussianProfile(amplitude=1.0, width=2.0, shift=5.0),
        k=(2.0 / np.sqrt(5.0), 1.0 / np.sqrt(5.0)),
    )
    return Scenario(
        name="plane_wave",
        final_time=5.0,
        levels=levels,
        mesh_builder=_rect_builder,
        tau_rule=lambda level: 2.0 ** -(level + 2),
        wave=wave,
    )


def lshape_scenario(levels=(3, 4, 5)) -> Scenario:
    """The plane-wave test on the nonconvex L-shape (-1,1)^2 minus [0,1]^2."""
    base = plane_wave_scenario(levels)
    return Scenario(
        name="lshape",
        final_time=5.0,
        levels=levels,
        mesh_builder=_lshape_builder,
        tau_rule=base._tau_rule,
        wave=base.wave,
    )


def scattering_mesh_asset() -> TriMesh:
    """The shipped coarse mesh of the scattering domain (h around 2^-3)."""
    text = resources.files("lumpedwave").joinpath("assets/scattering_coarse.txt").read_text()
    return read_mesh(io.StringIO(text))


def _scattering_builder(scen, level):
    base = scen.levels[0]
    if level == base:
        return scattering_mesh_asset(), None
    if level < base:
        raise ValueError(f"level {level} below the coarse asset level {base}")
    coarse, _ = scen.mesh_for_level(level - 1)
    projector = CircleProjector(SCATTERER_CENTER, SCATTERER_RADIUS)
    return refine_regular(coarse, snap=projector)


def scattering_scenario(levels=(3, 4, 5, 6)) -> Scenario:
    """Scattering of an incoming pulse by a cylinder section, T=2.

    Domain (-1,1)^2 minus the disk of radius 0.2 about (0,-1): the left and
    right sides carry Dirichlet pressure from the incoming wave, top and
    bottom enforce n.u = 0, and the circular arc is sound-soft (p = 0,
    hence a zero natural load).  Meshes refine the shipped coarse asset
    with circle snapping; the time step is fixed at 1/1000.  No exact
    solution: convergence is measured between nested levels.
    """
    wave = PlaneWave(
        profile=GaussianProfile(amplitude=2.0, width=10.0, shift=3.0),
        k=(1.0, 0.0),
    )
    return Scenario(
        name="scattering",
        final_time=2.0,
        levels=levels,
        mesh_builder=_scattering_builder,
        tau_rule=lambda level: 1.0e-3,
        wave=wave,
        has_exact=False,
    )
