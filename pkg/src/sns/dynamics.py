"""Model state and right-hand side of the degenerate-viscosity system.

    d rho + div(rho u) dt = 0
    d(rho u) + [div(rho u (x) u) - div(rho grad u) + grad rho^gamma] dt = rho f dW

Transport is discretized with local Lax-Friedrichs (Rusanov) interface
fluxes on minmod-limited MUSCL traces of density and velocity.  The degenerate viscous term uses the compact face form
``D-(rho_face D+ u)`` along each axis, which makes its pairing with ``u``
exactly ``-sum(rho_face |D+ u|^2) dx^d``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from sns.fields import (
    Grid,
    ScalarField,
    VectorField,
    _check_grid,
    dminus,
    dplus,
    grad_array,
    shift,
)

__all__ = [
    "SimParams",
    "FluidState",
    "NoiseModel",
    "DerivedFields",
    "ValidationReport",
    "velocity",
    "derived",
    "pressure",
    "continuity_rhs",
    "momentum_drift",
    "momentum_drift_parts",
    "noise_coefficient",
    "validate_initial",
]


@dataclass(frozen=True)
class SimParams:
    gamma: float = 2.0
    delta: float = 0.5
    eps_vac: float = 1e-8
    cfl: float = 0.4
    visc_factor: float = 0.5
    T: float = 0.5
    dt_max: float = 0.05
    dt_min: float = 1e-12

    def __post_init__(self):
        if not 1 < self.gamma < 3:
            raise ValueError(f"gamma must lie in (1,3), got {self.gamma}")
        if not 0 < self.delta < 1:
            raise ValueError(f"delta must lie in (0,1), got {self.delta}")
        if not self.eps_vac > 0:
            raise ValueError("eps_vac must be positive")
        # cfl and visc_factor are nominally in (0,1]; larger values are
        # accepted so that deliberately unstable runs can be configured.
        if not (self.cfl > 0 and self.visc_factor > 0):
            raise ValueError("cfl and visc_factor must be positive")
        if not self.T >= 0:
            raise ValueError("T must be non-negative")
        if not 0 < self.dt_min < self.dt_max:
            raise ValueError("need 0 < dt_min < dt_max")


@dataclass(frozen=True, eq=False)
class FluidState:
    """Conserved pair (density, momentum) on a periodic grid."""

    rho: ScalarField
    m: VectorField

    def __post_init__(self):
        _check_grid(self.rho.grid, self.m.grid)
        if np.any(self.rho.values < 0):
            raise ValueError("density must be non-negative")

    @property
    def grid(self) -> Grid:
        return self.rho.grid

    @classmethod
    def from_arrays(cls, grid: Grid, rho: np.ndarray, m: np.ndarray) -> "FluidState":
        return cls(ScalarField(grid, rho), VectorField(grid, m))

    def vacuum_violation(self, eps_vac: float, tolerance_factor: float = 1.0) -> float:
        """Largest ``|m|`` on ``{rho <= eps_vac}`` in excess of ``sqrt(eps_vac) * tolerance_factor``."""
        vac = self.rho.values <= eps_vac
        if not vac.any():
            return 0.0
        mag = np.sqrt(np.sum(self.m.values**2, axis=0))[vac]
        return float(max(mag.max() - math.sqrt(eps_vac) * tolerance_factor, 0.0))


@dataclass(frozen=True, eq=False)
class NoiseModel:
    """Time-independent force profile ``f`` multiplying ``rho dW``."""

    f: VectorField
    active: bool = True

    @classmethod
    def inactive(cls, grid: Grid) -> "NoiseModel":
        return cls(VectorField(grid, np.zeros(grid.vector_shape)), active=False)

    @property
    def values(self) -> np.ndarray:
        return self.f.values if self.active else np.zeros_like(self.f.values)


@dataclass(frozen=True, eq=False)
class DerivedFields:
    u: VectorField
    theta: ScalarField
    q: VectorField
    r: VectorField


# -- array kernels ----------------------------------------------------------


def velocity_array(rho: np.ndarray, m: np.ndarray, eps_vac: float) -> np.ndarray:
    return m * (rho / (rho * rho + eps_vac * eps_vac))


def sound_speed_array(rho: np.ndarray, gamma: float) -> np.ndarray:
    return np.sqrt(gamma * np.maximum(rho, 0.0) ** (gamma - 1))


def wave_speed_array(rho: np.ndarray, u: np.ndarray, gamma: float) -> np.ndarray:
    return np.sqrt(np.sum(u * u, axis=0)) + sound_speed_array(rho, gamma)


def minmod(a, b):
    return np.where(a * b > 0, np.sign(a) * np.minimum(np.abs(a), np.abs(b)), 0.0)


def _faces(q, ax):
    """Minmod-limited left/right traces of ``q`` at the face ``j + 1/2``."""
    dq_minus = q - shift(q, 1, ax)
    dq_plus = shift(q, -1, ax) - q
    slope = 0.5 * minmod(dq_minus, dq_plus)
    left = q + slope
    right = shift(q - slope, -1, ax)
    return left, right


def transport_arrays(rho, u, dim, dx, gamma):
    """Rusanov flux divergences of mass and momentum with MUSCL traces.

    Density and velocity are reconstructed (so face densities stay
    non-negative and face velocities bounded by their neighbours near
    vacuum); face momentum is ``rho_face * u_face``.
    """
    d_rho = np.zeros_like(rho)
    d_m = np.zeros_like(u)
    for i in range(dim):
        ax = i - dim
        rl, rr = _faces(rho, ax)
        ul, ur = _faces(u, ax)
        ml, mr = rl * ul, rr * ur
        a = np.maximum(wave_speed_array(rl, ul, gamma), wave_speed_array(rr, ur, gamma))
        mass_face = 0.5 * (ml[i] + mr[i]) - 0.5 * a * (rr - rl)
        mom_face = 0.5 * (ml * ul[i] + mr * ur[i]) - 0.5 * a * (mr - ml)
        d_rho -= dminus(mass_face, ax, dx)
        d_m -= dminus(mom_face, ax, dx)
    return d_rho, d_m


def face_density(rho, ax):
    return 0.5 * (rho + shift(rho, -1, ax))


def viscous_array(rho, u, dim, dx):
    out = np.zeros_like(u)
    for i in range(dim):
        ax = i - dim
        out += dminus(face_density(rho, ax) * dplus(u, ax, dx), ax, dx)
    return out


def viscous_dissipation_array(rho, u, dim, dx):
    """``sum_faces rho_face |D+ u|^2 dx^d``, the exact dissipation of :func:`viscous_array`."""
    total = 0.0
    for i in range(dim):
        ax = i - dim
        total += float(np.sum(face_density(rho, ax) * dplus(u, ax, dx) ** 2))
    return total * dx**dim


def rhs_arrays(rho, m, grid: Grid, params: SimParams):
    """Deterministic tendencies ``(d rho/dt, d m/dt)`` on raw arrays."""
    dim, dx = grid.dim, grid.dx
    rho_p = np.maximum(rho, 0.0)
    u = velocity_array(rho_p, m, params.eps_vac)
    drho, dm = transport_arrays(rho_p, u, dim, dx, params.gamma)
    dm += viscous_array(rho_p, u, dim, dx)
    dm -= grad_array(rho_p**params.gamma, dim, dx)
    return drho, dm


# -- public operations ------------------------------------------------------


def velocity(state: FluidState, eps_vac: float) -> VectorField:
    """Desingularized velocity ``m rho / (rho^2 + eps^2)``; vanishes continuously on vacuum."""
    return VectorField(state.grid, velocity_array(state.rho.values, state.m.values, eps_vac))


def derived(state: FluidState, params: SimParams) -> DerivedFields:
    rho = state.rho.values
    if np.any(rho < 0):
        raise ValueError("negative density")
    g = state.grid
    u = velocity_array(rho, state.m.values, params.eps_vac)
    theta = np.sqrt(rho)
    return DerivedFields(
        u=VectorField(g, u),
        theta=ScalarField(g, theta),
        q=VectorField(g, theta * u),
        r=VectorField(g, rho ** (1.0 / (2.0 + params.delta)) * u),
    )


def pressure(rho: ScalarField, gamma: float) -> ScalarField:
    if not 1 < gamma < 3:
        raise ValueError(f"gamma must lie in (1,3), got {gamma}")
    if np.any(rho.values < 0):
        raise ValueError("negative density")
    return ScalarField(rho.grid, rho.values**gamma)


def _prepare(state: FluidState, params: SimParams):
    g = state.grid
    rho, m = state.rho.values, state.m.values
    u = velocity_array(rho, m, params.eps_vac)
    d_rho, d_m = transport_arrays(rho, u, g.dim, g.dx, params.gamma)
    return rho, u, d_rho, d_m


def continuity_rhs(state: FluidState, params: SimParams) -> ScalarField:
    """Rusanov/MUSCL approximation of ``-div(rho u)``."""
    return ScalarField(state.grid, _prepare(state, params)[2])


def momentum_drift_parts(state: FluidState, params: SimParams) -> dict[str, VectorField]:
    """Convective, viscous and pressure contributions to the momentum drift."""
    g = state.grid
    rho, u, _, d_m = _prepare(state, params)
    return {
        "convective": VectorField(g, d_m),
        "viscous": VectorField(g, viscous_array(rho, u, g.dim, g.dx)),
        "pressure": VectorField(g, -grad_array(rho**params.gamma, g.dim, g.dx)),
    }


def momentum_drift(state: FluidState, params: SimParams) -> VectorField:
    parts = momentum_drift_parts(state, params)
    return parts["convective"] + parts["viscous"] + parts["pressure"]


def noise_coefficient(state: FluidState, noise: NoiseModel) -> VectorField:
    _check_grid(state.grid, noise.f.grid)
    return VectorField(state.grid, state.rho.values[None] * noise.values)


@dataclass
class ValidationReport:
    min_rho: float
    max_vacuum_momentum: float
    kinetic: float
    fisher: float
    potential: float
    mv_energy: float
    nonnegative: bool
    vacuum_compatible: bool
    finite: bool
    violations: list[tuple[int, ...]] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.nonnegative and self.vacuum_compatible and self.finite


def validate_initial(rho0: ScalarField, m0: VectorField, params: SimParams) -> ValidationReport:
    """Check non-negativity, vacuum compatibility and the initial energy-class integrals.

    ``kinetic`` is the integral of rho|u|^2, ``fisher`` the integral of
    rho|grad log rho|^2 evaluated as 4|grad sqrt(rho)|^2, ``potential`` the
    integral of rho^gamma and ``mv_energy`` the (2+delta)-moment functional.
    """
    _check_grid(rho0.grid, m0.grid)
    g = rho0.grid
    rho, m = rho0.values, m0.values
    eps = params.eps_vac
    vol = g.cell_volume

    neg = rho < 0
    mag = np.sqrt(np.sum(m * m, axis=0))
    vac = rho <= eps
    bad = vac & (mag > math.sqrt(eps))
    violations = [tuple(int(i) for i in idx) for idx in np.argwhere(neg | bad)]

    rho_p = np.maximum(rho, 0.0)
    u = velocity_array(rho_p, m, eps)
    speed = np.sqrt(np.sum(u * u, axis=0))
    theta = np.sqrt(rho_p)
    report = ValidationReport(
        min_rho=float(rho.min()),
        max_vacuum_momentum=float(mag[vac].max()) if vac.any() else 0.0,
        kinetic=float(np.sum(rho_p * speed**2) * vol),
        fisher=float(4 * np.sum(grad_array(theta, g.dim, g.dx) ** 2) * vol),
        potential=float(np.sum(rho_p**params.gamma) * vol),
        mv_energy=float(np.sum(rho_p * speed ** (2 + params.delta)) * vol / (2 + params.delta)),
        nonnegative=not neg.any(),
        vacuum_compatible=not bad.any(),
        finite=bool(np.all(np.isfinite(rho)) and np.all(np.isfinite(m))),
        violations=violations,
    )
    return report
