"""Brownian paths and the split Heun / Euler-Maruyama time stepper.

Brownian increments live on dyadic levels: level ``L`` has step
``dt_base / 2**L``.  Level 0 is drawn directly and every finer level is
obtained by Brownian-bridge splitting of the level above, with the
midpoint normals taken from a per-level counter-based stream.  All
increments are rounded to multiples of ``2**-44``, which makes the
bridge split exact in floating point: a coarse increment is always the
bit-exact sum of its two children.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from sns.diagnostics import DiagnosticsRecord, state_functionals, stochastic_integrands
from sns.dynamics import (
    FluidState,
    NoiseModel,
    SimParams,
    rhs_arrays,
    validate_initial,
    velocity_array,
    wave_speed_array,
)
from sns.fields import Grid, ScalarField, VectorField, _check_grid

__all__ = [
    "WienerPath",
    "Trajectory",
    "StepRecord",
    "IntegrationError",
    "StabilityError",
    "generate_path",
    "stable_dt",
    "step",
    "simulate",
]

QUANTUM = 2.0**-44
MAX_LEVEL = 40


def _quantize(x: np.ndarray) -> np.ndarray:
    return np.round(x / QUANTUM) * QUANTUM


def _normals(seed: int, level: int, count: int) -> np.ndarray:
    ss = np.random.SeedSequence([seed & (2**64 - 1), level])
    return np.random.Generator(np.random.Philox(ss)).standard_normal(count)


class WienerPath:
    """A single scalar Brownian path on ``[0, n_base * dt_base]``, refinable dyadically."""

    def __init__(self, seed: int, dt_base: float, n_base: int):
        if not dt_base > 0 or n_base < 0:
            raise ValueError("need dt_base > 0 and n_base >= 0")
        self.seed = int(seed)
        self.dt_base = float(dt_base)
        self.n_base = int(n_base)
        base = _quantize(math.sqrt(self.dt_base) * _normals(self.seed, 0, self.n_base))
        base.setflags(write=False)
        self._levels: list[np.ndarray] = [base]

    @property
    def increments(self) -> np.ndarray:
        return self._levels[0]

    @property
    def T(self) -> float:
        return self.n_base * self.dt_base

    def dt(self, level: int = 0) -> float:
        return self.dt_base / 2**level

    def level(self, level: int) -> np.ndarray:
        """Increments at dyadic level ``level`` (generated on demand and cached)."""
        if level < 0 or level > MAX_LEVEL:
            raise ValueError(f"level must lie in [0, {MAX_LEVEL}]")
        while len(self._levels) <= level:
            L = len(self._levels)
            coarse = self._levels[-1]
            z = _normals(self.seed, L, coarse.size)
            # left child given the parent increment: N(dW/2, dt_parent/4)
            left = _quantize(0.5 * coarse + 0.5 * math.sqrt(self.dt(L - 1)) * z)
            right = coarse - left
            fine = np.empty(2 * coarse.size)
            fine[0::2] = left
            fine[1::2] = right
            fine.setflags(write=False)
            self._levels.append(fine)
        return self._levels[level]

    def identity(self) -> tuple[int, float, int]:
        return (self.seed, self.dt_base, self.n_base)

    def __eq__(self, other):
        return isinstance(other, WienerPath) and self.identity() == other.identity()

    def __hash__(self):
        return hash(self.identity())

    def __repr__(self):
        return f"WienerPath(seed={self.seed}, dt_base={self.dt_base!r}, n_base={self.n_base})"


def generate_path(seed: int, T: float, dt: float) -> WienerPath:
    """``ceil(T/dt)`` increments, with the base step shrunk so they tile ``[0, T]`` exactly."""
    if not (T > 0 and dt > 0):
        raise ValueError("need T > 0 and dt > 0")
    n = max(1, math.ceil(T / dt - 1e-12))
    return WienerPath(seed, T / n, n)


class IntegrationError(RuntimeError):
    """Raised when a step produces non-finite values or the step size collapses."""

    def __init__(self, message: str, t: float, state=None):
        super().__init__(f"{message} at t={t:.6g}")
        self.t = t
        self.state = state  # (rho, m) arrays of the last good state


class StabilityError(IntegrationError):
    pass


def _stable_dt_arrays(rho, m, grid: Grid, params: SimParams) -> float:
    u = velocity_array(rho, m, params.eps_vac)
    a_max = float(np.max(wave_speed_array(rho, u, params.gamma)))
    r_max = float(np.max(rho))
    conv = params.cfl * grid.dx / a_max if a_max > 0 else math.inf
    visc = params.visc_factor * grid.dx**2 / (2 * grid.dim * r_max) if r_max > 0 else math.inf
    dt = min(conv, visc, params.dt_max)
    if not dt >= params.dt_min:
        raise StabilityError(f"stable step {dt:.3g} below dt_min", float("nan"))
    return dt


def stable_dt(state: FluidState, params: SimParams, grid: Grid | None = None) -> float:
    """Explicit-scheme step bound from the wave speed and the viscous diffusivity."""
    grid = grid or state.grid
    _check_grid(grid, state.grid)
    return _stable_dt_arrays(state.rho.values, state.m.values, grid, params)


@dataclass
class _StepOut:
    rho: np.ndarray
    m_det: np.ndarray  # after the deterministic update and vacuum fix
    m: np.ndarray  # after the noise kick
    clip_mass: float
    clip_momentum: np.ndarray


def _advance(rho, m, dt, dW, grid: Grid, params: SimParams, f) -> _StepOut:
    d_rho, d_m = rhs_arrays(rho, m, grid, params)
    rho1 = rho + dt * d_rho
    m1 = m + dt * d_m
    d_rho1, d_m1 = rhs_arrays(rho1, m1, grid, params)
    rho2 = 0.5 * rho + 0.5 * (rho1 + dt * d_rho1)
    m2 = 0.5 * m + 0.5 * (m1 + dt * d_m1)

    vol = grid.cell_volume
    neg = rho2 < 0
    clip_mass = -float(np.sum(rho2[neg]) * vol) if neg.any() else 0.0
    rho2 = np.maximum(rho2, 0.0)
    vac = rho2 <= params.eps_vac
    clip_mom = np.zeros(grid.dim)
    if vac.any():
        clip_mom = np.array([np.sum(m2[i][vac]) for i in range(grid.dim)]) * vol
        m2[:, vac] = 0.0
    m3 = m2 + rho2[None] * f * dW if f is not None else m2
    return _StepOut(rho2, m2, m3, clip_mass, clip_mom)


def step(state: FluidState, dt: float, dW: float, params: SimParams,
         noise: NoiseModel | None = None) -> FluidState:
    """One split step: Heun drift, vacuum fix, then the noise kick ``m += rho f dW``."""
    grid = state.grid
    f = None
    if noise is not None and noise.active:
        _check_grid(grid, noise.f.grid)
        f = noise.values
    out = _advance(state.rho.values, state.m.values.copy(), dt, dW, grid, params, f)
    if not (np.all(np.isfinite(out.rho)) and np.all(np.isfinite(out.m))):
        raise IntegrationError("non-finite state", dt, (state.rho.values, state.m.values))
    return FluidState.from_arrays(grid, out.rho, out.m)


@dataclass
class StepRecord:
    """State at the start of a step together with the step that follows it."""

    t: float
    rho: np.ndarray
    m: np.ndarray
    dt: float = 0.0
    dW: float = 0.0
    kick_rho: np.ndarray | None = None


@dataclass(eq=False)
class Trajectory:
    grid: Grid
    params: SimParams
    save_times: list[float]
    states: list[FluidState]
    diagnostics: list[DiagnosticsRecord]
    path_ref: tuple | None
    series: dict[str, np.ndarray]
    drift_integral: list[np.ndarray] = field(default_factory=list)
    noise_integral: list[np.ndarray] = field(default_factory=list)
    steps: list[StepRecord] | None = None
    noise_values: np.ndarray | None = None
    levels: list[int] = field(default_factory=list)
    clip_momentum: np.ndarray | None = None  # (steps + 1, dim) cumulative momentum zeroed on vacuum

    @property
    def final(self) -> FluidState:
        return self.states[-1]

    @property
    def times(self) -> np.ndarray:
        return self.series["t"]

    def state_at(self, t: float) -> FluidState:
        for ts, st in zip(self.save_times, self.states):
            if abs(ts - t) <= 1e-9 * max(1.0, abs(t)):
                return st
        raise KeyError(f"no saved state at t={t}")


_SERIES_KEYS = (
    "t", "dt", "dW", "level", "mass", "kinetic", "potential", "fisher", "energy",
    "bd_enstrophy", "mv_energy", "visc_dissipation", "bd_dissipation", "asym_dissipation",
    "mv_dissipation", "mv_pressure", "ito_correction", "mv_ito", "stoch_integral_energy",
    "stoch_integral_bd", "stoch_integral_mv", "clip_mass", "rho_gamma_53", "rho_gamma_3",
)


def _save_indices(save_times, path: WienerPath) -> dict[int, float]:
    out = {}
    for s in save_times:
        k = s / path.dt_base
        ki = int(round(k))
        if abs(k - ki) > 1e-6 or ki < 0 or ki > path.n_base:
            raise ValueError(f"save time {s} is not on the base time grid (dt={path.dt_base})")
        out[ki] = float(s)
    return out


def simulate(rho0: ScalarField, m0: VectorField, params: SimParams,
             noise: NoiseModel | None = None, path: WienerPath | None = None,
             save_times=None, keep_steps: bool = False, energy_cap: float | None = None,
             max_steps: int | None = None) -> Trajectory:
    """Integrate from ``(rho0, m0)`` to ``params.T`` along ``path``.

    The step at each time is the path step of the smallest dyadic level not
    exceeding :func:`stable_dt`; the level never decreases, so every step is
    aligned with the base grid and save times (which must be base-grid
    multiples) are hit exactly.  Diagnostics are recorded at every step.

    ``energy_cap`` and ``max_steps`` are blow-up guards: exceeding either
    raises :class:`IntegrationError` instead of grinding on with ever
    smaller steps.
    """
    _check_grid(rho0.grid, m0.grid)
    grid = rho0.grid
    report = validate_initial(rho0, m0, params)
    if not report.passed:
        raise ValueError(f"invalid initial data: {len(report.violations)} offending nodes")
    T = params.T
    f = None
    if noise is not None and noise.active:
        _check_grid(grid, noise.f.grid)
        f = noise.values.copy()

    if T == 0:
        path_ref = path.identity() if path is not None else None
        n_base = 0
    else:
        if path is None:
            path = generate_path(0, T, params.dt_max)
        if abs(path.T - T) > 1e-9 * T:
            raise ValueError(f"path covers [0, {path.T}] but T = {T}")
        path_ref = path.identity()
        n_base = path.n_base
    if save_times is None:
        save_times = [0.0, T] if T > 0 else [0.0]
    saves = _save_indices(save_times, path) if T > 0 else {0: 0.0}
    if T == 0 and any(s != 0 for s in save_times):
        raise ValueError("save times beyond T")

    rho = rho0.values.copy()
    m = m0.values.copy()
    Y = m.copy()
    M = np.zeros_like(m)
    series = {k: [] for k in _SERIES_KEYS}
    records: list[DiagnosticsRecord] = []
    states, save_list, Ys, Ms, levels = [], [], [], [], []
    steps = [] if keep_steps else None
    s_e = s_bd = s_mv = 0.0
    clip_total = 0.0
    clip_mom = np.zeros(grid.dim)
    clip_mom_series = [clip_mom.copy()]

    level, idx = 0, 0  # idx counts steps at the current level
    t = 0.0

    def record(t, dt, dW, lvl):
        fun = state_functionals(rho, m, grid, params, f)
        for key in ("mass", "kinetic", "potential", "fisher", "energy", "bd_enstrophy",
                    "mv_energy", "visc_dissipation", "bd_dissipation", "asym_dissipation",
                    "mv_dissipation", "mv_pressure", "ito_correction", "mv_ito",
                    "rho_gamma_53", "rho_gamma_3"):
            series[key].append(fun[key])
        series["t"].append(t)
        series["stoch_integral_energy"].append(s_e)
        series["stoch_integral_bd"].append(s_bd)
        series["stoch_integral_mv"].append(s_mv)
        series["clip_mass"].append(clip_total)
        series["level"].append(lvl)
        records.append(DiagnosticsRecord(
            t=t, mass=fun["mass"], momentum=fun["momentum"], energy=fun["energy"],
            bd_enstrophy=fun["bd_enstrophy"], mv_energy=fun["mv_energy"],
            visc_dissipation=fun["visc_dissipation"], bd_dissipation=fun["bd_dissipation"],
            asym_dissipation=fun["asym_dissipation"], ito_correction=fun["ito_correction"],
            stoch_integral_energy=s_e, stoch_integral_bd=s_bd, clip_mass=clip_total,
        ))

    def maybe_save(t):
        base_pos = idx / 2**level
        if base_pos == int(base_pos) and int(base_pos) in saves:
            states.append(FluidState.from_arrays(grid, rho, m))
            save_list.append(saves[int(base_pos)])
            Ys.append(Y.copy())
            Ms.append(M.copy())

    maybe_save(t)
    total = n_base  # steps at level 0
    while idx < total * 2**level:
        try:
            dt_stab = _stable_dt_arrays(rho, m, grid, params)
        except StabilityError as exc:
            raise StabilityError("stable step below dt_min", t, (rho, m)) from exc
        while path.dt(level) > dt_stab * (1 + 1e-12):
            level += 1
            idx *= 2
            if level > MAX_LEVEL:
                raise StabilityError("path refinement limit reached", t, (rho, m))
        dt = path.dt(level)
        dW = float(path.level(level)[idx]) if f is not None else 0.0
        record(t, dt, dW, level)
        if energy_cap is not None and not series["energy"][-1] <= energy_cap:
            raise IntegrationError(f"blow-up: energy {series['energy'][-1]:.3g} above cap", t, (rho, m))
        if max_steps is not None and len(series["dt"]) >= max_steps:
            raise IntegrationError(f"step budget of {max_steps} exhausted", t, (rho, m))
        out = _advance(rho, m.copy(), dt, dW, grid, params, f)
        if not (np.all(np.isfinite(out.rho)) and np.all(np.isfinite(out.m))):
            raise IntegrationError("non-finite state", t, (rho, m))
        if f is not None:
            ie, ib, im = stochastic_integrands(out.rho, out.m_det, grid, params, f)
            s_e += ie * dW
            s_bd += ib * dW
            s_mv += im * dW
        if steps is not None:
            steps.append(StepRecord(t, rho, m, dt, dW, out.rho if f is not None else None))
        series["dt"].append(dt)
        series["dW"].append(dW)
        levels.append(level)
        Y += out.m_det - m
        M += out.m - out.m_det
        clip_total += out.clip_mass
        clip_mom = clip_mom + out.clip_momentum
        clip_mom_series.append(clip_mom.copy())
        rho, m = out.rho, out.m
        idx += 1
        t = (idx / 2**level) * path.dt_base
        maybe_save(t)

    record(t, 0.0, 0.0, level)
    if steps is not None:
        steps.append(StepRecord(t, rho, m))
    arr = {k: np.asarray(v, dtype=float) for k, v in series.items()}
    return Trajectory(
        grid=grid, params=params, save_times=save_list, states=states, diagnostics=records,
        path_ref=path_ref, series=arr, drift_integral=Ys, noise_integral=Ms, steps=steps,
        noise_values=f, levels=levels, clip_momentum=np.array(clip_mom_series),
    )
