"""Functionals, balance residuals and weak-form checks evaluated along trajectories.

Every occurrence of ``grad log rho`` is routed through ``2 grad sqrt(rho)``
(times ``sqrt(rho)`` where a density weight is present), so nothing here
takes the logarithm of a density that may vanish.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import TYPE_CHECKING, Callable, Sequence

import numpy as np

from sns.dynamics import (
    FluidState,
    NoiseModel,
    SimParams,
    velocity_array,
    viscous_dissipation_array,
)
from sns.fields import (
    Grid,
    NormSpec,
    ScalarField,
    VectorField,
    grad_array,
    grad_tensor_array,
    sobolev,
    sobolev_norm_array,
)

if TYPE_CHECKING:
    from sns.integrator import Trajectory

__all__ = [
    "DiagnosticsRecord",
    "TestFunctionSet",
    "energy",
    "bd_enstrophy",
    "mv_energy",
    "state_functionals",
    "energy_balance_residual",
    "bd_balance_residual",
    "mv_inequality_check",
    "MVReport",
    "weak_form_residual",
    "increment_scaling",
    "IncrementScaling",
    "trig_test_functions",
    "write_jsonl",
    "read_jsonl",
]


@dataclass
class DiagnosticsRecord:
    t: float
    mass: float
    momentum: list[float]
    energy: float
    bd_enstrophy: float
    mv_energy: float
    visc_dissipation: float
    bd_dissipation: float
    asym_dissipation: float
    ito_correction: float
    stoch_integral_energy: float
    stoch_integral_bd: float
    clip_mass: float

    def to_json(self) -> str:
        return json.dumps(asdict(self), separators=(",", ":"))


def write_jsonl(records: Sequence[DiagnosticsRecord], path) -> None:
    with open(path, "w") as fh:
        for rec in records:
            fh.write(rec.to_json())
            fh.write("\n")


def read_jsonl(path) -> list[DiagnosticsRecord]:
    with open(path) as fh:
        return [DiagnosticsRecord(**json.loads(line)) for line in fh if line.strip()]


# -- pointwise functionals --------------------------------------------------


def state_functionals(rho, m, grid: Grid, params: SimParams, f=None) -> dict[str, float]:
    """All per-time functionals of a state given as raw arrays.

    ``f`` is the active force profile (array) or ``None``.
    """
    dim, dx, vol = grid.dim, grid.dx, grid.cell_volume
    gamma, delta, eps = params.gamma, params.delta, params.eps_vac
    u = velocity_array(rho, m, eps)
    mu = np.sum(m * u, axis=0)  # vacuum-safe rho|u|^2
    speed = np.sqrt(np.sum(u * u, axis=0))
    theta = np.sqrt(rho)
    gtheta = grad_array(theta, dim, dx)
    q = theta * u
    rho_g = rho**gamma
    potential = float(np.sum(rho_g) * vol)
    kinetic = float(np.sum(mu) * vol)

    # BD kinetic density |q + 2 grad theta|^2 with |q|^2 replaced by m.u,
    # so that it coincides with the energy density when grad theta == 0
    bd_kin = mu + 4 * np.sum(q * gtheta, axis=0) + 4 * np.sum(gtheta * gtheta, axis=0)

    G = grad_tensor_array(u, dim, dx)
    grad_sq = np.sum(G * G, axis=(0, 1))
    A = 0.5 * (G - np.swapaxes(G, 0, 1))
    speed_d = speed**delta

    p_exp = 2 * gamma - 1 - delta / 2
    mv_press = float(
        (np.sum((rho**p_exp) ** (2 / (2 - delta))) * vol) ** ((2 - delta) / 2)
    )

    out = {
        "mass": float(np.sum(rho) * vol),
        "momentum": [float(x) for x in np.sum(m.reshape(dim, -1), axis=1) * vol],
        "kinetic": kinetic,
        "potential": potential,
        "fisher": float(4 * np.sum(gtheta * gtheta) * vol),
        "energy": 0.5 * kinetic + potential / (gamma - 1),
        "bd_enstrophy": float(0.5 * np.sum(bd_kin) * vol) + potential / (gamma - 1),
        "mv_energy": float(np.sum(rho * speed ** (2 + delta)) * vol / (2 + delta)),
        "visc_dissipation": viscous_dissipation_array(rho, u, dim, dx),
        "bd_dissipation": float(
            (4 / gamma) * np.sum(grad_array(rho ** (gamma / 2), dim, dx) ** 2) * vol
        ),
        "asym_dissipation": float(2 * np.sum(rho * np.sum(A * A, axis=(0, 1))) * vol),
        "mv_dissipation": float(np.sum(rho * speed_d * grad_sq) * vol),
        "mv_pressure": mv_press,
        "rho_gamma_53": float(np.sum(rho_g ** (5 / 3)) * vol),
        "rho_gamma_3": float(np.sum(rho_g**3) * vol),
        "ito_correction": 0.0,
        "mv_ito": 0.0,
    }
    if f is not None:
        f2 = np.sum(f * f, axis=0)
        out["ito_correction"] = float(0.5 * np.sum(rho * f2) * vol)
        out["mv_ito"] = float(0.5 * (1 + delta) * np.sum(rho * f2 * speed_d) * vol)
    return out


def stochastic_integrands(rho, m, grid: Grid, params: SimParams, f) -> tuple[float, float, float]:
    """Integrands of the energy, BD and M-V stochastic integrals (multiply by dW)."""
    vol = grid.cell_volume
    u = velocity_array(rho, m, params.eps_vac)
    rho_u = rho[None] * u
    theta = np.sqrt(rho)
    bd_vec = rho_u + 2 * theta[None] * grad_array(theta, grid.dim, grid.dx)
    speed_d = np.sqrt(np.sum(u * u, axis=0)) ** params.delta
    return (
        float(np.sum(rho_u * f) * vol),
        float(np.sum(bd_vec * f) * vol),
        float(np.sum(rho_u * f * speed_d) * vol),
    )


def energy(state: FluidState, params: SimParams) -> float:
    """Integral of rho|u|^2/2 + rho^gamma/(gamma-1)."""
    return state_functionals(state.rho.values, state.m.values, state.grid, params)["energy"]


def bd_enstrophy(state: FluidState, params: SimParams) -> float:
    return state_functionals(state.rho.values, state.m.values, state.grid, params)[
        "bd_enstrophy"
    ]


def mv_energy(state: FluidState, params: SimParams) -> float:
    return state_functionals(state.rho.values, state.m.values, state.grid, params)[
        "mv_energy"
    ]


# -- balance residuals ------------------------------------------------------


def _cumulative_left(rate: np.ndarray, dt: np.ndarray) -> np.ndarray:
    """Left-endpoint running integral: out[k] = sum_{j<k} rate[j] * dt[j]."""
    out = np.zeros_like(rate)
    out[1:] = np.cumsum(rate[:-1] * dt)
    return out


@dataclass
class ResidualSeries:
    t: np.ndarray
    residual: np.ndarray

    @property
    def max_abs(self) -> float:
        return float(np.max(np.abs(self.residual))) if self.residual.size else 0.0

    @property
    def final(self) -> float:
        return float(self.residual[-1])


def energy_balance_residual(traj: "Trajectory", params: SimParams | None = None,
                            noise: NoiseModel | None = None) -> ResidualSeries:
    """E(t) + int rho|grad u|^2 - E(0) - int (1/2) rho|f|^2 - int rho u.f dW."""
    s = traj.series
    dt = s["dt"]
    R = (
        s["energy"]
        + _cumulative_left(s["visc_dissipation"], dt)
        - s["energy"][0]
        - _cumulative_left(s["ito_correction"], dt)
        - s["stoch_integral_energy"]
    )
    return ResidualSeries(s["t"].copy(), R)


def bd_balance_residual(traj: "Trajectory", params: SimParams | None = None,
                        noise: NoiseModel | None = None) -> ResidualSeries:
    """BD(t) + int [(4/gamma)|grad rho^{gamma/2}|^2 + 2 rho|A u|^2] - BD(0) - Ito - stochastic."""
    s = traj.series
    dt = s["dt"]
    R = (
        s["bd_enstrophy"]
        + _cumulative_left(s["bd_dissipation"] + s["asym_dissipation"], dt)
        - s["bd_enstrophy"][0]
        - _cumulative_left(s["ito_correction"], dt)
        - s["stoch_integral_bd"]
    )
    return ResidualSeries(s["t"].copy(), R)


@dataclass
class MVReport:
    t: np.ndarray
    lhs: np.ndarray
    rhs_base: np.ndarray  # everything on the right except the two constants
    pressure_term: np.ndarray  # integrand multiplying C_delta
    C: float
    C_delta: float
    C_min: float  # smallest C with C_delta = 0
    C_delta_min: float  # smallest C_delta with C = 0
    T: float

    def rhs(self, C: float | None = None, C_delta: float | None = None) -> np.ndarray:
        C = self.C if C is None else C
        C_delta = self.C_delta if C_delta is None else C_delta
        return self.rhs_base + C * self.T + C_delta * self.pressure_term

    def holds(self, C: float | None = None, C_delta: float | None = None) -> np.ndarray:
        return self.lhs <= self.rhs(C, C_delta)

    @property
    def flag(self) -> bool:
        return bool(np.all(self.holds()))

    @property
    def deficit(self) -> np.ndarray:
        return self.lhs - self.rhs_base


def mv_paper_constant(params: SimParams, kinetic_sup: float) -> float:
    """C_delta that the Young/Holder chain of the M-V estimate produces.

    Young: sqrt(3+delta) a b <= (1-delta)/2 a^2 + (3+delta)/(2(1-delta)) b^2, then
    Holder pulls out (int rho|u|^2)^{delta/2}, bounded by its supremum.
    """
    d = params.delta
    return (3 + d) / (2 * (1 - d)) * max(kinetic_sup, 0.0) ** (d / 2)


def mv_inequality_check(traj: "Trajectory", params: SimParams, noise: NoiseModel | None = None,
                        C: float | None = None, C_delta: float | None = None) -> MVReport:
    """One-sided M-V inequality along a trajectory.

    LHS(t) = MV(t) + c_delta int rho|u|^delta |grad u|^2 with c_delta = (1-delta)/2.
    RHS(t) = MV(0) + C T + C_delta int P + (1+delta)/2 int rho|f|^2|u|^delta + int rho f.u|u|^delta dW.

    When ``C``/``C_delta`` are omitted the estimate-derived constants are used
    (C = 0, C_delta from :func:`mv_paper_constant`).  The smallest admissible
    single constants are reported alongside.
    """
    s = traj.series
    dt = s["dt"]
    c_delta = (1 - params.delta) / 2
    lhs = s["mv_energy"] + c_delta * _cumulative_left(s["mv_dissipation"], dt)
    base = s["mv_energy"][0] + _cumulative_left(s["mv_ito"], dt) + s["stoch_integral_mv"]
    press = _cumulative_left(s["mv_pressure"], dt)
    T = float(s["t"][-1]) if s["t"].size else 0.0
    deficit = lhs - base
    pos = deficit > 0
    if pos.any():
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(press > 0, deficit / np.where(press > 0, press, 1.0), np.inf)
        C_delta_min = float(np.max(ratio[pos]))
        C_min = float(np.max(deficit[pos]) / T) if T > 0 else math.inf
    else:
        C_delta_min = 0.0
        C_min = 0.0
    if C is None:
        C = 0.0
    if C_delta is None:
        C_delta = mv_paper_constant(params, float(np.max(s["kinetic"])))
    return MVReport(s["t"].copy(), lhs, base, press, C, C_delta, C_min, C_delta_min, T)


# -- weak formulation -------------------------------------------------------


@dataclass(frozen=True, eq=False)
class TestFunctionSet:
    """Trigonometric test functions with analytically supplied derivatives.

    Each ``phis`` entry is ``(phi, grad_phi)`` as arrays of shapes
    ``grid.shape`` and ``grid.vector_shape``; each ``psis`` entry is
    ``(psi, grad_psi, lap_psi, div_psi)`` where ``grad_psi[i, j] = d psi_i / d x_j``.
    """

    __test__ = False  # not a pytest class

    grid: Grid
    phis: tuple = ()
    psis: tuple = ()
    labels: tuple = ()


def trig_test_functions(grid: Grid, modes: Sequence[int] = (0, 1, 2, 3),
                        include_constants: bool = True) -> TestFunctionSet:
    """Fourier-mode test functions with exact derivatives.

    Scalars: ``cos(k x_a)`` and ``sin(k x_a)`` along the first axis for each
    mode ``k``; vectors: the same profiles times the unit vector ``e_0``
    (and ``e_1`` in higher dimension).  ``k = 0`` yields the constants.
    The default on a 1-D grid has 8 members of each kind when constants are
    included (1, sin/cos for k = 1, 2, 3, plus sin 4x).
    """
    dim = grid.dim
    xs = grid.coords()
    w = 2 * math.pi / grid.length
    x = xs[0]
    profiles = []  # (value, d/dx0, d2/dx0^2, label)
    for k in modes:
        if k == 0:
            if include_constants:
                one = np.ones(grid.shape)
                profiles.append((one, np.zeros(grid.shape), np.zeros(grid.shape), "1"))
            continue
        kk = k * w
        profiles.append((np.sin(kk * x), kk * np.cos(kk * x), -kk * kk * np.sin(kk * x), f"sin{k}x"))
        profiles.append((np.cos(kk * x), -kk * np.sin(kk * x), -kk * kk * np.cos(kk * x), f"cos{k}x"))
    if len(profiles) < 8:
        kk = (max(modes) + 1) * w
        profiles.append((np.sin(kk * x), kk * np.cos(kk * x), -kk * kk * np.sin(kk * x), f"sin{max(modes) + 1}x"))

    phis, psis, labels = [], [], []
    components = [0] if dim == 1 else [0, 1]
    for val, d1, d2, label in profiles:
        grad = np.zeros(grid.vector_shape)
        grad[0] = d1
        phis.append((val, grad))
        for comp in components:
            psi = np.zeros(grid.vector_shape)
            psi[comp] = val
            gpsi = np.zeros((dim,) + grid.vector_shape)
            gpsi[comp, 0] = d1
            lap = np.zeros(grid.vector_shape)
            lap[comp] = d2
            div = d1 if comp == 0 else np.zeros(grid.shape)
            psis.append((psi, gpsi, lap, div))
        labels.append(label)
    return TestFunctionSet(grid, tuple(phis), tuple(psis), tuple(labels))


@dataclass
class WeakFormResidual:
    t: np.ndarray
    r1: np.ndarray  # (n_phi, n_steps+1)
    r2: np.ndarray  # (n_psi, n_steps+1)

    @property
    def max_r1(self) -> float:
        return float(np.max(np.abs(self.r1)))

    @property
    def max_r2(self) -> float:
        return float(np.max(np.abs(self.r2)))


def _weak_integrands(rho, m, grid, params, tests: TestFunctionSet):
    """Per-test-function time integrands of the mass and momentum weak forms.

    The diffusion term uses the integrated-by-parts form
    ``rho u . lap psi + (grad rho (x) u) : grad psi``, with
    ``grad rho (x) u`` evaluated as ``2 grad sqrt(rho) (x) sqrt(rho) u``.
    """
    vol = grid.cell_volume
    u = velocity_array(rho, m, params.eps_vac)
    rho_u = rho[None] * u
    theta = np.sqrt(rho)
    gth = grad_array(theta, grid.dim, grid.dx)
    q = theta[None] * u
    conv = rho_u[:, None] * u[None, :]  # (rho u (x) u)_{ij}
    # (grad rho (x) u)_{ji} = d_j rho u_i; stored as D[i, j] to match grad_psi[i, j]
    D = 2 * q[:, None] * gth[None, :]
    p = rho**params.gamma
    a1 = [float(np.sum(rho_u * gphi) * vol) for _, gphi in tests.phis]
    a2 = []
    for psi, gpsi, lap, div in tests.psis:
        a2.append(
            float(
                (np.sum(conv * gpsi) + np.sum(rho_u * lap) + np.sum(D * gpsi) + np.sum(p * div))
                * vol
            )
        )
    return np.array(a1), np.array(a2)


def weak_form_residual(traj: "Trajectory", tests: TestFunctionSet,
                       noise: NoiseModel | None = None) -> WeakFormResidual:
    """Residuals of the mass and momentum weak forms along a stored trajectory.

    Requires a trajectory simulated with ``keep_steps=True``.  The noise term
    uses the density at which the integrator applied each kick, so the
    constant-test-function reductions are exact up to rounding.
    """
    if traj.steps is None:
        raise ValueError("weak_form_residual needs a trajectory recorded with keep_steps=True")
    grid = traj.grid
    params = traj.params
    vol = grid.cell_volume
    fvals = traj.noise_values
    n_phi, n_psi = len(tests.phis), len(tests.psis)
    steps = traj.steps
    rho0, m0 = steps[0].rho, steps[0].m
    base1 = np.array([np.sum(rho0 * phi) * vol for phi, _ in tests.phis])
    base2 = np.array([np.sum(m0 * psi) * vol for psi, *_ in tests.psis])
    det1 = np.zeros(n_phi)
    det2 = np.zeros(n_psi)
    sto2 = np.zeros(n_psi)
    r1 = np.zeros((n_phi, len(steps)))
    r2 = np.zeros((n_psi, len(steps)))
    ts = np.zeros(len(steps))
    for k, rec in enumerate(steps):
        cur1 = np.array([np.sum(rec.rho * phi) * vol for phi, _ in tests.phis])
        cur2 = np.array([np.sum(rec.m * psi) * vol for psi, *_ in tests.psis])
        r1[:, k] = cur1 - base1 - det1
        r2[:, k] = cur2 - base2 - det2 - sto2
        ts[k] = rec.t
        if rec.dt > 0:
            a1, a2 = _weak_integrands(rec.rho, rec.m, grid, params, tests)
            det1 += a1 * rec.dt
            det2 += a2 * rec.dt
            if fvals is not None and rec.kick_rho is not None:
                rf = rec.kick_rho[None] * fvals
                sto2 += np.array([np.sum(rf * psi) * vol for psi, *_ in tests.psis]) * rec.dW
    return WeakFormResidual(ts, r1, r2)


def diffusion_forms(rho, m, grid: Grid, params: SimParams, tests: TestFunctionSet):
    """Both sides of the diffusion-term identity, per vector test function.

    Returns ``(sqrt_form, rho_form)`` where
    ``sqrt_form = int sqrt(rho) q . lap psi + 2 (grad sqrt(rho) (x) q) : grad psi`` and
    ``rho_form = int rho u . lap psi + (grad rho (x) u) : grad psi`` (with the
    central-difference gradient of ``rho``).
    """
    vol = grid.cell_volume
    u = velocity_array(rho, m, params.eps_vac)
    theta = np.sqrt(rho)
    q = theta[None] * u
    gth = grad_array(theta, grid.dim, grid.dx)
    grho = grad_array(rho, grid.dim, grid.dx)
    rho_u = rho[None] * u
    s1, s2 = [], []
    for psi, gpsi, lap, div in tests.psis:
        s1.append(float((np.sum(theta[None] * q * lap) + 2 * np.sum(q[:, None] * gth[None] * gpsi)) * vol))
        s2.append(float((np.sum(rho_u * lap) + np.sum(u[:, None] * grho[None] * gpsi)) * vol))
    return np.array(s1), np.array(s2)


# -- increment scaling ------------------------------------------------------


@dataclass
class IncrementScaling:
    lags: np.ndarray
    rms_deterministic: np.ndarray
    rms_stochastic: np.ndarray
    slope_deterministic: float | None
    slope_stochastic: float | None

    @property
    def degenerate(self) -> bool:
        return self.slope_deterministic is None and self.slope_stochastic is None


def _loglog_slope(h: np.ndarray, y: np.ndarray) -> float | None:
    ok = y > 0
    if ok.sum() < 2 or np.ptp(np.log(h[ok])) == 0:
        return None
    return float(np.polyfit(np.log(h[ok]), np.log(y[ok]), 1)[0])


def increment_scaling(trajectories: Sequence["Trajectory"], lags: Sequence[int],
                      norm_spec: NormSpec | None = None) -> IncrementScaling:
    """RMS increments of the drift and noise parts of the momentum versus lag.

    ``lags`` are integer multiples of the (uniform) save interval.  The
    deterministic part is ``m0 + int drift dt`` and the stochastic part is
    ``int rho f dW``; both are recorded by the integrator at save times.
    """
    norm_spec = norm_spec or sobolev(-3)
    lags = sorted(set(int(k) for k in lags))
    if len(lags) < 2 or lags[0] < 1:
        raise ValueError("need at least two positive lags")
    if lags[-1] < 10 * lags[0]:
        raise ValueError("lags must span at least a decade")
    traj0 = trajectories[0]
    ts = np.asarray(traj0.save_times)
    if len(ts) < 2:
        raise ValueError("need at least two save times")
    h0 = ts[1] - ts[0]
    if not np.allclose(np.diff(ts), h0, rtol=1e-9, atol=1e-12):
        raise ValueError("increment scaling needs uniformly spaced save times")
    if lags[-1] >= len(ts):
        raise ValueError("largest lag exceeds the trajectory length")
    grid = traj0.grid

    k2 = sum(k**2 for k in grid.wavenumbers())
    axes = tuple(range(-grid.dim, 0))

    def _norms_sq(a):
        # a: (windows, dim, *grid.shape) -> squared norm per window
        if norm_spec.kind == "sobolev":
            fhat = np.fft.fftn(a, axes=axes) / grid.size
            w = (1.0 + k2) ** int(norm_spec.s)
            return np.sum(w * np.abs(fhat) ** 2, axis=tuple(range(1, a.ndim))) * grid.volume
        mag = np.sqrt(np.sum(a * a, axis=1))
        flat = mag.reshape(mag.shape[0], -1)
        if math.isinf(norm_spec.p):
            return flat.max(axis=1) ** 2
        return (np.sum(flat**norm_spec.p, axis=1) * grid.cell_volume) ** (2 / norm_spec.p)

    det = np.zeros(len(lags))
    sto = np.zeros(len(lags))
    stacked = [(np.asarray(t.drift_integral), np.asarray(t.noise_integral)) for t in trajectories]
    for j, lag in enumerate(lags):
        sd, ss, cnt = 0.0, 0.0, 0
        for Y, M in stacked:
            sd += float(np.sum(_norms_sq(Y[lag:] - Y[:-lag])))
            ss += float(np.sum(_norms_sq(M[lag:] - M[:-lag])))
            cnt += Y.shape[0] - lag
        det[j] = math.sqrt(sd / cnt)
        sto[j] = math.sqrt(ss / cnt)
    h = np.array(lags, dtype=float) * h0
    return IncrementScaling(h, det, sto, _loglog_slope(h, det), _loglog_slope(h, sto))
