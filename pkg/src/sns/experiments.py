"""Monte-Carlo ensembles, uniform-bound reports and the sequential-stability study."""

from __future__ import annotations

import csv
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from sns.diagnostics import diffusion_forms, state_functionals, trig_test_functions
from sns.dynamics import NoiseModel, SimParams, velocity_array
from sns.fields import Grid, ScalarField, VectorField, _check_grid, grad_array, shift
from sns.integrator import IntegrationError, Trajectory, generate_path, simulate

__all__ = [
    "EnsembleConfig",
    "EnsembleStats",
    "MomentEstimate",
    "run_ensemble",
    "path_functionals",
    "uniform_bound_report",
    "UniformBoundReport",
    "interpolation_check",
    "InterpolationResult",
    "mollify",
    "mollified_sequence",
    "stability_run",
    "ConvergenceReport",
    "worker_count",
]

Z95 = 1.959963984540054

FUNCTIONALS = (
    "sup_kinetic",
    "sup_fisher",
    "sup_potential",
    "int_visc_dissipation",
    "int_pressure_gradient",
    "sup_mv_energy",
)


def worker_count() -> int:
    """Worker processes allowed by ``SNS_THREADS`` (0 or unset means one per CPU)."""
    raw = os.environ.get("SNS_THREADS", "0").strip() or "0"
    try:
        n = int(raw)
    except ValueError:
        raise ValueError(f"SNS_THREADS must be an integer, got {raw!r}") from None
    if n < 0:
        raise ValueError("SNS_THREADS must be non-negative")
    return n or (os.cpu_count() or 1)


@dataclass(frozen=True)
class EnsembleConfig:
    n_paths: int = 16
    base_seed: int = 0
    moment_orders: tuple[float, ...] = (1.0, 2.0)
    resolutions: tuple[int, ...] = (64,)
    seeds: tuple[int, ...] | None = None  # explicit seeds override base_seed + index
    save_every: float | None = None
    keep_trajectories: bool = True
    blowup_factor: float = 1e3  # energy cap relative to max(E0, 1)
    max_steps: int = 200_000

    def __post_init__(self):
        if self.n_paths < 2:
            raise ValueError("n_paths must be at least 2")
        if not all(p >= 1 and math.isfinite(p) for p in self.moment_orders):
            raise ValueError("moment orders must be finite and >= 1")
        if self.seeds is not None and len(self.seeds) != self.n_paths:
            raise ValueError("explicit seeds must match n_paths")

    def path_seeds(self) -> list[int]:
        if self.seeds is not None:
            return [int(s) for s in self.seeds]
        return [self.base_seed + i for i in range(self.n_paths)]


def path_functionals(traj: Trajectory, params: SimParams) -> dict[str, float]:
    """Per-path quantities whose moments the uniform bounds control."""
    s = traj.series
    dt = s["dt"]
    n = dt.size
    return {
        "sup_kinetic": float(np.max(s["kinetic"])),
        "sup_fisher": float(np.max(s["fisher"])),
        "sup_potential": float(np.max(s["potential"])),
        "int_visc_dissipation": float(np.sum(s["visc_dissipation"][:n] * dt)),
        # the stored rate carries the 4/gamma factor
        "int_pressure_gradient": float(np.sum(s["bd_dissipation"][:n] * dt) * params.gamma / 4),
        "sup_mv_energy": float(np.max(s["mv_energy"])),
    }


@dataclass
class MomentEstimate:
    mean: float
    variance: float
    half_width: float
    n: int

    @property
    def ci(self) -> tuple[float, float]:
        return (self.mean - self.half_width, self.mean + self.half_width)


def _moment(values: np.ndarray, p: float) -> MomentEstimate:
    x = values**p
    n = x.size
    if n == 0:
        return MomentEstimate(math.nan, math.nan, math.inf, 0)
    mean = float(np.mean(x))
    var = float(np.var(x, ddof=1)) if n > 1 else 0.0
    return MomentEstimate(mean, var, Z95 * math.sqrt(var / n) if n else math.inf, n)


@dataclass
class EnsembleStats:
    n: int
    seeds: list[int]
    failed_seeds: list[int]
    values: dict[str, np.ndarray]  # functional -> per-path values (sorted-seed order)
    moments: dict[str, dict[float, MomentEstimate]]
    trajectories: list[Trajectory] = field(default_factory=list)
    failures: dict[int, str] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "seeds": self.seeds,
            "failed_seeds": self.failed_seeds,
            "failures": {str(k): v for k, v in self.failures.items()},
            "moments": {
                name: {str(p): asdict(est) for p, est in per.items()}
                for name, per in self.moments.items()
            },
        }


def _run_one(args):
    rho0, m0, params, noise, seed, save_times, keep, cap, max_steps = args
    path = generate_path(seed, params.T, params.dt_max) if params.T > 0 else None
    try:
        traj = simulate(rho0, m0, params, noise, path, save_times,
                        energy_cap=cap, max_steps=max_steps)
    except (IntegrationError, FloatingPointError) as exc:
        return seed, None, None, f"{type(exc).__name__}: {exc}"
    vals = path_functionals(traj, params)
    if not all(math.isfinite(v) for v in vals.values()):
        return seed, None, None, "non-finite functional"
    return seed, vals, traj if keep else None, None


def _save_grid(params: SimParams, save_every: float | None):
    if params.T == 0:
        return None
    if save_every is None:
        return None
    k = int(round(params.T / save_every))
    return [params.T * i / k for i in range(k + 1)]


def run_ensemble(rho0: ScalarField, m0: VectorField, params: SimParams,
                 noise: NoiseModel | None, cfg: EnsembleConfig) -> EnsembleStats:
    """Simulate one path per seed and pool moments of the bound functionals.

    Path failures are recorded rather than raised.  Pooling runs over the
    sorted seed list, so the statistics do not depend on seed order.
    """
    seeds = sorted(cfg.path_seeds())
    if params.T > 0:
        # a save grid that is not on the path grid is a configuration error
        path_dt = generate_path(0, params.T, params.dt_max).dt_base
        save_times = _save_grid(params, cfg.save_every)
        if save_times is not None:
            for s in save_times:
                if abs(s / path_dt - round(s / path_dt)) > 1e-6:
                    raise ValueError(f"save_every={cfg.save_every} is not a multiple of the path step")
    else:
        save_times = None
    e0 = state_functionals(rho0.values, m0.values, rho0.grid, params)["energy"]
    cap = cfg.blowup_factor * max(e0, 1.0)
    jobs = [(rho0, m0, params, noise, s, save_times, cfg.keep_trajectories, cap, cfg.max_steps)
            for s in seeds]
    workers = min(worker_count(), len(jobs))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_one, jobs))
    else:
        results = [_run_one(j) for j in jobs]

    failures = {seed: msg for seed, _, _, msg in results if msg is not None}
    good = [(seed, vals, traj) for seed, vals, traj, msg in results if msg is None]
    values = {name: np.array([v[name] for _, v, _ in good]) for name in FUNCTIONALS}
    moments = {
        name: {float(p): _moment(values[name], p) for p in cfg.moment_orders} for name in FUNCTIONALS
    }
    trajs = [t for _, _, t in good if t is not None]
    return EnsembleStats(len(good), seeds, sorted(failures), values, moments, trajs, failures)


# -- uniform bounds ---------------------------------------------------------


@dataclass
class BoundVerdict:
    estimates: list[float]
    ci: list[tuple[float, float]]
    bounded: bool
    reason: str


@dataclass
class UniformBoundReport:
    resolutions: list[int]
    p: float
    moments: dict[str, BoundVerdict]
    failed: dict[int, list[int]]

    @property
    def verdict(self) -> bool:
        return all(v.bounded for v in self.moments.values()) and not any(self.failed.values())

    def to_dict(self) -> dict:
        return {
            "resolutions": self.resolutions,
            "p": self.p,
            "verdict": "PASS" if self.verdict else "FAIL",
            "failed_seeds": {str(k): v for k, v in self.failed.items()},
            "moments": {k: asdict(v) for k, v in self.moments.items()},
        }


def uniform_bound_report(stats: Sequence[EnsembleStats], p: float,
                         resolutions: Sequence[int] | None = None) -> UniformBoundReport:
    """Boundedness verdict for each moment across resolutions.

    A moment fails when any path failed or produced non-finite values, or when
    the estimates grow at every refinement with pairwise non-overlapping 95%
    confidence intervals and the growth does not contract (the last increment
    is at least half the previous one).  Converging sequences, including
    deterministic ones whose intervals have zero width, therefore pass.
    """
    if len(stats) < 3:
        raise ValueError("uniform_bound_report needs at least three resolutions")
    resolutions = list(resolutions) if resolutions is not None else list(range(len(stats)))
    failed = {r: list(s.failed_seeds) for r, s in zip(resolutions, stats)}
    out = {}
    for name in FUNCTIONALS:
        ests = [s.moments[name].get(float(p)) if s.n > 0 else None for s in stats]
        if any(e is None for e in ests):
            ests = [e if e is not None else _moment(s.values[name], p) for e, s in zip(ests, stats)]
        means = [e.mean for e in ests]
        cis = [e.ci for e in ests]
        if any(s.failed_seeds for s in stats) or any(s.n == 0 for s in stats):
            out[name] = BoundVerdict(means, cis, False, "failed paths (blow-up)")
            continue
        if not all(math.isfinite(x) for x in means):
            out[name] = BoundVerdict(means, cis, False, "non-finite estimate")
            continue
        steps = np.diff(means)
        separated = all(cis[i][1] < cis[i + 1][0] for i in range(len(cis) - 1))
        growing = bool(np.all(steps > 0))
        contracting = len(steps) >= 2 and steps[-1] < 0.5 * steps[-2]
        if growing and separated and not contracting:
            out[name] = BoundVerdict(means, cis, False, "monotone growth beyond CI overlap")
        else:
            out[name] = BoundVerdict(means, cis, True, "bounded")
    return UniformBoundReport(list(resolutions), float(p), out, failed)


# -- interpolation ----------------------------------------------------------


@dataclass
class InterpolationResult:
    A: float
    B: float
    C: float
    rhs: float
    verdict: bool


def interpolation_check(traj: Trajectory, params: SimParams, c: float = 1.0) -> InterpolationResult:
    """``||rho^g||_{L^{5/3}L^{5/3}} <= c ||rho^g||_{L^inf L^1}^{2/5} ||rho^g||_{L^1 L^3}^{3/5}``.

    Space and time use the rectangle rule on the step nodes, so the bound is
    the discrete Holder inequality and holds with ``c = 1``.  A relative slack
    of 1e-12 absorbs rounding in the equality case.
    """
    s = traj.series
    dt = s["dt"]
    n = dt.size
    if n == 0:
        A = B = C = 0.0
    else:
        A = float(np.sum(s["rho_gamma_53"][:n] * dt)) ** 0.6
        B = float(np.max(s["potential"][:n]))
        C = float(np.sum(np.cbrt(s["rho_gamma_3"][:n]) * dt))
    rhs = c * B**0.4 * C**0.6
    return InterpolationResult(A, B, C, rhs, A <= rhs * (1 + 1e-12))


# -- mollification ----------------------------------------------------------


def _kernel(width: float, dx: float) -> np.ndarray:
    half = int(math.floor(4 * width / dx))
    offs = np.arange(-half, half + 1) * dx
    w = np.exp(-0.5 * (offs / width) ** 2) if width > 0 else np.ones(1)
    return w / w.sum()


def mollify(a: np.ndarray, grid: Grid, width: float) -> np.ndarray:
    """Periodic convolution with a normalized Gaussian truncated at four widths.

    Done in real space with non-negative weights, so non-negativity is kept
    and values far (beyond the truncation) from the support stay exactly zero.
    """
    w = _kernel(width, grid.dx)
    half = (w.size - 1) // 2
    out = a
    for ax in range(-grid.dim, 0):
        acc = np.zeros_like(out)
        for j, wj in enumerate(w):
            acc += wj * shift(out, j - half, ax)
        out = acc
    return out


def mollified_sequence(rho_limit: ScalarField, m_limit: VectorField, n_levels: int,
                       widths: Sequence[float] | None = None, h0: float = 0.4,
                       eps_vac: float = 1e-8) -> list[tuple[ScalarField, VectorField]]:
    """Initial data at mollification widths ``h0 * 2**-k`` (or explicit ``widths``)."""
    _check_grid(rho_limit.grid, m_limit.grid)
    if np.any(rho_limit.values < 0):
        raise ValueError("rho_limit must be non-negative")
    grid = rho_limit.grid
    widths = list(widths) if widths is not None else [h0 * 2.0**-k for k in range(n_levels)]
    if len(widths) != n_levels:
        raise ValueError("need one width per level")
    out = []
    for h in widths:
        rho = np.maximum(mollify(rho_limit.values, grid, h), 0.0)
        m = mollify(m_limit.values, grid, h)
        m[:, rho <= eps_vac] = 0.0
        out.append((ScalarField(grid, rho), VectorField(grid, m)))
    return out


# -- sequential stability ---------------------------------------------------

GAP_NAMES = ("density_sup_l2", "sqrt_density_h1_weak", "sqrt_momentum_l2l2",
             "convective_l1l1", "diffusion_form")


@dataclass
class ConvergenceReport:
    levels: list[int]
    widths: list[float | None]
    gaps: dict[str, list[float]]
    rates: dict[str, float | None]
    failed: list[int] = field(default_factory=list)

    def strictly_decreasing(self, name: str) -> bool:
        g = self.gaps[name]
        return all(b < a for a, b in zip(g, g[1:]))

    @property
    def all_decreasing(self) -> bool:
        return not self.failed and all(self.strictly_decreasing(k) for k in GAP_NAMES)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["level", "width", *GAP_NAMES])
            for i, lvl in enumerate(self.levels):
                w.writerow([lvl, self.widths[i], *(self.gaps[k][i] for k in GAP_NAMES)])


def _fields(traj: Trajectory, params: SimParams):
    out = []
    for st in traj.states:
        rho, m = st.rho.values, st.m.values
        out.append((rho, m, velocity_array(rho, m, params.eps_vac)))
    return out


def _rate(g: Sequence[float]) -> float | None:
    g = np.asarray(g, dtype=float)
    if g.size < 2 or np.any(g <= 0):
        return None
    return float(-np.polyfit(np.arange(g.size), np.log2(g), 1)[0])


def stability_run(sequence: Sequence[tuple[ScalarField, VectorField]], params: SimParams,
                  noise: NoiseModel | None, shared_seed: int,
                  reference: tuple[ScalarField, VectorField] | None = None,
                  n_saves: int = 10, widths: Sequence[float] | None = None) -> ConvergenceReport:
    """Distances of every level to a reference solution under one shared Wiener path.

    Without an explicit ``reference`` the last entry of ``sequence`` is the
    reference and the others are the levels.  Time integrals use the rectangle
    rule on ``n_saves`` uniform intervals.  The diffusion gap compares the
    ``sqrt(rho)``-form of the diffusion term against the same form on the
    reference, so identical data give exactly zero.
    """
    seq = list(sequence)
    if reference is None:
        if len(seq) < 4:
            raise ValueError("need at least three levels plus a reference")
        reference = seq.pop()
    elif len(seq) < 3:
        raise ValueError("need at least three levels")
    grid = reference[0].grid
    for r, m in seq:
        _check_grid(grid, r.grid)
    T = params.T
    path = generate_path(shared_seed, T, params.dt_max) if T > 0 else None
    k = max(1, min(n_saves, path.n_base)) if path is not None else 1
    while path is not None and path.n_base % k:
        k -= 1
    save_times = [T * i / k for i in range(k + 1)] if T > 0 else [0.0]
    h = T / k if T > 0 else 0.0
    weights = np.full(len(save_times), h)
    if T > 0:
        weights[-1] = 0.0  # left rectangle rule
    tests = trig_test_functions(grid)
    vol = grid.cell_volume

    ref_traj = simulate(reference[0], reference[1], params, noise, path, save_times)
    ref = _fields(ref_traj, params)
    ref_theta = [np.sqrt(r) for r, _, _ in ref]
    ref_form = [diffusion_forms(r, m, grid, params, tests)[0] for r, m, _ in ref]

    gaps = {k_: [] for k_ in GAP_NAMES}
    failed = []
    for lvl, (r0, m0) in enumerate(seq):
        try:
            traj = simulate(r0, m0, params, noise, path, save_times)
        except IntegrationError:
            failed.append(lvl)
            for k_ in GAP_NAMES:
                gaps[k_].append(math.inf)
            continue
        cur = _fields(traj, params)
        g1 = g2 = g5 = 0.0
        g3 = g4 = 0.0
        for j, ((rho, m, u), (rr, mr, ur)) in enumerate(zip(cur, ref)):
            g1 = max(g1, math.sqrt(np.sum((rho - rr) ** 2) * vol))
            dth = np.sqrt(rho) - ref_theta[j]
            gdth = grad_array(dth, grid.dim, grid.dx)
            for phi, gphi in tests.phis:
                g2 = max(g2, abs(float((np.sum(dth * phi) + np.sum(gdth * gphi)) * vol)))
            dq = np.sqrt(rho)[None] * u - ref_theta[j][None] * ur
            g3 += weights[j] * float(np.sum(dq * dq) * vol)
            conv = rho[None, None] * u[:, None] * u[None, :]
            conv_r = rr[None, None] * ur[:, None] * ur[None, :]
            g4 += weights[j] * float(np.sum(np.abs(conv - conv_r)) * vol)
            sqrt_form = diffusion_forms(rho, m, grid, params, tests)[0]
            g5 = max(g5, float(np.max(np.abs(sqrt_form - ref_form[j]))))
        if T == 0:
            # no time extent: report the spatial distances at t = 0
            (rho, m, u), (rr, mr, ur) = cur[0], ref[0]
            dq = np.sqrt(rho)[None] * u - ref_theta[0][None] * ur
            g3 = float(np.sum(dq * dq) * vol)
            g4 = float(np.sum(np.abs(rho[None, None] * u[:, None] * u[None, :]
                                     - rr[None, None] * ur[:, None] * ur[None, :])) * vol)
        for name, val in zip(GAP_NAMES, (g1, g2, math.sqrt(g3), g4, g5)):
            gaps[name].append(val)
    widths = list(widths) if widths is not None else [None] * len(seq)
    rates = {k_: _rate(v) for k_, v in gaps.items()}
    return ConvergenceReport(list(range(len(seq))), widths, gaps, rates, failed)
