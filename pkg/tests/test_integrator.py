import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from sns import corpus
from sns.dynamics import FluidState, NoiseModel, SimParams
from sns.fields import Grid, ScalarField, VectorField
from sns.integrator import (
    QUANTUM,
    IntegrationError,
    StabilityError,
    WienerPath,
    generate_path,
    simulate,
    stable_dt,
    step,
)


# -- Wiener paths -----------------------------------------------------------


def test_increment_variance():
    path = generate_path(12345, 100.0, 1e-3)
    assert path.increments.size == 100_000
    ratio = np.var(path.increments) / path.dt_base
    assert 0.95 <= ratio <= 1.05


def test_path_reproducible_and_seed_dependent():
    a, b, c = (generate_path(s, 1.0, 0.01) for s in (7, 7, 8))
    np.testing.assert_array_equal(a.level(3), b.level(3))
    assert not np.array_equal(a.increments, c.increments)
    assert a == b and hash(a) == hash(b) and a != c


@given(st.integers(0, 2**32), st.integers(1, 6))
def test_bridge_refinement_exact(seed, level):
    path = WienerPath(seed, 0.01, 8)
    fine, coarse = path.level(level), path.level(level - 1)
    assert np.array_equal(fine[0::2] + fine[1::2], coarse)
    assert np.all(np.round(fine / QUANTUM) * QUANTUM == fine)


def test_bridge_variance_at_fine_level():
    path = WienerPath(3, 1e-3, 20_000)
    fine = path.level(2)
    assert 0.95 <= np.var(fine) / path.dt(2) <= 1.05


def test_generate_path_tiles_interval():
    p = generate_path(0, 0.5, 0.03)
    assert p.n_base == 17 and p.T == pytest.approx(0.5)
    with pytest.raises(ValueError):
        generate_path(0, 0.0, 0.1)


def test_levels_bounded():
    with pytest.raises(ValueError):
        WienerPath(0, 0.1, 2).level(-1)


# -- step size --------------------------------------------------------------


def test_stable_dt_plugin():
    g = Grid(1, 128)
    st_ = FluidState.from_arrays(g, np.ones(128), np.zeros((1, 128)))
    expect = min(0.4 * g.dx / math.sqrt(2), 0.5 * g.dx**2 / 2)
    assert stable_dt(st_, SimParams()) == expect
    assert expect == 0.5 * g.dx**2 / 2  # viscous bound dominates


def test_stable_dt_floor():
    g = Grid(1, 8)
    st_ = FluidState.from_arrays(g, np.full(8, 1e6), np.zeros((1, 8)))
    with pytest.raises(StabilityError):
        stable_dt(st_, SimParams(dt_min=1e-3, dt_max=1.0))


# -- simulate ---------------------------------------------------------------


def test_mass_identity_no_clipping():
    g = Grid(1, 128)
    rho, m = corpus.smooth(g)
    traj = simulate(rho, m, SimParams(T=0.5), corpus.modulated_noise(g), generate_path(1, 0.5, 0.05))
    mass = traj.series["mass"]
    assert len(traj.series["dt"]) >= 1000
    assert np.max(np.abs(mass - mass[0])) / mass[0] <= 1e-12
    assert traj.series["clip_mass"][-1] == 0.0


def test_energy_decreases_without_noise():
    g = Grid(1, 64)
    x = g.coords()[0]
    rho = ScalarField(g, np.ones(64))
    m = VectorField(g, 0.1 * np.sin(x)[None])
    traj = simulate(rho, m, SimParams(T=0.5))
    e = traj.series["energy"]
    assert np.all(np.diff(e) < 0)
    # the drop matches the recorded dissipation to first order in dt
    diss = np.sum(traj.series["visc_dissipation"][:-1] * traj.series["dt"])
    assert e[0] - e[-1] == pytest.approx(diss, rel=0.05)


def test_series_lengths_and_levels():
    g = Grid(1, 32)
    rho, m = corpus.smooth(g)
    traj = simulate(rho, m, SimParams(T=0.2), corpus.modulated_noise(g), generate_path(0, 0.2, 0.05))
    steps = len(traj.series["dt"])
    assert all(len(v) == steps + 1 for k, v in traj.series.items() if k not in ("dt", "dW"))
    assert np.all(np.diff(traj.levels) >= 0)
    assert traj.series["t"][-1] == pytest.approx(0.2)
    assert np.sum(traj.series["dt"]) == pytest.approx(0.2)


def test_noise_increments_come_from_path():
    g = Grid(1, 32)
    rho, m = corpus.smooth(g)
    path = generate_path(4, 0.2, 0.05)
    traj = simulate(rho, m, SimParams(T=0.2), corpus.modulated_noise(g), path)
    L = traj.levels[0]
    assert all(lvl == L for lvl in traj.levels)
    np.testing.assert_array_equal(traj.series["dW"], path.level(L))


def test_save_times_on_grid():
    g = Grid(1, 32)
    rho, m = corpus.smooth(g)
    path = generate_path(0, 0.2, 0.05)
    traj = simulate(rho, m, SimParams(T=0.2), None, path, save_times=[0.0, 0.1, 0.2])
    assert traj.save_times == [0.0, 0.1, 0.2]
    assert traj.state_at(0.1) is traj.states[1]
    with pytest.raises(ValueError):
        simulate(rho, m, SimParams(T=0.2), None, path, save_times=[0.07])


def test_zero_horizon():
    g = Grid(1, 16)
    rho, m = corpus.smooth(g)
    traj = simulate(rho, m, SimParams(T=0.0))
    assert len(traj.states) == 1 and len(traj.series["dt"]) == 0


def test_determinism():
    g = Grid(1, 32)
    rho, m = corpus.plateau(g)
    runs = [simulate(rho, m, SimParams(T=0.1), corpus.modulated_noise(g), generate_path(9, 0.1, 0.05))
            for _ in range(2)]
    assert [r.to_json() for r in runs[0].diagnostics] == [r.to_json() for r in runs[1].diagnostics]


def test_rejects_bad_initial_data():
    g = Grid(1, 16)
    m = np.zeros((1, 16))
    m[0, 0] = 1.0
    rho = np.ones(16)
    rho[0] = 0.0
    with pytest.raises(ValueError):
        simulate(ScalarField(g, rho), VectorField(g, m), SimParams(T=0.1))


def test_blowup_guards():
    g = Grid(1, 32)
    rho, m = corpus.smooth(g)
    bad = SimParams(T=0.5, cfl=2.0, visc_factor=2.0)
    with pytest.raises(IntegrationError):
        simulate(rho, m, bad, corpus.modulated_noise(g), generate_path(0, 0.5, 0.05),
                 energy_cap=100.0, max_steps=20_000)
    with pytest.raises(IntegrationError, match="budget"):
        simulate(rho, m, SimParams(T=0.5), max_steps=3)


def test_vacuum_stays_non_negative_and_momentum_free():
    g = Grid(1, 64)
    rho, m = corpus.plateau(g)
    p = SimParams(T=0.3)
    traj = simulate(rho, m, p, corpus.modulated_noise(g), generate_path(2, 0.3, 0.05))
    for s in traj.states:
        assert s.rho.values.min() >= 0
        assert s.vacuum_violation(p.eps_vac) == 0.0


def _coupled(level, seed, n_steps_base=16, T=0.2):
    g = Grid(1, 32)
    rho, m = corpus.smooth(g)
    nm = corpus.modulated_noise(g, amplitude=1.0)
    path = WienerPath(seed, T / n_steps_base, n_steps_base)
    st_ = FluidState(rho, m)
    for dW in path.level(level):
        st_ = step(st_, path.dt(level), float(dW), SimParams(), nm)
    return np.concatenate([st_.rho.values, st_.m.values.ravel()])


def test_strong_convergence_order():
    """Coupled refinement on one path: successive differences shrink at order >= 1/2."""
    errs = []
    for L in (0, 1, 2):
        d = [np.linalg.norm(_coupled(L, s) - _coupled(L + 1, s)) for s in range(8)]
        errs.append(math.sqrt(np.mean(np.square(d))))
    orders = [math.log2(a / b) for a, b in zip(errs, errs[1:])]
    assert min(orders) >= 0.5


def test_step_rejects_grid_mismatch():
    g = Grid(1, 16)
    rho, m = corpus.smooth(g)
    with pytest.raises(ValueError):
        step(FluidState(rho, m), 1e-3, 0.1, SimParams(), corpus.constant_noise(Grid(1, 32)))
