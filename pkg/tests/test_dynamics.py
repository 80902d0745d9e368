import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from sns import corpus
from sns.dynamics import (
    FluidState,
    NoiseModel,
    SimParams,
    continuity_rhs,
    derived,
    momentum_drift,
    momentum_drift_parts,
    noise_coefficient,
    pressure,
    transport_arrays,
    validate_initial,
    velocity,
    viscous_array,
    viscous_dissipation_array,
)
from sns.fields import Grid, ScalarField, VectorField

positive = st.floats(0.05, 5.0, allow_nan=False)
signed = st.floats(-3.0, 3.0, allow_nan=False)


@pytest.mark.parametrize("kw", [{"gamma": 1.0}, {"gamma": 3.0}, {"delta": 1.0}, {"delta": 0.0},
                                {"eps_vac": 0.0}, {"cfl": 0.0}, {"T": -1.0}])
def test_params_reject_out_of_range(kw):
    with pytest.raises(ValueError):
        SimParams(**kw)


def test_state_rejects_negative_density():
    g = Grid(1, 8)
    with pytest.raises(ValueError):
        FluidState.from_arrays(g, -np.ones(8), np.zeros((1, 8)))


def test_velocity_at_vacuum_scale():
    eps = 1e-8
    g = Grid(1, 8)
    st_ = FluidState.from_arrays(g, np.full(8, eps), np.full((1, 8), eps))
    np.testing.assert_allclose(velocity(st_, eps).values, 0.5, rtol=1e-12)


def test_velocity_vanishes_on_vacuum():
    g = Grid(1, 8)
    st_ = FluidState.from_arrays(g, np.zeros(8), np.full((1, 8), 1e-3))
    assert np.all(velocity(st_, 1e-8).values == 0)


def test_derived_fields_consistent():
    g = Grid(1, 32)
    rho, m = corpus.smooth(g)
    p = SimParams()
    d = derived(FluidState(rho, m), p)
    np.testing.assert_allclose(d.q.values, np.sqrt(rho.values) * d.u.values)
    np.testing.assert_allclose(d.r.values, rho.values ** (1 / 2.5) * d.u.values)
    np.testing.assert_allclose(d.theta.values ** 2, rho.values)


def test_pressure_range_checked():
    g = Grid(1, 8)
    with pytest.raises(ValueError):
        pressure(ScalarField.constant(g, 1.0), 3.5)


def test_continuity_rhs_oracle():
    errs = []
    for n in (128, 256):
        g = Grid(1, n)
        x = g.coords()[0]
        st_ = FluidState.from_arrays(g, 2 + np.sin(x), (2 + np.sin(x))[None])
        errs.append(np.max(np.abs(continuity_rhs(st_, SimParams()).values + np.cos(x))))
    # MUSCL traces beat the first-order bound
    assert errs[1] < errs[0] and errs[1] <= 2 * Grid(1, 256).dx


def test_pressure_drift_oracle():
    errs = []
    for n in (128, 256):
        g = Grid(1, n)
        x = g.coords()[0]
        st_ = FluidState.from_arrays(g, 2 + np.sin(x), np.zeros((1, n)))
        drift = momentum_drift_parts(st_, SimParams())["pressure"].values[0]
        errs.append(np.max(np.abs(drift + 2 * (2 + np.sin(x)) * np.cos(x))))
    assert errs[0] / errs[1] >= 3.9


def test_rest_state_is_stationary():
    g = Grid(2, 16)
    rho, m = corpus.rest(g)
    st_ = FluidState(rho, m)
    assert np.all(continuity_rhs(st_, SimParams()).values == 0)
    assert np.all(momentum_drift(st_, SimParams()).values == 0)


@given(arrays(np.float64, 32, elements=positive), arrays(np.float64, 32, elements=signed))
def test_transport_conservative(rho, u):
    d_rho, d_m = transport_arrays(rho, u[None], 1, 0.1, 2.0)
    assert abs(d_rho.sum()) <= 1e-10 * (1 + np.abs(d_rho).sum())
    assert abs(d_m.sum()) <= 1e-10 * (1 + np.abs(d_m).sum())


@given(arrays(np.float64, 32, elements=positive), arrays(np.float64, 32, elements=signed))
def test_viscous_summation_by_parts(rho, u):
    """-<u, div(rho_face D+ u)> equals the recorded dissipation, which is non-negative."""
    dx = 0.2
    visc = viscous_array(rho, u[None], 1, dx)
    diss = viscous_dissipation_array(rho, u[None], 1, dx)
    assert diss >= 0
    assert -np.sum(u * visc[0]) * dx == pytest.approx(diss, rel=1e-9, abs=1e-9)


@given(arrays(np.float64, 32, elements=st.floats(0.0, 5.0)), arrays(np.float64, 32, elements=signed))
def test_transport_keeps_vacuum_cells_quiet(rho, u):
    """A cell with three vacuum neighbours on each side receives no mass."""
    rho = rho.copy()
    rho[10:17] = 0.0
    d_rho, _ = transport_arrays(rho, u[None], 1, 0.1, 2.0)
    assert d_rho[13] == 0.0


def test_noise_coefficient_is_rho_f():
    g = Grid(1, 16)
    rho, m = corpus.smooth(g)
    nm = corpus.modulated_noise(g)
    np.testing.assert_allclose(noise_coefficient(FluidState(rho, m), nm).values,
                               rho.values[None] * nm.f.values)
    inactive = NoiseModel.inactive(g)
    assert np.all(noise_coefficient(FluidState(rho, m), inactive).values == 0)


def test_validate_initial_fisher_oracle():
    g = Grid(1, 4096)
    x = g.coords()[0]
    rep = validate_initial(ScalarField(g, (1 + 0.5 * np.sin(x)) ** 2), VectorField(g, np.zeros((1, 4096))),
                           SimParams())
    assert rep.passed
    assert rep.fisher == pytest.approx(math.pi, abs=1e-5)


def test_validate_initial_flags_vacuum_momentum():
    g = Grid(1, 16)
    rho = np.ones(16)
    rho[3] = 0.0
    m = np.zeros((1, 16))
    m[0, 3] = 0.5
    rep = validate_initial(ScalarField(g, rho), VectorField(g, m), SimParams())
    assert not rep.vacuum_compatible and rep.violations == [(3,)]
    rho[5] = -1.0
    rep = validate_initial(ScalarField(g, rho), VectorField(g, m), SimParams())
    assert not rep.nonnegative and not rep.passed


def test_validate_plateau_passes():
    g = Grid(1, 128)
    rho, m = corpus.plateau(g)
    rep = validate_initial(rho, m, SimParams())
    assert rep.passed and rep.min_rho == 0.0
