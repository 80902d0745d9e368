"""Finite-difference simulation of the stochastic degenerate-viscosity compressible fluid system."""

from sns.fields import Grid, ScalarField, VectorField, NormSpec, lebesgue, sobolev, norm, pair
from sns.dynamics import FluidState, NoiseModel, SimParams, validate_initial
from sns.integrator import WienerPath, Trajectory, generate_path, simulate, stable_dt, step

__version__ = "0.1.0"
