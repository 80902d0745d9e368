"""Standard initial data and force profiles used by the checks and demos.

Profiles depend on the first coordinate only, so they make sense in any
dimension.
"""

from __future__ import annotations

import numpy as np

from sns.dynamics import NoiseModel
from sns.fields import Grid, ScalarField, VectorField


def _from_profiles(grid: Grid, rho: np.ndarray, u0: np.ndarray):
    u = np.zeros(grid.vector_shape)
    u[0] = u0
    return ScalarField(grid, rho), VectorField(grid, rho[None] * u)


def smooth(grid: Grid, rho_amp: float = 0.3, u_amp: float = 0.1):
    """No-vacuum data: ``rho = 1 + a sin x``, ``u = b sin x``."""
    x = grid.coords()[0]
    return _from_profiles(grid, 1 + rho_amp * np.sin(x), u_amp * np.sin(x))


def rest(grid: Grid, rho_bar: float = 1.0):
    return _from_profiles(grid, np.full(grid.shape, rho_bar), np.zeros(grid.shape))


def plateau(grid: Grid, u_amp: float = 0.3):
    """``sqrt(rho) = max(0, 1/2 + cos x)``: smooth bump next to a vacuum plateau."""
    x = grid.coords()[0]
    return _from_profiles(grid, np.maximum(0.0, 0.5 + np.cos(x)) ** 2, u_amp * np.sin(x))


def modulated_noise(grid: Grid, amplitude: float = 0.5, modulation: float = 0.5) -> NoiseModel:
    x = grid.coords()[0]
    f = np.zeros(grid.vector_shape)
    f[0] = amplitude * (1 + modulation * np.sin(x))
    return NoiseModel(VectorField(grid, f))


def constant_noise(grid: Grid, amplitude: float = 1.0) -> NoiseModel:
    f = np.zeros(grid.vector_shape)
    f[0] = amplitude
    return NoiseModel(VectorField(grid, f))
