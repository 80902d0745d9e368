"""Periodic lattice fields and their discrete calculus.

All differential operators are second-order central stencils with exact
periodic wrap.  The first-derivative stencil is skew-adjoint under the
rectangle-rule inner product, so

    pair(gradient(f), v) == -pair(f, divergence(v))

holds to rounding error.  Fourier transforms are only used for norms.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Union

import numpy as np

__all__ = [
    "Grid",
    "ScalarField",
    "VectorField",
    "NormSpec",
    "lebesgue",
    "sobolev",
    "ddx",
    "dplus",
    "dminus",
    "gradient",
    "divergence",
    "laplacian",
    "grad_tensor",
    "norm",
    "pair",
]


@dataclass(frozen=True)
class Grid:
    """Uniform periodic lattice with ``n`` cells per axis on ``[0, length)^dim``."""

    dim: int
    n: int
    length: float = 2 * math.pi

    def __post_init__(self):
        if self.dim not in (1, 2, 3):
            raise ValueError(f"dim must be 1, 2 or 3, got {self.dim}")
        if self.n < 2 or self.n & (self.n - 1):
            raise ValueError(f"n must be a power of two >= 2, got {self.n}")
        if not self.length > 0:
            raise ValueError("length must be positive")

    @property
    def dx(self) -> float:
        return self.length / self.n

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.n,) * self.dim

    @property
    def vector_shape(self) -> tuple[int, ...]:
        return (self.dim,) + self.shape

    @property
    def size(self) -> int:
        return self.n**self.dim

    @property
    def cell_volume(self) -> float:
        return self.dx**self.dim

    @property
    def volume(self) -> float:
        return self.length**self.dim

    def coords(self) -> tuple[np.ndarray, ...]:
        """Node coordinates as a tuple of ``dim`` arrays of shape ``self.shape``."""
        x = np.arange(self.n) * self.dx
        return tuple(np.meshgrid(*([x] * self.dim), indexing="ij"))

    def wavenumbers(self) -> tuple[np.ndarray, ...]:
        k = 2 * math.pi * np.fft.fftfreq(self.n, d=self.dx)
        return tuple(np.meshgrid(*([k] * self.dim), indexing="ij"))


def _frozen(values: np.ndarray) -> np.ndarray:
    values = np.array(values, dtype=float)
    values.setflags(write=False)
    return values


@dataclass(frozen=True, eq=False)
class ScalarField:
    grid: Grid
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        values = _frozen(self.values)
        if values.shape != self.grid.shape:
            raise ValueError(f"expected shape {self.grid.shape}, got {values.shape}")
        if not np.all(np.isfinite(values)):
            raise FloatingPointError("field contains non-finite values")
        object.__setattr__(self, "values", values)

    @classmethod
    def constant(cls, grid: Grid, c: float) -> "ScalarField":
        return cls(grid, np.full(grid.shape, float(c)))

    @classmethod
    def from_function(cls, grid: Grid, fn) -> "ScalarField":
        return cls(grid, np.broadcast_to(fn(*grid.coords()), grid.shape))

    def _combine(self, other, op):
        if isinstance(other, ScalarField):
            _check_grid(self.grid, other.grid)
            other = other.values
        return ScalarField(self.grid, op(self.values, other))

    def __add__(self, other):
        return self._combine(other, np.add)

    __radd__ = __add__

    def __sub__(self, other):
        return self._combine(other, np.subtract)

    def __mul__(self, other):
        return self._combine(other, np.multiply)

    __rmul__ = __mul__

    def __neg__(self):
        return ScalarField(self.grid, -self.values)


@dataclass(frozen=True, eq=False)
class VectorField:
    grid: Grid
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        values = _frozen(self.values)
        if values.shape != self.grid.vector_shape:
            raise ValueError(
                f"expected shape {self.grid.vector_shape}, got {values.shape}"
            )
        if not np.all(np.isfinite(values)):
            raise FloatingPointError("field contains non-finite values")
        object.__setattr__(self, "values", values)

    @classmethod
    def constant(cls, grid: Grid, c) -> "VectorField":
        c = np.broadcast_to(np.asarray(c, dtype=float), (grid.dim,))
        return cls(grid, np.broadcast_to(c.reshape((-1,) + (1,) * grid.dim), grid.vector_shape))

    @classmethod
    def from_function(cls, grid: Grid, fn) -> "VectorField":
        """``fn(*coords)`` must return a sequence of ``dim`` component arrays."""
        comps = fn(*grid.coords())
        return cls(grid, np.stack([np.broadcast_to(c, grid.shape) for c in comps]))

    def component(self, i: int) -> ScalarField:
        return ScalarField(self.grid, self.values[i])

    def _combine(self, other, op):
        if isinstance(other, VectorField):
            _check_grid(self.grid, other.grid)
            other = other.values
        elif isinstance(other, ScalarField):
            _check_grid(self.grid, other.grid)
            other = other.values[None]
        return VectorField(self.grid, op(self.values, other))

    def __add__(self, other):
        return self._combine(other, np.add)

    __radd__ = __add__

    def __sub__(self, other):
        return self._combine(other, np.subtract)

    def __mul__(self, other):
        return self._combine(other, np.multiply)

    __rmul__ = __mul__

    def __neg__(self):
        return VectorField(self.grid, -self.values)


Field = Union[ScalarField, VectorField]


def _check_grid(a: Grid, b: Grid):
    if a != b:
        raise ValueError(f"grid mismatch: {a} vs {b}")


# -- array kernels ----------------------------------------------------------
# These operate on raw arrays whose trailing ``dim`` axes are the lattice;
# ``axis`` counts from the end so the same kernel serves scalars and vectors.


def shift(a: np.ndarray, k: int, axis: int) -> np.ndarray:
    """Periodic shift with ``np.roll`` semantics, cheaper on small arrays."""
    ax = axis % a.ndim
    n = a.shape[ax]
    s = k % n
    if s == 0:
        return a.copy()
    head = [slice(None)] * a.ndim
    tail = [slice(None)] * a.ndim
    head[ax] = slice(n - s, None)
    tail[ax] = slice(0, n - s)
    return np.concatenate((a[tuple(head)], a[tuple(tail)]), axis=ax)


def ddx(a: np.ndarray, axis: int, dx: float) -> np.ndarray:
    """Central difference along lattice axis ``axis`` (negative index)."""
    return (shift(a, -1, axis) - shift(a, 1, axis)) / (2 * dx)


def dplus(a: np.ndarray, axis: int, dx: float) -> np.ndarray:
    """Forward difference; the result lives on the face ``j + 1/2``."""
    return (shift(a, -1, axis) - a) / dx


def dminus(a: np.ndarray, axis: int, dx: float) -> np.ndarray:
    """Backward difference; maps face values at ``j + 1/2`` back to nodes."""
    return (a - shift(a, 1, axis)) / dx


def grad_array(a: np.ndarray, dim: int, dx: float) -> np.ndarray:
    return np.stack([ddx(a, i - dim, dx) for i in range(dim)])


def div_array(v: np.ndarray, dim: int, dx: float) -> np.ndarray:
    out = ddx(v[0], -dim, dx)
    for i in range(1, dim):
        out = out + ddx(v[i], i - dim, dx)
    return out


def lap_array(a: np.ndarray, dim: int, dx: float) -> np.ndarray:
    out = np.zeros_like(a)
    for i in range(dim):
        ax = i - dim
        out = out + (shift(a, -1, ax) - 2 * a + shift(a, 1, ax))
    return out / dx**2


def grad_tensor_array(v: np.ndarray, dim: int, dx: float) -> np.ndarray:
    """``G[i, j] = d v_i / d x_j`` at every node."""
    return np.stack([grad_array(v[i], dim, dx) for i in range(dim)])


# -- public operators -------------------------------------------------------


def gradient(f: ScalarField) -> VectorField:
    g = f.grid
    return VectorField(g, grad_array(f.values, g.dim, g.dx))


def divergence(v: VectorField) -> ScalarField:
    g = v.grid
    return ScalarField(g, div_array(v.values, g.dim, g.dx))


def laplacian(f: Field) -> Field:
    g = f.grid
    return type(f)(g, lap_array(f.values, g.dim, g.dx))


def grad_tensor(v: VectorField) -> np.ndarray:
    """Per-node ``dim x dim`` velocity-gradient matrices, shape ``(dim, dim, *grid.shape)``."""
    g = v.grid
    return grad_tensor_array(v.values, g.dim, g.dx)


@dataclass(frozen=True)
class NormSpec:
    kind: str
    p: float = 2.0
    s: int = 0

    def __post_init__(self):
        if self.kind == "lebesgue":
            if not (self.p >= 1):
                raise ValueError("lebesgue exponent must lie in [1, inf]")
        elif self.kind == "sobolev":
            if self.p != 2:
                raise ValueError("sobolev norms are only available for exponent 2")
            if int(self.s) != self.s or not -3 <= self.s <= 3:
                raise ValueError("sobolev order must be an integer in [-3, 3]")
        else:
            raise ValueError(f"unknown norm kind {self.kind!r}")


def lebesgue(p: float = 2.0) -> NormSpec:
    return NormSpec("lebesgue", p=p)


def sobolev(s: int, p: float = 2.0) -> NormSpec:
    return NormSpec("sobolev", p=p, s=s)


def _lebesgue_array(a: np.ndarray, grid: Grid, p: float) -> float:
    # vector fields use the pointwise euclidean magnitude
    mag = np.abs(a) if a.shape == grid.shape else np.sqrt(np.sum(a * a, axis=0))
    if math.isinf(p):
        return float(mag.max())
    return float((np.sum(mag**p) * grid.cell_volume) ** (1.0 / p))


def _sobolev_sq(a: np.ndarray, grid: Grid, s: int) -> float:
    k2 = sum(k**2 for k in grid.wavenumbers())
    mult = (1.0 + k2) ** s
    comps = a.reshape((-1,) + grid.shape)
    total = 0.0
    for c in comps:
        fhat = np.fft.fftn(c) / grid.size
        total += float(np.sum(mult * np.abs(fhat) ** 2))
    return total * grid.volume


def norm(f: Field, spec: NormSpec) -> float:
    """Rectangle-rule Lebesgue norm or Fourier-multiplier Sobolev norm."""
    if spec.kind == "lebesgue":
        return _lebesgue_array(f.values, f.grid, spec.p)
    return math.sqrt(_sobolev_sq(f.values, f.grid, int(spec.s)))


def sobolev_norm_array(a: np.ndarray, grid: Grid, s: int) -> float:
    return math.sqrt(_sobolev_sq(a, grid, s))


def pair(f: Field, g: Field) -> float:
    """Rectangle-rule duality pairing ``sum(f * g) * dx^d``."""
    _check_grid(f.grid, g.grid)
    if f.values.shape != g.values.shape:
        raise ValueError("cannot pair a scalar field with a vector field")
    return float(np.sum(f.values * g.values) * f.grid.cell_volume)
