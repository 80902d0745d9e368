"""Run configuration, binary snapshots and report serialization."""

from __future__ import annotations

import configparser
import csv
import json
import math
import re
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable

import numpy as np

from sns.dynamics import FluidState, NoiseModel, SimParams
from sns.fields import Grid, ScalarField, VectorField

__all__ = [
    "ConfigError",
    "RunConfig",
    "NoiseSpec",
    "InitialSpec",
    "ExperimentSpec",
    "parse_config",
    "load_config",
    "SnapshotError",
    "Snapshot",
    "write_snapshot",
    "read_snapshot",
    "write_csv",
    "write_json",
]


class ConfigError(ValueError):
    def __init__(self, errors: list[str]):
        super().__init__("\n".join(errors))
        self.errors = errors


# -- schema -----------------------------------------------------------------


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def _int(text: str) -> int:
    return int(text.strip())


def _float(text: str) -> float:
    value = float(text.strip())
    if math.isnan(value):
        raise ValueError("NaN is not allowed")
    return value


def _opt_float(text: str) -> float | None:
    return None if text.strip().lower() in ("", "none") else _float(text)


def _floats(text: str) -> tuple[float, ...]:
    return tuple(_float(t) for t in text.split(",") if t.strip())


def _ints(text: str) -> tuple[int, ...]:
    return tuple(_int(t) for t in text.split(",") if t.strip())


def _choice(*options: str) -> Callable[[str], str]:
    def parse(text: str) -> str:
        value = text.strip().lower()
        if value not in options:
            raise ValueError(f"expected one of {', '.join(options)}, got {text.strip()!r}")
        return value

    return parse


SCHEMA: dict[str, dict[str, tuple[Callable[[str], Any], Any]]] = {
    "grid": {
        "dim": (_int, 1),
        "n": (_int, 128),
        "length": (_float, 2 * math.pi),
    },
    "model": {
        "gamma": (_float, 2.0),
        "delta": (_float, 0.5),
        "eps_vac": (_float, 1e-8),
    },
    "noise": {
        "active": (_bool, False),
        "profile": (_choice("constant", "sine", "modulated"), "modulated"),
        "amplitude": (_float, 0.5),
        "modulation": (_float, 0.5),
        "seed": (_int, 0),
    },
    "time": {
        "t": (_float, 0.5),
        "cfl": (_float, 0.4),
        "visc_factor": (_float, 0.5),
        "save_every": (_opt_float, None),
        "dt_max": (_float, 0.05),
        "dt_min": (_float, 1e-12),
    },
    "initial": {
        "density": (_choice("constant", "sine", "plateau"), "sine"),
        "density_amplitude": (_float, 0.3),
        "velocity": (_choice("zero", "sine"), "sine"),
        "velocity_amplitude": (_float, 0.1),
    },
    "experiment": {
        "kind": (_choice("simulate", "ensemble", "stability", "verify"), "simulate"),
        "n_paths": (_int, 16),
        "moment_orders": (_floats, (1.0, 2.0)),
        "resolutions": (_ints, (32, 64, 128)),
        "levels": (_int, 4),
        "h0": (_float, 0.4),
        "scale": (_choice("smoke", "desk"), "smoke"),
    },
}


@dataclass(frozen=True)
class NoiseSpec:
    active: bool = False
    profile: str = "modulated"
    amplitude: float = 0.5
    modulation: float = 0.5
    seed: int = 0

    def build(self, grid: Grid) -> NoiseModel:
        if not self.active:
            return NoiseModel.inactive(grid)
        x = grid.coords()[0]
        if self.profile == "constant":
            prof = np.full(grid.shape, self.amplitude)
        elif self.profile == "sine":
            prof = self.amplitude * np.sin(x)
        else:
            prof = self.amplitude * (1 + self.modulation * np.sin(x))
        f = np.zeros(grid.vector_shape)
        f[0] = prof
        return NoiseModel(VectorField(grid, f))


@dataclass(frozen=True)
class InitialSpec:
    density: str = "sine"
    density_amplitude: float = 0.3
    velocity: str = "sine"
    velocity_amplitude: float = 0.1

    def build(self, grid: Grid) -> tuple[ScalarField, VectorField]:
        x = grid.coords()[0]
        if self.density == "constant":
            rho = np.ones(grid.shape)
        elif self.density == "sine":
            rho = 1 + self.density_amplitude * np.sin(x)
        else:
            rho = np.maximum(0.0, 0.5 + np.cos(x)) ** 2
        u = np.zeros(grid.vector_shape)
        if self.velocity == "sine":
            u[0] = self.velocity_amplitude * np.sin(x)
        return ScalarField(grid, rho), VectorField(grid, rho[None] * u)


@dataclass(frozen=True)
class ExperimentSpec:
    kind: str = "simulate"
    n_paths: int = 16
    moment_orders: tuple[float, ...] = (1.0, 2.0)
    resolutions: tuple[int, ...] = (32, 64, 128)
    levels: int = 4
    h0: float = 0.4
    scale: str = "smoke"


@dataclass(frozen=True)
class RunConfig:
    grid: Grid
    params: SimParams
    noise: NoiseSpec
    initial: InitialSpec
    experiment: ExperimentSpec
    save_every: float | None = None
    values: dict = field(default_factory=dict, compare=False)

    def with_overrides(self, seed: int | None = None, n: int | None = None,
                       n_paths: int | None = None) -> "RunConfig":
        vals = {sec: dict(v) for sec, v in self.values.items()}
        if seed is not None:
            vals["noise"]["seed"] = seed
        if n is not None:
            vals["grid"]["n"] = n
        if n_paths is not None:
            vals["experiment"]["n_paths"] = n_paths
        return _build(vals, {})

    def save_times(self) -> list[float] | None:
        T = self.params.T
        if self.save_every is None or T == 0:
            return None
        k = int(round(T / self.save_every))
        if k < 1 or abs(k * self.save_every - T) > 1e-9 * max(T, 1.0):
            raise ConfigError([f"save_every={self.save_every} does not divide T={T}"])
        return [T * i / k for i in range(k + 1)]

    def echo(self) -> str:
        """The effective configuration (defaults filled) in config syntax."""
        lines = []
        for sec, keys in SCHEMA.items():
            lines.append(f"[{sec}]")
            for key in keys:
                val = self.values[sec][key]
                if isinstance(val, tuple):
                    val = ", ".join(str(v) for v in val)
                elif isinstance(val, bool):
                    val = str(val).lower()
                lines.append(f"{key} = {val}")
            lines.append("")
        return "\n".join(lines)


_SECTION_RE = re.compile(r"^\s*\[([^\]]+)\]")
_KEY_RE = re.compile(r"^\s*([^=:#;\s][^=:]*?)\s*[=:]")


def _line_index(text: str) -> dict[tuple[str, str], int]:
    out, section = {}, None
    for lineno, line in enumerate(text.splitlines(), 1):
        if m := _SECTION_RE.match(line):
            section = m.group(1).strip().lower()
            out.setdefault((section, ""), lineno)
        elif section and (m := _KEY_RE.match(line)):
            out.setdefault((section, m.group(1).strip().lower()), lineno)
    return out


def _build(vals: dict, lines: dict) -> RunConfig:
    errors = []

    def where(sec, key=""):
        ln = lines.get((sec, key))
        return f"line {ln}: " if ln else ""

    try:
        grid = Grid(vals["grid"]["dim"], vals["grid"]["n"], vals["grid"]["length"])
    except ValueError as exc:
        errors.append(f"{where('grid')}[grid] {exc}")
        grid = None
    t = vals["time"]
    try:
        params = SimParams(
            gamma=vals["model"]["gamma"],
            delta=vals["model"]["delta"],
            eps_vac=vals["model"]["eps_vac"],
            cfl=t["cfl"],
            visc_factor=t["visc_factor"],
            T=t["t"],
            dt_max=t["dt_max"],
            dt_min=t["dt_min"],
        )
    except ValueError as exc:
        msg = str(exc)
        key = next((k for k in ("gamma", "delta", "eps_vac", "cfl", "visc_factor", "dt_min", "T")
                    if msg.startswith(k) or f" {k} " in f" {msg} "), "")
        sec = "model" if key in ("gamma", "delta", "eps_vac") else "time"
        errors.append(f"{where(sec, key.lower())}[{sec}] {msg}")
        params = None
    ini = vals["initial"]
    if ini["density"] == "sine" and not 0 <= ini["density_amplitude"] < 1:
        errors.append(f"{where('initial', 'density_amplitude')}[initial] density_amplitude must lie in [0,1)")
    ex = vals["experiment"]
    if ex["n_paths"] < 2:
        errors.append(f"{where('experiment', 'n_paths')}[experiment] n_paths must be at least 2")
    if ex["levels"] < 3:
        errors.append(f"{where('experiment', 'levels')}[experiment] levels must be at least 3")
    if any(p < 1 for p in ex["moment_orders"]):
        errors.append(f"{where('experiment', 'moment_orders')}[experiment] moment orders must be >= 1")
    se = t["save_every"]
    if se is not None and not se > 0:
        errors.append(f"{where('time', 'save_every')}[time] save_every must be positive")
    if errors:
        raise ConfigError(errors)
    return RunConfig(
        grid=grid,
        params=params,
        noise=NoiseSpec(**vals["noise"]),
        initial=InitialSpec(**ini),
        experiment=ExperimentSpec(**ex),
        save_every=se,
        values=vals,
    )


def parse_config(text: str) -> RunConfig:
    """Parse ``[section]`` / ``key = value`` text strictly.

    Unknown sections or keys, unparsable values and violated model
    constraints are all collected and raised together as a
    :class:`ConfigError` whose messages carry line numbers.
    """
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError([f"syntax error: {exc}"]) from None
    lines = _line_index(text)
    errors = []
    vals = {sec: {k: default for k, (_, default) in keys.items()} for sec, keys in SCHEMA.items()}
    for sec in parser.sections():
        name = sec.strip().lower()
        if name not in SCHEMA:
            errors.append(f"line {lines.get((name, ''), '?')}: unknown section [{sec}]")
            continue
        for key, raw in parser.items(sec):
            ln = lines.get((name, key), "?")
            if key not in SCHEMA[name]:
                errors.append(f"line {ln}: unknown key {key!r} in [{name}]")
                continue
            conv = SCHEMA[name][key][0]
            try:
                vals[name][key] = conv(raw)
            except ValueError as exc:
                errors.append(f"line {ln}: [{name}] {key}: {exc}")
    if errors:
        raise ConfigError(errors)
    return _build(vals, lines)


def load_config(path) -> RunConfig:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError([f"cannot read config {path}: {exc.strerror or exc}"]) from None
    return parse_config(text)


# -- snapshots --------------------------------------------------------------

MAGIC = b"SNSF"
VERSION = 1
_HEAD = struct.Struct("<4sHBdd")


class SnapshotError(ValueError):
    pass


@dataclass(frozen=True)
class Snapshot:
    state: FluidState
    t: float
    gamma: float


def write_snapshot(state: FluidState, path, t: float = 0.0, gamma: float = 2.0) -> None:
    """Write ``state`` in the ``SNSF`` little-endian binary layout."""
    g = state.grid
    header = _HEAD.pack(MAGIC, VERSION, g.dim, float(gamma), float(t))
    header += struct.pack(f"<{g.dim}I", *g.shape)
    body = np.concatenate([state.rho.values.ravel(), state.m.values.ravel()]).astype("<f8")
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(body.tobytes())


def read_snapshot(path, grid: Grid | None = None) -> Snapshot:
    """Read a snapshot; with ``grid`` given, the stored dimensions must match it.

    The format does not record the box length, so the default ``2 pi`` box is
    assumed unless ``grid`` supplies one.
    """
    data = Path(path).read_bytes()
    if len(data) < _HEAD.size:
        raise SnapshotError("malformed header: file too short")
    magic, version, dim, gamma, t = _HEAD.unpack_from(data)
    if magic != MAGIC:
        raise SnapshotError(f"malformed header: bad magic {magic!r}")
    if version != VERSION:
        raise SnapshotError(f"unsupported snapshot version {version}")
    if dim not in (1, 2, 3):
        raise SnapshotError(f"malformed header: dim = {dim}")
    off = _HEAD.size + 4 * dim
    if len(data) < off:
        raise SnapshotError("malformed header: truncated axis sizes")
    ns = struct.unpack_from(f"<{dim}I", data, _HEAD.size)
    if len(set(ns)) != 1:
        raise SnapshotError(f"malformed header: non-cubic lattice {ns}")
    n = ns[0]
    expected = off + (1 + dim) * n**dim * 8
    if len(data) != expected:
        raise SnapshotError(f"malformed file: expected {expected} bytes, found {len(data)}")
    if grid is not None and (grid.dim != dim or grid.n != n):
        raise SnapshotError(
            f"dimension mismatch: snapshot has dim={dim}, n={n}; grid has dim={grid.dim}, n={grid.n}"
        )
    try:
        g = grid or Grid(dim, n)
    except ValueError as exc:
        raise SnapshotError(f"malformed header: {exc}") from None
    body = np.frombuffer(data, dtype="<f8", offset=off).astype(float)
    size = n**dim
    rho = body[:size].reshape(g.shape)
    m = body[size:].reshape(g.vector_shape)
    return Snapshot(FluidState.from_arrays(g, rho, m), float(t), float(gamma))


# -- reports ----------------------------------------------------------------


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def write_json(obj, path) -> None:
    with open(path, "w") as fh:
        json.dump(_jsonable(obj), fh, indent=2)
        fh.write("\n")


def write_csv(rows: list[dict], path) -> None:
    if not rows:
        Path(path).write_text("")
        return
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        for row in rows:
            w.writerow(row)
