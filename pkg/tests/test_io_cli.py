import json
import struct
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from sns.cli import main
from sns.dynamics import FluidState
from sns.fields import Grid
from sns.io import ConfigError, SnapshotError, parse_config, read_snapshot, write_snapshot

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def test_minimal_config_fills_defaults():
    cfg = parse_config("[grid]\nn = 64\n")
    assert cfg.grid.n == 64 and cfg.grid.dim == 1
    assert cfg.params.gamma == 2.0 and cfg.params.T == 0.5
    assert not cfg.noise.active
    echo = cfg.echo()
    assert "n = 64" in echo and "[experiment]" in echo
    assert parse_config(echo).values == cfg.values


@pytest.mark.parametrize("text,fragment", [
    ("[model]\ngamma = 1.0\n", "gamma must lie in (1,3)"),
    ("[model]\n\ngamma = 3.5\n", "line 3"),
    ("[model]\ndelta = 1.0\n", "delta must lie in (0,1)"),
    ("[grid]\nn = 64\ncolour = red\n", "unknown key 'colour'"),
    ("[nosuch]\nx = 1\n", "unknown section"),
    ("[grid]\nn = sixty\n", "line 2"),
    ("[time]\nsave_every = -1\n", "save_every must be positive"),
    ("[noise]\nprofile = square\n", "expected one of"),
])
def test_config_errors(text, fragment):
    with pytest.raises(ConfigError) as info:
        parse_config(text)
    assert any(fragment in e for e in info.value.errors), info.value.errors


def test_config_errors_collected_together():
    with pytest.raises(ConfigError) as info:
        parse_config("[grid]\nbad = 1\n[time]\nworse = 2\n")
    assert len(info.value.errors) == 2


def test_overrides_and_save_times():
    cfg = parse_config("[time]\nT = 0.5\nsave_every = 0.1\n").with_overrides(seed=7, n=32, n_paths=5)
    assert cfg.noise.seed == 7 and cfg.grid.n == 32 and cfg.experiment.n_paths == 5
    assert cfg.save_times() == pytest.approx([0, 0.1, 0.2, 0.3, 0.4, 0.5])
    with pytest.raises(ConfigError):
        parse_config("[time]\nT = 0.5\nsave_every = 0.3\n").save_times()


def test_shipped_configs_parse():
    for path in CONFIGS.glob("*.ini"):
        parse_config(path.read_text())


@given(st.sampled_from([(1, 8), (1, 32), (2, 4), (3, 2)]), st.floats(-1e3, 1e3), st.integers(0, 2**31))
def test_snapshot_round_trip_bit_exact(shape, t, seed):
    import tempfile

    dim, n = shape
    g = Grid(dim, n)
    rng = np.random.default_rng(seed)
    state = FluidState.from_arrays(g, rng.random(g.shape), rng.standard_normal(g.vector_shape))
    with tempfile.TemporaryDirectory() as d:
        p = Path(d) / "s.snsf"
        write_snapshot(state, p, t=t, gamma=1.4)
        assert p.stat().st_size == 4 + 2 + 1 + 8 + 8 + 4 * dim + (1 + dim) * n**dim * 8
        snap = read_snapshot(p)
    assert snap.t == t and snap.gamma == 1.4
    assert snap.state.rho.values.tobytes() == state.rho.values.tobytes()
    assert snap.state.m.values.tobytes() == state.m.values.tobytes()


def _snapshot(tmp_path, n=16):
    g = Grid(1, n)
    state = FluidState.from_arrays(g, np.ones(n), np.zeros((1, n)))
    p = tmp_path / "s.snsf"
    write_snapshot(state, p)
    return p


def test_snapshot_truncated(tmp_path):
    p = _snapshot(tmp_path)
    data = p.read_bytes()
    for cut in (3, 20, len(data) - 1):
        p.write_bytes(data[:cut])
        with pytest.raises(SnapshotError, match="malformed"):
            read_snapshot(p)


def test_snapshot_bad_magic_and_version(tmp_path):
    p = _snapshot(tmp_path)
    data = bytearray(p.read_bytes())
    p.write_bytes(b"XXXX" + bytes(data[4:]))
    with pytest.raises(SnapshotError, match="magic"):
        read_snapshot(p)
    data[4:6] = struct.pack("<H", 2)
    p.write_bytes(bytes(data))
    with pytest.raises(SnapshotError, match="version"):
        read_snapshot(p)


def test_snapshot_grid_mismatch(tmp_path):
    p = _snapshot(tmp_path, 16)
    with pytest.raises(SnapshotError, match="dimension mismatch"):
        read_snapshot(p, Grid(1, 32))
    assert read_snapshot(p, Grid(1, 16)).state.grid.n == 16


def _write_config(tmp_path, text):
    p = tmp_path / "run.ini"
    p.write_text(text)
    return str(p)


def test_cli_simulate_zero_horizon(tmp_path):
    cfg = _write_config(tmp_path, "[grid]\nn = 16\n[time]\nT = 0\n")
    out = tmp_path / "out"
    assert main(["simulate", "--config", cfg, "--out", str(out)]) == 0
    assert len(list(out.glob("snapshot_*.snsf"))) == 1
    assert (out / "diagnostics.jsonl").exists() and (out / "config.ini").exists()


def test_cli_simulate_deterministic_output(tmp_path):
    cfg = _write_config(tmp_path, "[grid]\nn = 32\n[noise]\nactive = true\n[time]\nT = 0.1\nsave_every = 0.05\n")
    outs = []
    for name in ("a", "b"):
        assert main(["simulate", "--config", cfg, "--seed", "3", "--out", str(tmp_path / name)]) == 0
        outs.append((tmp_path / name / "diagnostics.jsonl").read_bytes())
    assert outs[0] == outs[1]
    assert len(list((tmp_path / "a").glob("*.snsf"))) == 3
    main(["simulate", "--config", cfg, "--seed", "4", "--out", str(tmp_path / "c")])
    assert (tmp_path / "c" / "diagnostics.jsonl").read_bytes() != outs[0]


def test_cli_norms(tmp_path, capsys):
    p = _snapshot(tmp_path, 32)
    assert main(["norms", str(p), "--norm", "L2", "--norm", "H-3", "--out", str(tmp_path)]) == 0
    report = json.loads((tmp_path / "norms.json").read_text())
    assert report["n"] == 32
    assert report["norms"]["L2"]["rho"] == pytest.approx(np.sqrt(2 * np.pi))
    assert main(["norms", str(p), "--norm", "Q7"]) == 2
    capsys.readouterr()


def test_cli_config_errors(tmp_path, capsys):
    assert main(["simulate", "--config", str(tmp_path / "missing.ini")]) == 2
    assert "cannot read config" in capsys.readouterr().err
    bad = _write_config(tmp_path, "[model]\ngamma = 3.5\n")
    assert main(["simulate", "--config", bad, "--out", str(tmp_path / "o")]) == 2
    assert "gamma must lie in (1,3)" in capsys.readouterr().err
    assert main(["norms", str(tmp_path / "none.snsf")]) == 2
    assert main(["verify", "--only", "nosuch"]) == 2
    assert main(["bogus"]) == 2


def test_cli_ensemble(tmp_path):
    cfg = _write_config(tmp_path, "[noise]\nactive = true\n[time]\nT = 0.1\n"
                                  "[experiment]\nn_paths = 4\nresolutions = 16, 32, 64\n")
    assert main(["ensemble", "--config", cfg, "--out", str(tmp_path / "e")]) == 0
    rep = json.loads((tmp_path / "e" / "uniform_bounds_p1.json").read_text())
    assert rep["verdict"] == "PASS"


def test_cli_stability(tmp_path):
    cfg = _write_config(tmp_path, "[grid]\nn = 64\n[time]\nT = 0.2\n[initial]\ndensity = plateau\n"
                                  "velocity_amplitude = 0.3\n")
    assert main(["stability", "--config", cfg, "--out", str(tmp_path / "s")]) == 0
    assert (tmp_path / "s" / "stability.csv").exists()


def test_cli_verify_subset(capsys):
    assert main(["verify", "--scale", "smoke", "--only", "mass"]) == 0
    assert "[PASS] 1. mass identity" in capsys.readouterr().out
