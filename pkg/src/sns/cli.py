"""Command-line entry point: ``sns {simulate,ensemble,stability,verify,norms}``.

Exit codes: 0 success, 1 a check or verdict failed, 2 configuration error.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

from sns.diagnostics import write_jsonl
from sns.experiments import (
    EnsembleConfig,
    mollified_sequence,
    run_ensemble,
    stability_run,
    uniform_bound_report,
)
from sns.fields import NormSpec, norm
from sns.integrator import IntegrationError, generate_path, simulate
from sns.io import (
    ConfigError,
    RunConfig,
    SnapshotError,
    load_config,
    read_snapshot,
    write_json,
    write_snapshot,
)

EXIT_OK, EXIT_CHECK, EXIT_CONFIG = 0, 1, 2


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load(args) -> RunConfig:
    if not args.config:
        raise ConfigError(["--config is required for this command"])
    cfg = load_config(args.config)
    return cfg.with_overrides(seed=args.seed, n=args.resolution, n_paths=getattr(args, "paths", None))


def cmd_simulate(args) -> int:
    cfg = _load(args)
    out = _out_dir(args)
    (out / "config.ini").write_text(cfg.echo())
    grid, params = cfg.grid, cfg.params
    rho0, m0 = cfg.initial.build(grid)
    noise = cfg.noise.build(grid)
    path = generate_path(cfg.noise.seed, params.T, params.dt_max) if params.T > 0 else None
    try:
        traj = simulate(rho0, m0, params, noise, path, cfg.save_times())
    except IntegrationError as exc:
        print(f"integration failed: {exc}", file=sys.stderr)
        return EXIT_CHECK
    for i, (t, state) in enumerate(zip(traj.save_times, traj.states)):
        write_snapshot(state, out / f"snapshot_{i:04d}.snsf", t=t, gamma=params.gamma)
    write_jsonl(traj.diagnostics, out / "diagnostics.jsonl")
    print(f"wrote {len(traj.states)} snapshot(s) and {len(traj.diagnostics)} diagnostics records to {out}")
    return EXIT_OK


def cmd_ensemble(args) -> int:
    cfg = _load(args)
    out = _out_dir(args)
    ex = cfg.experiment
    resolutions = [args.resolution] if args.resolution else list(ex.resolutions)
    stats = []
    for n in resolutions:
        c = cfg.with_overrides(n=n)
        rho0, m0 = c.initial.build(c.grid)
        ens = EnsembleConfig(n_paths=ex.n_paths, base_seed=cfg.noise.seed,
                             moment_orders=ex.moment_orders, keep_trajectories=False)
        st = run_ensemble(rho0, m0, c.params, c.noise.build(c.grid), ens)
        write_json(st.to_dict(), out / f"ensemble_n{n}.json")
        print(f"n={n}: {st.n} paths, failed seeds {st.failed_seeds or 'none'}")
        stats.append(st)
    if len(stats) >= 3:
        ok = True
        for p in ex.moment_orders:
            rep = uniform_bound_report(stats, p, resolutions)
            write_json(rep.to_dict(), out / f"uniform_bounds_p{p:g}.json")
            print(f"uniform bounds p={p:g}: {'PASS' if rep.verdict else 'FAIL'}")
            ok &= rep.verdict
        return EXIT_OK if ok else EXIT_CHECK
    return EXIT_OK if all(not s.failed_seeds for s in stats) else EXIT_CHECK


def cmd_stability(args) -> int:
    cfg = _load(args)
    out = _out_dir(args)
    rho, m = cfg.initial.build(cfg.grid)
    ex = cfg.experiment
    widths = [ex.h0 * 2.0**-k for k in range(ex.levels)]
    seq = mollified_sequence(rho, m, ex.levels, widths=widths, eps_vac=cfg.params.eps_vac)
    noise = cfg.noise.build(cfg.grid)
    rep = stability_run(seq, cfg.params, noise if cfg.noise.active else None, cfg.noise.seed,
                        reference=(rho, m), widths=widths)
    rep.to_json(out / "stability.json")
    rep.to_csv(out / "stability.csv")
    for name, gaps in rep.gaps.items():
        print(f"{name}: " + ", ".join(f"{g:.3e}" for g in gaps)
              + f"  [{'decreasing' if rep.strictly_decreasing(name) else 'NOT decreasing'}]")
    return EXIT_OK if rep.all_decreasing else EXIT_CHECK


def cmd_verify(args) -> int:
    from sns.verification import CHECKS, run_checks

    only = args.only.split(",") if args.only else None
    if only:
        unknown = [k for k in only if k not in CHECKS]
        if unknown:
            raise ConfigError([f"unknown check(s): {', '.join(unknown)}; choose from {', '.join(CHECKS)}"])
    results = run_checks(args.scale, only, echo=lambda line: print(line, flush=True))
    failed = [r for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed")
    return EXIT_CHECK if failed else EXIT_OK


def _parse_norm(text: str) -> NormSpec:
    """``L2``, ``L1``, ``Linf``, ``H1``, ``H-3`` and friends."""
    t = text.strip()
    try:
        if t[0] in "Ll":
            p = t[1:]
            return NormSpec("lebesgue", p=math.inf if p.lower() in ("inf", "oo") else float(p))
        if t[0] in "HhWw":
            return NormSpec("sobolev", p=2.0, s=int(t[1:].replace(",2", "")))
    except (ValueError, IndexError):
        pass
    raise ConfigError([f"cannot parse norm {text!r}; use e.g. L2, Linf, H1, H-3"])


def cmd_norms(args) -> int:
    specs = [_parse_norm(s) for s in (args.norm or ["L1", "L2", "Linf", "H1", "H-3"])]
    try:
        snap = read_snapshot(args.snapshot)
    except (OSError, SnapshotError) as exc:
        raise ConfigError([f"cannot read snapshot {args.snapshot}: {exc}"]) from None
    st = snap.state
    report = {"t": snap.t, "gamma": snap.gamma, "dim": st.grid.dim, "n": st.grid.n, "norms": {}}
    for label, spec in zip(args.norm or ["L1", "L2", "Linf", "H1", "H-3"], specs):
        report["norms"][label] = {"rho": norm(st.rho, spec), "m": norm(st.m, spec)}
    text = json.dumps(report, indent=2)
    print(text)
    if args.out:
        out = _out_dir(args)
        (out / "norms.json").write_text(text + "\n")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sns", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out_default="sns-out"):
        p.add_argument("--config", help="run configuration file")
        p.add_argument("--seed", type=int, help="override the noise seed")
        p.add_argument("--out", default=out_default, help="output directory")
        p.add_argument("--resolution", type=int, help="override the grid size n")
        p.add_argument("--paths", type=int, help="override the number of Monte-Carlo paths")

    for name, help_ in (("simulate", "integrate one path and write snapshots and diagnostics"),
                        ("ensemble", "Monte-Carlo moments and uniform-bound verdicts"),
                        ("stability", "sequential-stability study on mollified data")):
        common(sub.add_parser(name, help=help_))
    v = sub.add_parser("verify", help="run the acceptance checks")
    common(v)
    v.add_argument("--scale", choices=("smoke", "desk"), default="smoke")
    v.add_argument("--only", help="comma-separated subset of checks")
    n = sub.add_parser("norms", help="norms of a snapshot file")
    n.add_argument("snapshot")
    n.add_argument("--norm", action="append", help="norm to compute (repeatable), e.g. L2 or H-3")
    n.add_argument("--out", help="also write norms.json into this directory")
    return parser


COMMANDS = {
    "simulate": cmd_simulate,
    "ensemble": cmd_ensemble,
    "stability": cmd_stability,
    "verify": cmd_verify,
    "norms": cmd_norms,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        for err in exc.errors:
            print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
