"""Moments of the energy-class quantities across resolutions.

A small ensemble per grid, then the uniform-bound verdict.  A deliberately
unstable step size is run as a control: the blow-up guard records the
failures and the verdict flips.
"""

from sns import Grid, SimParams
from sns.corpus import modulated_noise, smooth
from sns.experiments import EnsembleConfig, run_ensemble, uniform_bound_report

resolutions = (32, 64, 128)


def study(params, n_paths):
    stats = []
    for n in resolutions:
        grid = Grid(1, n)
        rho, m = smooth(grid)
        stats.append(run_ensemble(rho, m, params, modulated_noise(grid),
                                  EnsembleConfig(n_paths=n_paths, keep_trajectories=False)))
    return stats


stats = study(SimParams(T=0.5), 16)
for p in (1, 2):
    rep = uniform_bound_report(stats, p, resolutions)
    print(f"p = {p}: verdict {'PASS' if rep.verdict else 'FAIL'}")
    for name, v in rep.moments.items():
        cells = "  ".join(f"{e:9.4f} +- {e - lo:.4f}" for e, (lo, _) in zip(v.estimates, v.ci))
        print(f"  {name:24s} {cells}")

bad = study(SimParams(T=0.5, cfl=2.0, visc_factor=2.0), 2)
rep = uniform_bound_report(bad, 1, resolutions)
print(f"unstable control: verdict {'PASS' if rep.verdict else 'FAIL'}; failed seeds {rep.failed}")
