"""Mollified initial data converging to a vacuum-plateau profile.

Every level shares one Brownian path, so the distances to the limit run
are pathwise.  Prints the five gap sequences and their fitted rates.
"""

from sns import Grid, SimParams
from sns.corpus import modulated_noise, plateau
from sns.experiments import mollified_sequence, stability_run

grid = Grid(1, 128)
rho, m = plateau(grid)
widths = [0.4 * 2.0**-k for k in range(4)]
seq = mollified_sequence(rho, m, 4, widths=widths)
params = SimParams(T=0.5)

for label, noise in (("deterministic", None), ("noise, seed 0", modulated_noise(grid))):
    rep = stability_run(seq, params, noise, 0, reference=(rho, m), widths=widths)
    print(label)
    for name, gaps in rep.gaps.items():
        rate = rep.rates[name]
        tail = f"   rate per level {rate:.2f}" if rate is not None else ""
        print(f"  {name:22s} " + "  ".join(f"{g:.3e}" for g in gaps) + tail)
