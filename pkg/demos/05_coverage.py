"""
A small coverage experiment
===========================

EL versus LR coverage of the true parameter under skewed errors. The
full tables use 2000 replications (see ``configs/``); 300 keeps this
demo under a minute.
"""

from sem_el import montecarlo as mc, sem

results = []
for grid in [(7, 7), (13, 13)]:
    ws = mc.WeightsSpec(grid=grid)
    for rho in (-0.15, 0.85):
        spec = mc.ExperimentSpec(ws, sem.Theta([3.5], rho, 8.0), "chisq4", reps=300, base_seed=1)
        results.append((ws.name, mc.run_coverage(spec)))

print(mc.emit_table(results, format="markdown"))
