"""
How much of the DAG a party keeps
=================================

Weak references only reach back a bounded window of time, so delivered
blocks older than the window can be dropped. The number of rounds a party
retains grows linearly with the window length.
"""

import numpy as np

from dagbft.harness.metrics import linear_fit_r2, measure_memory
from dagbft.harness.scenario import ScenarioConfig, simulate

multipliers = [2, 3, 6, 9]
means = []
for g in multipliers:
    sc = ScenarioConfig(name=f"gc{g}", n=4, delta=600.0, delay_dist="poisson", gc_multiplier=float(g),
                        duration=60_000.0, seed=1)
    mem = measure_memory(simulate(sc), skip_time=6_000.0)
    means.append(mem.rounds_mean)
    print(f"window {g} x delta: {mem.rounds_mean:5.2f} rounds retained on average, "
          f"at most {mem.blocks_max} blocks")

slope, intercept = np.polyfit(multipliers, means, 1)
print(f"fit: rounds = {slope:.2f} * multiplier + {intercept:.2f}, R^2 = {linear_fit_r2(multipliers, means):.4f}")
