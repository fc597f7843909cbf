"""
Latency in the honest case
==========================

With every party honest and the network synchronous, each anchor is
committed three rounds after it is created and no party ever waits for a
timeout. This script measures that for growing n, in rounds and in
milliseconds of simulated time.
"""

from dagbft.harness.checks import check_atomic_broadcast, check_no_timeouts
from dagbft.harness.metrics import measure_latency
from dagbft.harness.scenario import ScenarioConfig, simulate

# Poisson delays with mean delta/2, clamped to delta, like the benchmark setup.
for n in (4, 7, 10, 13):
    sc = ScenarioConfig(name=f"honest-n{n}", n=n, delta=200.0, delay_dist="poisson",
                        rounds=150, seed=1, injection_rate=200.0)
    trace = simulate(sc)
    lat = measure_latency(trace, tx_size=sc.tx_size)
    safe = check_atomic_broadcast(trace).passed
    responsive = check_no_timeouts(trace).passed
    print(f"n={n:2d}  rounds-to-commit {lat.rounds_mean:.2f} (sd {lat.rounds_sd:.2f})  "
          f"tx latency {lat.time_mean:6.1f} ms  safe={safe} responsive={responsive}")
