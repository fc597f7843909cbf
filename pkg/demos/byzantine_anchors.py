"""
Commit rate with silent anchors
===============================

A Byzantine anchor that withholds its block stops the commit of its own
round and of the round before it. How often anchors commit directly then
depends on where the faulty parties sit in the round-robin rotation: a
contiguous block of t faulty parties costs t+1 commits per rotation, while
spread-out faulty parties cost up to 2t.
"""

from dagbft.harness.metrics import commit_rate
from dagbft.harness.scenario import ScenarioConfig, simulate

ROUNDS = 1500

for n in (4, 7, 10, 13):
    t = (n - 1) // 3
    p = (n - t) ** 2 / n ** 2
    row = [f"n={n:2d} t={t}  independent-honesty estimate {p:.3f}"]
    for placement in ("last", "spread"):
        sc = ScenarioConfig(name="silent", n=n, t=t, adversary="silent-anchor", placement=placement,
                            delta=100.0, rounds=ROUNDS, seed=1, track_copies=False)
        cr = commit_rate(simulate(sc))
        row.append(f"{placement:6s} {cr.rate:.3f}")
    # direct-commit fractions under a fixed rotation: t+1 or 2t lost rounds per n
    row.append(f"rotation: contiguous {(n - t - 1) / n:.3f}, spread {(n - 2 * t) / n:.3f}")
    print("  ".join(row))
