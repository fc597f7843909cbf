"""
Walking through the recursive commit rule
=========================================

Four anchors are left uncommitted because each is missing the next round's
anchor. A later commit reaches all of them through strong references and
delivers them oldest first, each preceded by its undelivered history.
"""

import json
from pathlib import Path

from dagbft.dag import DagView
from dagbft.harness.dagspec import build_dag
from dagbft.ordering import DeliveredSet, delivery

SCENARIOS = Path(__file__).resolve().parent.parent / "scenarios"

doc = json.loads((SCENARIOS / "c04_recursive_commits.json").read_text())
dag = build_dag(doc)
names = {b.id: k for k, b in dag.named.items()}

# Feed the DAG to a view one round at a time and conclude each round, as a
# party would after receiving a quorum of blocks.
view = DagView(dag.config, dag.signer)
delivered = DeliveredSet()
for r in range(1, doc["expect"]["commit_round"] + 1):
    for b in dag.by_round(r):
        view.insert(b)
    events = delivery(r, view, delivered)
    if not events:
        print(f"round {r:2d}: nothing committed")
        continue
    print(f"round {r:2d}: {len(events)} blocks delivered")
    for e in events:
        b = e.block
        tag = names.get(b.id, "")
        print(f"    #{e.sequence_index:2d} round {b.round} creator {b.creator} {tag}")

# The anchors come out in the reverse order of the recursion.
print("anchor order:", [names[e.block.id] for e in events if e.block.id in names])
