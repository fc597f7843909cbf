"""Hand-written DAGs described as data.

A DAG document lists blocks as {"round", "creator", "strong", "weak"} where references
name (round, creator) slots. A block without "strong" references the whole
previous round. Blocks must be listed after everything they reference.
"""

from __future__ import annotations

from dataclasses import dataclass

from ..types import Block, Config, SimulatedSigner, make_block


@dataclass
class DagSpec:
    config: Config
    signer: SimulatedSigner
    blocks: dict[tuple[int, int], Block]
    named: dict[str, Block]

    def by_round(self, r: int) -> list[Block]:
        return [b for (rnd, _), b in sorted(self.blocks.items()) if rnd == r]


def build_dag(doc: dict) -> DagSpec:
    cfg = Config(doc["n"], doc["f"], doc.get("delta", 100.0))
    signer = SimulatedSigner()
    blocks: dict[tuple[int, int], Block] = {}
    for entry in doc["blocks"]:
        r, c = entry["round"], entry["creator"]
        if (r, c) in blocks:
            raise ValueError(f"slot {(r, c)} listed twice")
        if "strong" in entry:
            strong = [tuple(x) for x in entry["strong"]]
        else:
            strong = sorted(k for k in blocks if k[0] == r - 1)
        weak = [tuple(x) for x in entry.get("weak", ())]
        try:
            refs = [blocks[k].id for k in strong], [blocks[k].id for k in weak]
        except KeyError as exc:
            raise ValueError(f"block {(r, c)} references unknown slot {exc}") from None
        blocks[(r, c)] = make_block(r, c, refs[0], refs[1], bytes([r % 256, c % 256]), signer)
    named = {name: blocks[tuple(slot)] for name, slot in doc.get("anchors", {}).items()}
    return DagSpec(cfg, signer, blocks, named)
