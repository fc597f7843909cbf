"""Commit rule and total order of delivered blocks."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable

from .dag import DagView, rr
from .types import Block, BlockId, PartyId, Round


@dataclass
class DeliveredSet:
    ids: set[BlockId] = field(default_factory=set)
    by_slot: dict[tuple[PartyId, Round], BlockId] = field(default_factory=dict)
    count: int = 0
    # round of the last anchor committed; recursion never goes at or below it
    anchor_round: Round = 0

    def __contains__(self, block_id: BlockId) -> bool:
        return block_id in self.ids

    def __len__(self):
        return len(self.ids)

    def slot_free(self, block: Block) -> bool:
        return block.slot not in self.by_slot

    def add(self, block: Block) -> bool:
        """Record delivery; False if the block or its (creator, round) slot is taken."""
        if block.id in self.ids or block.slot in self.by_slot:
            return False
        self.ids.add(block.id)
        self.by_slot[block.slot] = block.id
        self.count += 1
        return True


@dataclass(frozen=True)
class CommitEvent:
    block: Block
    sequence_index: int
    committing_anchor: BlockId
    at_round: Round = 0

    def log_line(self) -> str:
        b = self.block
        return f"{self.sequence_index} {b.round} {b.creator} {b.id.hex()} {self.committing_anchor.hex()}"


def topo_sort(blocks: Iterable[Block]) -> list[Block]:
    """Deterministic topological order: ascending (round, creator, id).

    References always point to strictly lower rounds, so round order is a
    valid topological order.
    """
    return sorted(blocks, key=lambda b: (b.round, b.creator, b.id))


def max_anchor(blocks: Iterable[Block], n: int) -> list[Block]:
    """Anchor blocks of the highest round present, sorted by id."""
    anchors = [b for b in blocks if b.creator == rr(b.round, n)]
    if not anchors:
        return []
    top = max(b.round for b in anchors)
    return sorted((b for b in anchors if b.round == top), key=lambda b: b.id)


def undelivered_closure(block: Block, view: DagView, delivered: DeliveredSet,
                        strong_only: bool = False) -> list[Block]:
    """Undelivered part of strong(block) or past(block).

    The walk stops at delivered blocks: everything below a delivered block
    is either delivered or has its slot already taken, so nothing there can
    be delivered again.
    """
    by_id = view.by_id
    seen: set[BlockId] = set()
    out = []
    stack = [block]
    while stack:
        cur = stack.pop()
        for ref in (cur.strong_refs if strong_only else cur.refs):
            if ref in seen or ref in delivered.ids:
                continue
            seen.add(ref)
            b = by_id.get(ref)
            if b is None:
                continue
            out.append(b)
            stack.append(b)
    return out


def _nearest_anchor_gap(block: Block, view: DagView) -> float:
    """|round(A) - round(maxAnchor(strong(A)))|, +inf when strong(A) has no anchor."""
    n = view.config.n
    level = set(block.strong_refs)
    rnd = block.round - 1
    while level and rnd >= 1:
        anchor_party = rr(rnd, n)
        nxt = set()
        for ref in level:
            b = view.by_id.get(ref)
            if b is not None:
                if b.creator == anchor_party:
                    return block.round - rnd
                nxt.update(b.strong_refs)
            else:
                info = view.tombstones.get(ref)
                if info is not None and info[1] == anchor_party:
                    return block.round - rnd
        level = nxt
        rnd -= 1
    return math.inf


def pick_anchor(candidates: list[Block], view: DagView) -> Block:
    if len(candidates) == 1:
        return candidates[0]
    return min(candidates, key=lambda a: (_nearest_anchor_gap(a, view), a.id))


def commit(block: Block, view: DagView, delivered: DeliveredSet, at_round: Round = 0) -> list[CommitEvent]:
    """Commit `block`, first committing earlier anchors it strongly reaches.

    The recursion only considers anchors above the last committed anchor
    round. Filtering by the local delivered set alone makes the chain depend
    on which anchors a party happened to commit directly, and two parties
    can then deliver the same anchor at different positions. With the
    watermark every party walks a truncation of the same chain.
    """
    n = view.config.n
    floor = delivered.anchor_round
    chain = [block]
    cur = block
    while True:
        pending = [b for b in undelivered_closure(cur, view, delivered, strong_only=True)
                   if b.round > floor and b.creator == rr(b.round, n) and delivered.slot_free(b)]
        if not pending:
            break
        cur = pick_anchor(max_anchor(pending, n), view)
        chain.append(cur)

    events = []
    for anchor_block in reversed(chain):
        history = topo_sort(undelivered_closure(anchor_block, view, delivered))
        for b in history + [anchor_block]:
            if delivered.add(b):
                events.append(CommitEvent(b, delivered.count - 1, block.id, at_round))
    delivered.anchor_round = max(delivered.anchor_round, block.round)
    return events


def commit_candidates(r: Round, view: DagView, delivered: DeliveredSet | None = None) -> list[Block]:
    """Anchors of round r-2 satisfying the commit condition at the end of round r."""
    if r < 3:
        return []
    q = view.config.quorum_size
    next_anchors = [b for b in view.anchors_of(r - 1) if view.supp(b) >= q]
    out = []
    for b in view.anchors_of(r - 2):
        if delivered is not None and (b.id in delivered or not delivered.slot_free(b)
                                      or b.round <= delivered.anchor_round):
            continue
        if view.supp(b) < q:
            continue
        if any(b.id in nb.strong_refs for nb in next_anchors):
            out.append(b)
    return out


def delivery(r: Round, view: DagView, delivered: DeliveredSet) -> list[CommitEvent]:
    """Attempt to commit the anchor of round r-2 when concluding round r."""
    candidates = commit_candidates(r, view, delivered)
    assert len(candidates) <= 1, f"two supported anchors committed in round {r - 2}"
    events = []
    for b in candidates:
        events.extend(commit(b, view, delivered, at_round=r))
    return events
