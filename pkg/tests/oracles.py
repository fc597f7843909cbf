"""Brute-force reference implementations and a random DAG generator.

Everything here recomputes from scratch on plain dicts of blocks, with no
memoization, incremental indexes or early stopping.
"""

from __future__ import annotations

import math
import random

from dagbft.types import Block, Config, SimulatedSigner, make_block


def _reach(bid, blocks, edges):
    out = set()
    frontier = [bid]
    while frontier:
        nxt = []
        for x in frontier:
            for ref in edges(blocks[x]):
                if ref in blocks and ref not in out:
                    out.add(ref)
                    nxt.append(ref)
        frontier = nxt
    return out


def strong_bf(bid, blocks):
    return _reach(bid, blocks, lambda b: b.strong_refs)


def past_bf(bid, blocks):
    return _reach(bid, blocks, lambda b: b.strong_refs + b.weak_refs)


def supp_bf(bid, blocks):
    """Creators of next-round blocks that strongly reach `bid` but no equivocating sibling."""
    b = blocks[bid]
    siblings = {x for x, o in blocks.items() if o.round == b.round and o.creator == b.creator and x != bid}
    creators = set()
    for x, o in blocks.items():
        if o.round != b.round + 1:
            continue
        reach = strong_bf(x, blocks)
        if bid in reach and not (reach & siblings):
            creators.add(o.creator)
    return len(creators)


def quorum_bf(r, blocks, cfg):
    return len({b.creator for b in blocks.values() if b.round == r}) >= cfg.n - cfg.f


def anchor_bf(r, blocks, cfg):
    if r <= 0:
        return True
    return any(b.round == r and b.creator == r % cfg.n for b in blocks.values())


def supp_anchor_bf(r, blocks, cfg):
    if r <= 0:
        return True
    return any(b.round == r and b.creator == r % cfg.n and supp_bf(x, blocks) >= cfg.n - cfg.f
               for x, b in blocks.items())


def advance_bf(r, blocks, cfg, fired=()):
    top = max((b.round for b in blocks.values()), default=0)
    best = None
    for rp in range(r, top + 1):
        if not quorum_bf(rp, blocks, cfg):
            continue
        if rp in fired or (anchor_bf(rp, blocks, cfg) and supp_anchor_bf(rp - 1, blocks, cfg)
                           and supp_anchor_bf(rp - 2, blocks, cfg)):
            best = rp
    return best


def tau(b):
    return (b.round, b.creator, b.id)


def _is_anchor(b, n):
    return b.creator == b.round % n


def _gap_bf(bid, blocks, n):
    anchors = [blocks[x] for x in strong_bf(bid, blocks) if _is_anchor(blocks[x], n)]
    if not anchors:
        return math.inf
    return abs(blocks[bid].round - max(a.round for a in anchors))


class NaiveLedger:
    """Literal commit rule over full closures; delivered = list of ids."""

    def __init__(self, blocks, cfg):
        self.blocks = blocks
        self.cfg = cfg
        self.log = []
        self.ids = set()
        self.slots = set()
        self.floor = 0

    def _free(self, b):
        return b.id not in self.ids and (b.creator, b.round) not in self.slots

    def _deliver(self, b):
        if self._free(b):
            self.log.append(b.id)
            self.ids.add(b.id)
            self.slots.add((b.creator, b.round))

    def commit(self, bid):
        n = self.cfg.n
        chain = [bid]
        cur = bid
        while True:
            cands = [self.blocks[x] for x in strong_bf(cur, self.blocks)
                     if _is_anchor(self.blocks[x], n) and self._free(self.blocks[x])
                     and self.blocks[x].round > self.floor]
            if not cands:
                break
            top = max(c.round for c in cands)
            cur = min((c for c in cands if c.round == top), key=lambda c: (_gap_bf(c.id, self.blocks, n), c.id)).id
            chain.append(cur)
        for a in reversed(chain):
            hist = sorted((self.blocks[x] for x in past_bf(a, self.blocks) if x not in self.ids), key=tau)
            for b in hist:
                self._deliver(b)
            self._deliver(self.blocks[a])
        self.floor = max(self.floor, self.blocks[bid].round)

    def conclude(self, r):
        n, q = self.cfg.n, self.cfg.n - self.cfg.f
        if r < 3:
            return
        nxt = [x for x, b in self.blocks.items() if b.round == r - 1 and _is_anchor(b, n)
               and supp_bf(x, self.blocks) >= q]
        for x, b in sorted(self.blocks.items()):
            if b.round == r - 2 and b.round > self.floor and _is_anchor(b, n) and self._free(b) \
                    and supp_bf(x, self.blocks) >= q \
                    and any(x in self.blocks[y].strong_refs for y in nxt):
                self.commit(x)


def random_dag(rng: random.Random, n: int | None = None, rounds: int | None = None,
               equivocation: float = 0.15, presence: float = 0.85, weak: float = 0.3):
    """A valid random DAG: at most f creators equivocate, every round keeps a quorum."""
    n = n or rng.randint(4, 7)
    f = (n - 1) // 3
    rounds = rounds or rng.randint(1, 6)
    cfg = Config(n, f, 100.0)
    signer = SimulatedSigner()
    byz = set(rng.sample(range(n), f))
    blocks: dict[bytes, Block] = {}
    by_round: dict[int, list[Block]] = {}
    for r in range(1, rounds + 1):
        present = [c for c in range(n) if rng.random() < presence]
        while len(present) < n - f:
            c = rng.randrange(n)
            if c not in present:
                present.append(c)
        made = []
        for c in sorted(present):
            copies = 2 if (c in byz and rng.random() < equivocation) else 1
            for k in range(copies):
                strong = ()
                weak_refs = ()
                if r > 1:
                    prev = by_round[r - 1]
                    per_creator: dict[int, list[Block]] = {}
                    for b in prev:
                        per_creator.setdefault(b.creator, []).append(b)
                    creators = sorted(per_creator)
                    size = rng.randint(n - f, len(creators))
                    chosen = rng.sample(creators, size)
                    strong = tuple(rng.choice(per_creator[pc]).id for pc in chosen)
                    older = [b for rr_ in range(1, r - 1) for b in by_round[rr_]]
                    if older and rng.random() < weak:
                        weak_refs = tuple(b.id for b in rng.sample(older, rng.randint(1, min(3, len(older)))))
                payload = bytes([r % 256, c, k, rng.randrange(256)])
                b = make_block(r, c, strong, weak_refs, payload, signer)
                made.append(b)
                blocks[b.id] = b
        by_round[r] = made
    return cfg, signer, blocks, byz
