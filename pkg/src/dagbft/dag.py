"""One party's local view of the DAG."""

from __future__ import annotations

from enum import Enum
from typing import Container, Iterable, Mapping

from .types import Block, BlockId, Config, PartyId, Round, Signer


def rr(r: Round, n: int) -> PartyId:
    """Round-robin anchor schedule."""
    return r % n


class Reason(str, Enum):
    OK = "ok"
    UNKNOWN_PARENT = "unknown-parent"
    INSUFFICIENT_PARENTS = "insufficient-parents"
    DUPLICATE_CREATOR_PARENT = "duplicate-creator-parent"
    BAD_SIGNATURE = "bad-signature"
    BAD_ROUND = "bad-round"
    BAD_CREATOR = "bad-creator"


class InsertResult(str, Enum):
    ADDED = "added"
    DUPLICATE = "duplicate"
    EQUIVOCATION = "equivocation-recorded"


class InvalidBlock(ValueError):
    def __init__(self, block: Block, reason: Reason):
        super().__init__(f"{block!r} rejected: {reason.value}")
        self.block = block
        self.reason = reason


class DagView:
    """Local DAG with support, equivocation and reachability indexes.

    Blocks of rounds below ``pruned_below`` are only kept while undelivered;
    pruned blocks leave a tombstone ``id -> (round, creator)`` so that late
    blocks referencing them still validate.
    """

    def __init__(self, config: Config, signer: Signer):
        self.config = config
        self.signer = signer
        self.by_id: dict[BlockId, Block] = {}
        self.blocks_by_round: dict[Round, dict[BlockId, Block]] = {}
        self.creators_by_round: dict[Round, dict[PartyId, list[BlockId]]] = {}
        self.supporters: dict[BlockId, set[PartyId]] = {}
        self.equivocations: dict[tuple[PartyId, Round], set[BlockId]] = {}
        self.tombstones: dict[BlockId, tuple[Round, PartyId]] = {}
        self.pruned_below: Round = 0
        self.max_round: Round = 0
        self._strong_memo: dict[BlockId, frozenset[BlockId]] = {}
        self._past_memo: dict[BlockId, frozenset[BlockId]] = {}
        self._prune_scan_from: Round = 0
        self._leftover_rounds: set[Round] = set()

    def __len__(self):
        return len(self.by_id)

    def __contains__(self, block_id: BlockId):
        return block_id in self.by_id

    def known(self, block_id: BlockId) -> bool:
        return block_id in self.by_id or block_id in self.tombstones

    def rr(self, r: Round) -> PartyId:
        return r % self.config.n

    def round_blocks(self, r: Round) -> list[Block]:
        return list(self.blocks_by_round.get(r, {}).values())

    # -- validity ---------------------------------------------------------

    def _lookup(self, ref: BlockId, extra: Mapping[BlockId, Block] | None):
        b = self.by_id.get(ref)
        if b is None and extra is not None:
            b = extra.get(ref)
        if b is not None:
            return b.round, b.creator
        return self.tombstones.get(ref)

    def validate(self, block: Block, extra: Mapping[BlockId, Block] | None = None) -> Reason:
        """Check the validity predicate; `extra` holds staged blocks not yet inserted."""
        if not 0 <= block.creator < self.config.n:
            return Reason.BAD_CREATOR
        if not self.signer.verify(block):
            return Reason.BAD_SIGNATURE
        if block.round == 1:
            return Reason.BAD_ROUND if (block.strong_refs or block.weak_refs) else Reason.OK
        parent_creators = set()
        for ref in block.strong_refs:
            info = self._lookup(ref, extra)
            if info is None:
                return Reason.UNKNOWN_PARENT
            rnd, creator = info
            if rnd != block.round - 1:
                return Reason.BAD_ROUND
            if creator in parent_creators:
                return Reason.DUPLICATE_CREATOR_PARENT
            parent_creators.add(creator)
        for ref in block.weak_refs:
            info = self._lookup(ref, extra)
            if info is None:
                return Reason.UNKNOWN_PARENT
            if info[0] >= block.round - 1:
                return Reason.BAD_ROUND
        if len(parent_creators) < self.config.quorum_size:
            return Reason.INSUFFICIENT_PARENTS
        return Reason.OK

    def is_valid(self, block: Block) -> bool:
        return self.validate(block) is Reason.OK

    # -- mutation ---------------------------------------------------------

    def insert(self, block: Block, validated: bool = False) -> InsertResult:
        bid = block.id
        if bid in self.by_id or bid in self.tombstones:
            return InsertResult.DUPLICATE
        if not validated:
            reason = self.validate(block)
            if reason is not Reason.OK:
                raise InvalidBlock(block, reason)
        r = block.round
        self.by_id[bid] = block
        self.blocks_by_round.setdefault(r, {})[bid] = block
        if r > self.max_round:
            self.max_round = r
        if r < self.pruned_below:
            self._leftover_rounds.add(r)
        supporters = self.supporters
        creator = block.creator
        for ref in block.strong_refs:
            supporters.setdefault(ref, set()).add(creator)
        slot_ids = self.creators_by_round.setdefault(r, {}).setdefault(creator, [])
        slot_ids.append(bid)
        if len(slot_ids) > 1:
            self.equivocations[(creator, r)] = set(slot_ids)
            return InsertResult.EQUIVOCATION
        return InsertResult.ADDED

    def prune(self, retain_from: Round, delivered: Container[BlockId]) -> int:
        """Drop delivered blocks of rounds below `retain_from`; undelivered ones stay."""
        if retain_from <= self.pruned_below:
            return 0
        rounds = set(range(self._prune_scan_from, retain_from)) | self._leftover_rounds
        removed = 0
        leftovers = set()
        for r in sorted(rounds):
            if r >= retain_from:
                continue
            bucket = self.blocks_by_round.get(r)
            if not bucket:
                continue
            for bid in [bid for bid in bucket if bid in delivered]:
                self._remove(bucket.pop(bid))
                removed += 1
            if bucket:
                leftovers.add(r)
            else:
                del self.blocks_by_round[r]
                self.creators_by_round.pop(r, None)
        self._leftover_rounds = leftovers
        self._prune_scan_from = retain_from
        self.pruned_below = retain_from
        return removed

    def _remove(self, block: Block):
        bid = block.id
        del self.by_id[bid]
        self.tombstones[bid] = (block.round, block.creator)
        self.supporters.pop(bid, None)
        self._strong_memo.pop(bid, None)
        self._past_memo.pop(bid, None)
        creators = self.creators_by_round.get(block.round)
        if creators is not None:
            ids = creators.get(block.creator)
            if ids is not None and bid in ids:
                ids.remove(bid)
                if not ids:
                    del creators[block.creator]

    # -- reachability -----------------------------------------------------

    def _closure(self, block: Block, strong_only: bool) -> frozenset[BlockId]:
        memo = self._strong_memo if strong_only else self._past_memo
        by_id = self.by_id
        stack = [block]
        while stack:
            top = stack[-1]
            if top.id in memo:
                stack.pop()
                continue
            refs = top.strong_refs if strong_only else top.refs
            pending = [by_id[x] for x in refs if x in by_id and x not in memo]
            if pending:
                stack.extend(pending)
                continue
            acc = set(refs)
            for x in refs:
                sub = memo.get(x)
                if sub:
                    acc |= sub
            memo[top.id] = frozenset(acc)
            stack.pop()
        return memo[block.id]

    def strong(self, block: Block) -> set[Block]:
        """Blocks reachable through strong references (block itself excluded)."""
        ids = self._closure(block, strong_only=True)
        return {self.by_id[x] for x in ids if x in self.by_id}

    def past(self, block: Block) -> set[Block]:
        """Blocks reachable through strong and weak references (block itself excluded)."""
        ids = self._closure(block, strong_only=False)
        return {self.by_id[x] for x in ids if x in self.by_id}

    # -- support and round predicates ------------------------------------

    def supp(self, block: Block) -> int:
        return len(self.supporters.get(block.id, ()))

    def quorum(self, r: Round) -> bool:
        return len(self.creators_by_round.get(r, ())) >= self.config.quorum_size

    def anchors_of(self, r: Round) -> list[Block]:
        """All blocks of round r by the round's anchor party, equivocations included."""
        ids = self.creators_by_round.get(r, {}).get(self.rr(r), ())
        return [self.by_id[x] for x in sorted(ids)]

    def anchor(self, r: Round) -> bool:
        if r <= 0:
            return True
        return bool(self.creators_by_round.get(r, {}).get(self.rr(r)))

    def supp_anchor(self, r: Round) -> bool:
        if r <= 0:
            return True
        q = self.config.quorum_size
        return any(self.supp(b) >= q for b in self.anchors_of(r))

    def creators(self, r: Round) -> list[PartyId]:
        return sorted(self.creators_by_round.get(r, ()))

    def slot_blocks(self, creator: PartyId, r: Round) -> list[Block]:
        ids = self.creators_by_round.get(r, {}).get(creator, ())
        return [self.by_id[x] for x in sorted(ids)]

    # -- debugging --------------------------------------------------------

    def dump(self) -> str:
        """Adjacency list: round-major, creator-minor, id-sorted."""
        lines = []
        for r in sorted(self.blocks_by_round):
            for b in sorted(self.blocks_by_round[r].values(), key=lambda b: (b.creator, b.id)):
                strong = ",".join(x.hex()[:16] for x in b.strong_refs)
                weak = ",".join(x.hex()[:16] for x in b.weak_refs)
                lines.append(f"{r} {b.creator} {b.id.hex()[:16]} strong=[{strong}] weak=[{weak}]")
        return "\n".join(lines) + ("\n" if lines else "")


def blocks_to_view(blocks: Iterable[Block], config: Config, signer: Signer) -> DagView:
    """Insert blocks in (round, creator, id) order, validating each."""
    view = DagView(config, signer)
    for b in sorted(blocks, key=lambda b: (b.round, b.creator, b.id)):
        view.insert(b)
    return view
