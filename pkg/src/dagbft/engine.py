"""Per-party protocol state machine.

The engine never reads a clock or touches the network: every handler takes
the current time and returns an :class:`EngineOutput` listing messages to
send, timer operations and delivered blocks.
"""

from __future__ import annotations

import bisect
from collections import Counter, deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Iterable

from .dag import DagView, Reason
from .ordering import CommitEvent, DeliveredSet, delivery, topo_sort
from .types import Block, BlockId, BlockMessage, Config, PartyId, Round, Signer

PayloadFn = Callable[[PartyId, Round, float], bytes]


class TimerState(str, Enum):
    ARMED = "armed"
    FIRED = "fired"
    CLEARED = "cleared"


@dataclass(frozen=True)
class TimerOp:
    round: Round
    action: str  # "set" | "clear"
    duration: float = 0.0


@dataclass(frozen=True)
class Advance:
    concluded: Round
    new_round: Round
    time: float
    via_timeout: bool


@dataclass
class EngineOutput:
    sends: list[tuple[PartyId, BlockMessage]] = field(default_factory=list)
    timer_ops: list[TimerOp] = field(default_factory=list)
    delivers: list[CommitEvent] = field(default_factory=list)
    broadcasts: list[Block] = field(default_factory=list)
    advances: list[Advance] = field(default_factory=list)

    def __bool__(self):
        return bool(self.sends or self.timer_ops or self.delivers or self.broadcasts)


def advance_target(view: DagView, r: Round, fired: Iterable[Round] = ()) -> Round | None:
    """Highest r' >= r whose round may be concluded now, or None."""
    fired = set(fired)
    for rp in range(view.max_round, r - 1, -1):
        if not view.quorum(rp):
            continue
        if rp in fired:
            return rp
        if view.anchor(rp) and view.supp_anchor(rp - 1) and view.supp_anchor(rp - 2):
            return rp
    return None


class Engine:
    def __init__(self, me: PartyId, config: Config, signer: Signer, payload_fn: PayloadFn | None = None):
        self.me = me
        self.config = config
        self.signer = signer
        self.payload_fn = payload_fn
        self.r: Round = 0
        self.view = DagView(config, signer)
        self.delivered = DeliveredSet()
        # pending[j] = blocks in the view that j is not known to have (DAG \ history[j])
        self.pending: list[dict[BlockId, Block]] = [{} for _ in range(config.n)]
        self.timers: dict[Round, TimerState] = {}
        self.fired: set[Round] = set()
        self.adopted_rounds: list[Round] = []
        self.adopted_times: list[float] = []
        self.own_blocks: dict[Round, Block] = {}
        self.orphans: deque[BlockMessage] = deque()
        self.counters: Counter[str] = Counter()

    # -- handlers ---------------------------------------------------------

    def on_init(self, now: float) -> EngineOutput:
        out = EngineOutput()
        if self.r != 0:
            return out
        genesis = self._sign(Block(1, self.me, (), (), self._payload(1, now)))
        self._adopt(1, now)
        self._broadcast(genesis, out)
        self._set_timer(1, out)
        return out

    def on_receive(self, msg: BlockMessage, now: float) -> EngineOutput:
        out = EngineOutput()
        reason, added = self._apply(msg)
        if reason is not Reason.OK:
            return out
        if added:
            self._retry_orphans()
        self._progress(now, out)
        return out

    def on_timeout(self, rnd: Round, now: float) -> EngineOutput:
        out = EngineOutput()
        if rnd < self.r or self.timers.get(rnd) is not TimerState.ARMED:
            self.counters["stale-timeout"] += 1
            return out
        self.timers[rnd] = TimerState.FIRED
        self.fired.add(rnd)
        self._progress(now, out)
        return out

    def on_quorum(self, rnd: Round, now: float) -> EngineOutput:
        out = EngineOutput()
        if rnd >= self.r and rnd not in self.timers and self.view.quorum(rnd):
            self._set_timer(rnd, out)
        return out

    def maybe_advance(self, now: float) -> EngineOutput:
        out = EngineOutput()
        self._advance_loop(now, out)
        return out

    # -- receive path -----------------------------------------------------

    def _apply(self, msg: BlockMessage) -> tuple[Reason | str, int]:
        n = self.config.n
        if not 0 <= msg.sender < n:
            self.counters["rejected:bad-sender"] += 1
            return "bad-sender", 0
        if len(msg.history) > self.config.history_cap:
            self.counters["rejected:history-overflow"] += 1
            return "history-overflow", 0
        view = self.view
        blocks = list(msg.history)
        blocks.append(msg.block)
        unknown = {}
        for b in blocks:
            if not view.known(b.id):
                unknown[b.id] = b
        staged: dict[BlockId, Block] = {}
        for b in topo_sort(unknown.values()):
            reason = view.validate(b, staged)
            if reason is not Reason.OK:
                self.counters[f"rejected:{reason.value}"] += 1
                if reason is Reason.UNKNOWN_PARENT:
                    self._park(msg)
                return reason, 0
            staged[b.id] = b
        sender = msg.sender
        for b in staged.values():
            view.insert(b, validated=True)
            for k in range(n):
                if k != sender and k != self.me:
                    self.pending[k][b.id] = b
        known_to_sender = self.pending[sender]
        for b in blocks:
            known_to_sender.pop(b.id, None)
        if not staged and sender != self.me:
            self.counters["duplicate-message"] += 1
        return Reason.OK, len(staged)

    def _park(self, msg: BlockMessage):
        if any(m is msg for m in self.orphans):
            return
        self.orphans.append(msg)
        self.counters["orphaned"] += 1
        while len(self.orphans) > self.config.orphan_cap:
            self.orphans.popleft()
            self.counters["orphan-evicted"] += 1

    def _retry_orphans(self):
        progress = True
        while progress and self.orphans:
            progress = False
            for msg in list(self.orphans):
                if self._resolvable(msg):
                    self.orphans.remove(msg)
                    reason, added = self._apply(msg)
                    if reason is Reason.OK:
                        self.counters["orphan-recovered"] += 1
                        progress = progress or added > 0

    def _resolvable(self, msg: BlockMessage) -> bool:
        carried = {h.id for h in msg.history}
        known = self.view.known
        return all(known(ref) or ref in carried
                   for b in (*msg.history, msg.block) for ref in b.refs)

    # -- round advance ----------------------------------------------------

    def _progress(self, now: float, out: EngineOutput):
        self._advance_loop(now, out)
        for rnd in range(self.r, self.view.max_round + 1):
            if rnd not in self.timers and self.view.quorum(rnd):
                self._set_timer(rnd, out)

    def _advance_loop(self, now: float, out: EngineOutput):
        while self.r >= 1:
            target = advance_target(self.view, self.r, self.fired)
            if target is None:
                return
            self._conclude(target, now, out)

    def _conclude(self, rp: Round, now: float, out: EngineOutput):
        view = self.view
        responsive = view.anchor(rp) and view.supp_anchor(rp - 1) and view.supp_anchor(rp - 2)
        # rounds <= rp are never consulted again once r moves past them
        for rnd in [x for x in self.timers if x <= rp]:
            if self.timers.pop(rnd) is TimerState.ARMED:
                out.timer_ops.append(TimerOp(rnd, "clear"))
        out.delivers.extend(delivery(rp, view, self.delivered))
        low = self.gc_round(now, rp)
        self._emit_block(rp, low, now, out)
        out.advances.append(Advance(rp, rp + 1, now, not responsive))
        view.prune(low, self.delivered.ids)
        for rnd in [x for x in self.fired if x <= rp]:
            self.fired.discard(rnd)

    def _emit_block(self, rp: Round, low: Round, now: float, out: EngineOutput):
        block = self.build_block(rp, now, low)
        self._adopt(rp + 1, now)
        self._broadcast(block, out)

    def _adopt(self, rnd: Round, now: float):
        self.r = rnd
        self.adopted_rounds.append(rnd)
        self.adopted_times.append(now)

    def _broadcast(self, block: Block, out: EngineOutput, dests: Iterable[PartyId] | None = None):
        self.view.insert(block, validated=True)
        self.own_blocks.setdefault(block.round, block)
        out.broadcasts.append(block)
        targets = range(self.config.n) if dests is None else dests
        for j in targets:
            if j == self.me:
                history = ()
            else:
                history = tuple(self.history_diff(j))
                self.pending[j] = {}
            out.sends.append((j, BlockMessage(block, history, self.me, block.round)))

    def _set_timer(self, rnd: Round, out: EngineOutput):
        self.timers[rnd] = TimerState.ARMED
        out.timer_ops.append(TimerOp(rnd, "set", self.config.timeout))

    # -- block construction ----------------------------------------------

    def time_of(self, rnd: Round) -> float | None:
        """Adoption time of `rnd`, or of the smallest adopted round above it."""
        i = bisect.bisect_left(self.adopted_rounds, rnd)
        if i == len(self.adopted_rounds):
            return None
        return self.adopted_times[i]

    def gc_round(self, now: float, rp: Round | None = None) -> Round:
        """Smallest round adopted within the gc window of `now` (bounded by rp)."""
        cutoff = now - self.config.gc_window
        i = bisect.bisect_left(self.adopted_times, cutoff)
        upper = self.r if rp is None else rp
        if i == len(self.adopted_times):
            return upper
        low = 1 if i == 0 else self.adopted_rounds[i - 1] + 1
        return min(low, upper)

    def build_block(self, rp: Round, now: float, low: Round | None = None) -> Block:
        """Block for round rp+1: one strong ref per creator of round rp, weak refs to
        uncovered undelivered blocks adopted within the gc window."""
        view = self.view
        if low is None:
            low = self.gc_round(now, rp)
        parents = [min(ids) for _, ids in sorted(view.creators_by_round.get(rp, {}).items()) if ids]
        weak = self._uncovered(parents, low, rp)
        block = Block(rp + 1, self.me, parents, weak, self._payload(rp + 1, now))
        return self._sign(block)

    def _uncovered(self, parents: list[BlockId], low: Round, rp: Round) -> list[BlockId]:
        view = self.view
        delivered = self.delivered
        candidates = set()
        for rnd in range(low, rp):
            for bid, b in view.blocks_by_round.get(rnd, {}).items():
                if bid not in delivered.ids and delivered.slot_free(b):
                    candidates.add(bid)
        if not candidates:
            return []
        by_id = view.by_id
        seen = set(parents)
        stack = list(parents)
        remaining = len(candidates)
        while stack and remaining:
            b = by_id.get(stack.pop())
            if b is None:
                continue
            for ref in b.refs:
                if ref in seen or ref in delivered.ids:
                    continue
                seen.add(ref)
                if ref in candidates:
                    remaining -= 1
                rb = by_id.get(ref)
                if rb is not None and rb.round >= low:
                    stack.append(ref)
        return sorted(candidates - seen)

    def history_diff(self, j: PartyId) -> list[Block]:
        """Blocks of the view that j is not known to have, in topological order."""
        if j == self.me:
            return []
        return topo_sort(b for b in self.pending[j].values() if b.id in self.view.by_id)

    def _payload(self, rnd: Round, now: float) -> bytes:
        return self.payload_fn(self.me, rnd, now) if self.payload_fn else b""

    def _sign(self, block: Block) -> Block:
        return block.with_signature(self.signer.sign(block, self.me))
