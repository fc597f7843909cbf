"""Deterministic discrete-event simulation of a partially synchronous network.

All times are in milliseconds. A run is fully determined by
``(config, network model, adversary plan, seed)``.
"""

from __future__ import annotations

import gc
import heapq
import json
import math
import random
from dataclasses import asdict, dataclass, field
from typing import Callable, Iterable

import numpy as np

from .dag import rr
from .engine import Engine, EngineOutput
from .types import Block, BlockMessage, Config, PartyId, Round, Signer, SimulatedSigner, Ed25519Signer

DELAY_KINDS = ("poisson", "uniform", "fixed", "per-link")
PRE_GST_POLICIES = ("adversary", "hold")
BEHAVIORS = ("crash", "silent-anchor", "equivocate", "delay-own-sends", "selective-send")


@dataclass(frozen=True)
class NetworkModel:
    delta: float
    gst: float = 0.0
    delay_dist: str = "poisson"
    fixed_delay: float | None = None
    pre_gst_policy: str = "adversary"

    def __post_init__(self):
        if self.delay_dist not in DELAY_KINDS:
            raise ValueError(f"unknown delay distribution {self.delay_dist!r}")
        if self.pre_gst_policy not in PRE_GST_POLICIES:
            raise ValueError(f"unknown pre-GST policy {self.pre_gst_policy!r}")
        if self.delay_dist == "fixed" and self.fixed_delay is None:
            raise ValueError("fixed delay distribution needs fixed_delay")

    @property
    def epsilon(self) -> float:
        return min(1.0, self.delta / 100)


def _raw_delay(model: NetworkModel, rng: np.random.Generator) -> float:
    if model.delay_dist == "poisson":
        return float(rng.poisson(model.delta / 2))
    if model.delay_dist == "uniform":
        return float(rng.uniform(0.0, model.delta))
    return float(model.fixed_delay)


def sample_delay(model: NetworkModel, rng: np.random.Generator, raw: bool = False) -> float:
    """Post-GST one-way delay. Poisson samples (mean delta/2) are clamped to [eps, delta]."""
    d = _raw_delay(model, rng)
    if raw or model.delay_dist == "fixed":
        return d
    return min(max(d, model.epsilon), model.delta)


class DelaySampler:
    """Buffered post-GST delay source; counts clamp events."""

    _CHUNK = 4096

    def __init__(self, model: NetworkModel, rng: np.random.Generator, n: int):
        self.model = model
        self.rng = rng
        self.clamped = 0
        self._buf: list[float] = []
        self._link = None
        if model.delay_dist == "per-link":
            self._link = rng.uniform(model.epsilon, model.delta, size=(n, n)).tolist()

    def _refill(self):
        m = self.model
        if m.delay_dist == "poisson":
            chunk = self.rng.poisson(m.delta / 2, size=self._CHUNK).astype(float)
        else:
            chunk = self.rng.uniform(0.0, m.delta, size=self._CHUNK)
        self._buf = chunk[::-1].tolist()

    def sample(self, src: PartyId, dst: PartyId) -> float:
        m = self.model
        if m.delay_dist == "fixed":
            return float(m.fixed_delay)
        if self._link is not None:
            return self._link[src][dst]
        if not self._buf:
            self._refill()
        d = self._buf.pop()
        lo, hi = m.epsilon, m.delta
        if d < lo or d > hi:
            self.clamped += 1
            d = min(max(d, lo), hi)
        return d


class PreGstScheduler:
    """Seeded adversarial scheduling before GST.

    Heuristics: per epoch of 4 delta a random minority is favoured; messages
    on the same side of the partition get widely varying delays (so they are
    reordered), messages crossing it are mostly held until GST. Every message
    sent before GST is delivered by GST + delta.
    """

    def __init__(self, model: NetworkModel, n: int, rng: random.Random):
        self.model = model
        self.n = n
        self.rng = rng
        self._partitions: dict[int, frozenset[int]] = {}

    def _minority(self, epoch: int) -> frozenset[int]:
        part = self._partitions.get(epoch)
        if part is None:
            size = self.rng.randint(1, max(1, (self.n - 1) // 3))
            part = frozenset(self.rng.sample(range(self.n), size))
            self._partitions[epoch] = part
        return part

    def assign(self, send_time: float, src: PartyId, dst: PartyId) -> float:
        m = self.model
        deadline = m.gst + self.rng.uniform(0.0, m.delta)
        if m.pre_gst_policy == "hold":
            return max(send_time, deadline)
        minority = self._minority(int(send_time // (4 * m.delta)))
        same_side = (src in minority) == (dst in minority)
        if same_side:
            d = self.rng.uniform(0.0, m.delta) * (1 + 4 * self.rng.random())
        elif dst in minority and self.rng.random() < 0.5:
            d = self.rng.uniform(0.0, m.delta)
        elif self.rng.random() < 0.7:
            return max(send_time, deadline)
        else:
            d = self.rng.uniform(0.0, 5 * m.delta)
        return max(send_time, min(send_time + d, deadline))


def schedule_pre_gst(messages: Iterable[tuple[float, PartyId, PartyId]], model: NetworkModel,
                     n: int, rng: random.Random) -> list[float]:
    """Delivery times for (send_time, src, dst) triples sent before GST."""
    sched = PreGstScheduler(model, n, rng)
    return [sched.assign(t, s, d) for t, s, d in messages]


@dataclass(frozen=True)
class Behavior:
    kind: str
    at_round: Round = 1
    rounds: frozenset[Round] | None = None
    subset: tuple[PartyId, ...] = ()

    def __post_init__(self):
        if self.kind not in BEHAVIORS:
            raise ValueError(f"unknown behavior {self.kind!r}")
        if self.rounds is not None:
            object.__setattr__(self, "rounds", frozenset(self.rounds))

    def to_dict(self) -> dict:
        d = {"kind": self.kind, "at_round": self.at_round, "subset": list(self.subset)}
        d["rounds"] = None if self.rounds is None else sorted(self.rounds)
        return d


@dataclass(frozen=True)
class AdversaryPlan:
    corrupted: dict[PartyId, Behavior] = field(default_factory=dict)
    pre_gst_seed: int = 0

    @property
    def t(self) -> int:
        return len(self.corrupted)

    def honest(self, n: int) -> list[PartyId]:
        return [i for i in range(n) if i not in self.corrupted]

    def to_dict(self) -> dict:
        return {"corrupted": {str(k): v.to_dict() for k, v in sorted(self.corrupted.items())},
                "pre_gst_seed": self.pre_gst_seed}

    @classmethod
    def from_dict(cls, d: dict) -> "AdversaryPlan":
        corrupted = {}
        for k, v in d.get("corrupted", {}).items():
            rounds = v.get("rounds")
            corrupted[int(k)] = Behavior(v["kind"], v.get("at_round", 1),
                                         None if rounds is None else frozenset(rounds),
                                         tuple(v.get("subset", ())))
        return cls(corrupted, d.get("pre_gst_seed", 0))


class ByzantineEngine(Engine):
    """Engine whose block creation deviates (silent anchor, equivocation)."""

    def __init__(self, *args, behavior: Behavior, **kwargs):
        super().__init__(*args, **kwargs)
        self.behavior = behavior

    def _emit_block(self, rp, low, now, out):
        nxt = rp + 1
        kind = self.behavior.kind
        if kind == "silent-anchor" and rr(nxt, self.config.n) == self.me:
            self._adopt(nxt, now)
            return
        rounds = self.behavior.rounds
        if kind == "equivocate" and (rounds is None or nxt in rounds):
            first = self.build_block(rp, now, low)
            twin = Block(first.round, first.creator, first.strong_refs, first.weak_refs,
                         first.payload + b"\x00equivocation")
            twin = self._sign(twin)
            others = [j for j in range(self.config.n) if j != self.me]
            half = math.ceil(len(others) / 2)
            self._adopt(nxt, now)
            self._broadcast(first, out, [self.me, *others[:half]])
            self._broadcast(twin, out, others[half:])
            return
        super()._emit_block(rp, low, now, out)


def is_crashed(behavior: Behavior | None, current_round: Round) -> bool:
    return behavior is not None and behavior.kind == "crash" and current_round >= behavior.at_round


def adversary_transform(party: PartyId, output: EngineOutput, plan: AdversaryPlan,
                        current_round: Round, n: int) -> tuple[EngineOutput, bool]:
    """Apply the corrupted party's message-level behavior.

    Returns the filtered output and whether sends must take the maximal delay.
    """
    behavior = plan.corrupted.get(party)
    if behavior is None:
        return output, False
    kind = behavior.kind
    if kind == "crash" and is_crashed(behavior, current_round):
        return EngineOutput(), False
    if kind == "silent-anchor":
        output.sends = [(j, m) for j, m in output.sends if rr(m.round, n) != party]
    elif kind == "selective-send":
        allowed = set(behavior.subset) | {party}
        output.sends = [(j, m) for j, m in output.sends if j in allowed]
    elif kind == "delay-own-sends":
        return output, True
    return output, False


@dataclass
class StopCondition:
    at_time: float | None = None
    at_round: Round | None = None
    at_commits: int | None = None
    max_events: int = 50_000_000


@dataclass
class RunTrace:
    """Everything observed during a run; checkers and metrics read only this."""

    header: dict
    honest: list[PartyId]
    deliveries: dict[PartyId, list[dict]]
    broadcasts: list[dict] = field(default_factory=list)
    advances: list[dict] = field(default_factory=list)
    timers: list[dict] = field(default_factory=list)
    memory: list[dict] = field(default_factory=list)
    comm: list[dict] = field(default_factory=list)
    sends: list[dict] = field(default_factory=list)
    events: list[dict] = field(default_factory=list)
    stats: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.header["config"]["n"]

    @property
    def f(self) -> int:
        return self.header["config"]["f"]

    @property
    def delta(self) -> float:
        return self.header["config"]["delta"]

    @property
    def gst(self) -> float:
        return self.header["network"]["gst"]

    def to_jsonl(self) -> str:
        lines = [json.dumps({"type": "header", **self.header, "honest": self.honest}, sort_keys=True)]
        for party in sorted(self.deliveries):
            for rec in self.deliveries[party]:
                lines.append(json.dumps({"type": "deliver", "party": party, **rec}, sort_keys=True))
        for kind, records in (("broadcast", self.broadcasts), ("advance", self.advances),
                              ("timer", self.timers), ("memory", self.memory), ("comm", self.comm),
                              ("send", self.sends), ("event", self.events)):
            for rec in records:
                lines.append(json.dumps({"type": kind, **rec}, sort_keys=True))
        lines.append(json.dumps({"type": "stats", **self.stats}, sort_keys=True))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_jsonl(cls, text: str) -> "RunTrace":
        header, honest, deliveries, stats = None, [], {}, {}
        buckets = {k: [] for k in ("broadcast", "advance", "timer", "memory", "comm", "send", "event")}
        for line in text.splitlines():
            if not line.strip():
                continue
            rec = json.loads(line)
            kind = rec.pop("type")
            if kind == "header":
                honest = rec.pop("honest")
                header = rec
            elif kind == "deliver":
                deliveries.setdefault(rec.pop("party"), []).append(rec)
            elif kind == "stats":
                stats = rec
            else:
                buckets[kind].append(rec)
        if header is None:
            raise ValueError("trace has no header line")
        for p in range(header["config"]["n"]):
            deliveries.setdefault(p, [])
        return cls(header, honest, deliveries, buckets["broadcast"], buckets["advance"],
                   buckets["timer"], buckets["memory"], buckets["comm"], buckets["send"],
                   buckets["event"], stats)

    def delivery_log(self, party: PartyId) -> str:
        """One line per event: sequence_index round creator block_id committing_anchor."""
        return "".join(f"{d['seq']} {d['round']} {d['creator']} {d['id']} {d['anchor']}\n"
                       for d in self.deliveries.get(party, []))


_DELIVER, _TIMER = 0, 1


class Simulator:
    def __init__(self, config: Config, network: NetworkModel, plan: AdversaryPlan | None = None,
                 seed: int = 0, payload_fn=None, signer: str = "sim",
                 record_sends: bool = True, record_events: bool = False, track_copies: bool = True):
        plan = plan or AdversaryPlan()
        if plan.t > config.f:
            raise ValueError(f"{plan.t} corrupted parties exceed f={config.f}")
        if any(not 0 <= p < config.n for p in plan.corrupted):
            raise ValueError("corrupted party out of range")
        if network.delta != config.delta:
            raise ValueError("network delta must match protocol delta")
        self.config = config
        self.network = network
        self.plan = plan
        self.seed = seed
        self.record_sends = record_sends
        self.record_events = record_events
        self.track_copies = track_copies
        n = config.n
        self.signer: Signer = SimulatedSigner() if signer == "sim" else Ed25519Signer(n, seed)
        self.engines: list[Engine] = []
        for i in range(n):
            behavior = plan.corrupted.get(i)
            if behavior is not None and behavior.kind in ("silent-anchor", "equivocate"):
                self.engines.append(ByzantineEngine(i, config, self.signer, payload_fn, behavior=behavior))
            else:
                self.engines.append(Engine(i, config, self.signer, payload_fn))
        self.honest = plan.honest(n)
        self._honest_set = set(self.honest)
        self.delays = DelaySampler(network, np.random.default_rng(seed), n)
        self.pre_gst = PreGstScheduler(network, n, random.Random(seed * 7919 + plan.pre_gst_seed))
        self._queue: list = []
        self._seq = 0
        self._cancelled: set[tuple[PartyId, Round]] = set()
        self._timer_index: dict[tuple[PartyId, Round], int] = {}
        self._copies: set[tuple[PartyId, PartyId, bytes]] = set()
        self._comm: dict[tuple[PartyId, Round], list] = {}
        self.now = 0.0
        self.trace = RunTrace(
            header={"config": asdict(config), "network": asdict(network), "plan": plan.to_dict(),
                    "seed": seed, "signer": signer},
            honest=list(self.honest), deliveries={i: [] for i in range(n)})
        self.stats = {"events": 0, "messages": 0, "clamped": 0, "max_post_gst_delay": 0.0,
                      "post_gst_violations": 0, "duplicate_copies": 0, "copies_tracked": track_copies, "halted": False,
                      "halt_reason": "", "end_time": 0.0}

    # -- event queue ------------------------------------------------------

    def _push(self, t: float, kind: int, a, b, c=None):
        self._seq += 1
        heapq.heappush(self._queue, (t, self._seq, kind, a, b, c))

    def _delay(self, src: PartyId, dst: PartyId, send_time: float, slow: bool) -> float:
        if src == dst:
            return send_time
        net = self.network
        if send_time < net.gst:
            return self.pre_gst.assign(send_time, src, dst)
        d = net.delta if slow else self.delays.sample(src, dst)
        return send_time + d

    # -- output handling --------------------------------------------------

    def _handle(self, party: PartyId, out: EngineOutput, now: float):
        engine = self.engines[party]
        slow = False
        if party not in self._honest_set:
            out, slow = adversary_transform(party, out, self.plan, engine.r, self.config.n)
        trace = self.trace
        for b in out.broadcasts:
            trace.broadcasts.append({"party": party, "round": b.round, "id": b.id.hex(), "time": now,
                                     "payload": len(b.payload)})
        for a in out.advances:
            trace.advances.append({"party": party, "concluded": a.concluded, "new_round": a.new_round,
                                   "time": now, "timeout": a.via_timeout})
            view = engine.view
            low = min(view.blocks_by_round) if view.blocks_by_round else engine.r
            trace.memory.append({"party": party, "time": now, "round": engine.r,
                                 "retained_rounds": engine.r - low + 1, "retained_blocks": len(view)})
        log = trace.deliveries[party]
        for ev in out.delivers:
            b = ev.block
            log.append({"seq": ev.sequence_index, "round": b.round, "creator": b.creator, "id": b.id.hex(),
                        "anchor": ev.committing_anchor.hex(), "time": now, "at_round": ev.at_round})
        for op in out.timer_ops:
            key = (party, op.round)
            if op.action == "set":
                self._cancelled.discard(key)
                self._timer_index[key] = len(trace.timers)
                trace.timers.append({"party": party, "round": op.round, "set": now,
                                     "due": now + op.duration, "outcome": "pending"})
                self._push(now + op.duration, _TIMER, party, op.round)
            else:
                self._cancelled.add(key)
                idx = self._timer_index.get(key)
                if idx is not None and trace.timers[idx]["outcome"] == "pending":
                    trace.timers[idx]["outcome"] = "cleared"
        gst = self.network.gst
        for dst, msg in out.sends:
            deliver_at = self._delay(party, dst, now, slow)
            self._push(deliver_at, _DELIVER, dst, msg, party)
            self._account(party, dst, msg, now, deliver_at)
            if now >= gst and dst != party:
                d = deliver_at - now
                if d > self.stats["max_post_gst_delay"]:
                    self.stats["max_post_gst_delay"] = d
                if d > self.network.delta + 1e-9:
                    self.stats["post_gst_violations"] += 1
        if self.record_events:
            self._record_outputs(party, out, now)

    def _account(self, src: PartyId, dst: PartyId, msg: BlockMessage, send_time: float, deliver_at: float):
        self.stats["messages"] += 1
        key = (src, msg.round)
        row = self._comm.get(key)
        if row is None:
            row = self._comm[key] = [0, 0, 0, 0]
        row[0] += 1
        if dst != src:
            size = msg.size
            payload = msg.payload_size
            row[1] += size
            row[2] += payload
            row[3] += 1 + len(msg.history)
            if self.track_copies:
                copies = self._copies
                for b in (msg.block, *msg.history):
                    k = (src, dst, b.id)
                    if k in copies:
                        self.stats["duplicate_copies"] += 1
                    else:
                        copies.add(k)
            if self.record_sends:
                self.trace.sends.append({"src": src, "dst": dst, "round": msg.round, "sent": send_time,
                                         "delivered": deliver_at, "history": len(msg.history),
                                         "bytes": size, "payload": payload})

    def _record_outputs(self, party: PartyId, out: EngineOutput, now: float):
        ev = self.trace.events
        for dst, msg in out.sends:
            ev.append({"t": now, "party": party, "kind": "send", "to": dst, "block": msg.block.id.hex(),
                       "history": [h.id.hex() for h in msg.history]})
        for op in out.timer_ops:
            ev.append({"t": now, "party": party, "kind": f"timer-{op.action}", "round": op.round})
        for d in out.delivers:
            ev.append({"t": now, "party": party, "kind": "deliver", "block": d.block.id.hex()})

    # -- main loop --------------------------------------------------------

    def _min_honest(self, attr: str) -> int:
        if attr == "round":
            return min(self.engines[i].r for i in self.honest)
        return min(len(self.trace.deliveries[i]) for i in self.honest)

    def run(self, stop: StopCondition) -> RunTrace:
        # the trace only grows during a run; cyclic GC would rescan it over and over
        was_enabled = gc.isenabled()
        gc.disable()
        try:
            return self._run(stop)
        finally:
            if was_enabled:
                gc.enable()

    def _run(self, stop: StopCondition) -> RunTrace:
        for i, engine in enumerate(self.engines):
            if self.record_events:
                self.trace.events.append({"t": 0.0, "party": i, "kind": "init"})
            self._handle(i, engine.on_init(0.0), 0.0)
        queue = self._queue
        engines = self.engines
        record = self.record_events
        events = 0
        while True:
            if stop.at_round is not None and self._min_honest("round") >= stop.at_round:
                break
            if stop.at_commits is not None and self._min_honest("commits") >= stop.at_commits:
                break
            if not queue:
                self.stats["halted"] = True
                self.stats["halt_reason"] = "event queue empty before stop condition"
                break
            if events >= stop.max_events:
                self.stats["halted"] = True
                self.stats["halt_reason"] = "event budget exhausted"
                break
            t, _, kind, a, b, c = heapq.heappop(queue)
            if stop.at_time is not None and t > stop.at_time:
                break
            self.now = t
            events += 1
            engine = engines[a]
            if kind == _DELIVER:
                behavior = self.plan.corrupted.get(a)
                if behavior is not None and is_crashed(behavior, engine.r):
                    continue
                if record:
                    self.trace.events.append({"t": t, "party": a, "kind": "recv", "from": c,
                                              "block": b.block.id.hex(),
                                              "history": [h.id.hex() for h in b.history]})
                out = engine.on_receive(b, t)
            else:
                key = (a, b)
                if key in self._cancelled:
                    continue
                idx = self._timer_index.get(key)
                if idx is not None and self.trace.timers[idx]["outcome"] == "pending":
                    self.trace.timers[idx]["outcome"] = "fired"
                if record:
                    self.trace.events.append({"t": t, "party": a, "kind": "timeout", "round": b})
                out = engine.on_timeout(b, t)
            if out:
                self._handle(a, out, t)
        self.stats["events"] = events
        self.stats["end_time"] = self.now
        self.stats["clamped"] = self.delays.clamped
        self.stats["rejected"] = {str(i): dict(sorted(e.counters.items())) for i, e in enumerate(engines)}
        self.stats["final_rounds"] = [e.r for e in engines]
        self.trace.comm = [{"party": p, "round": r, "messages": v[0], "bytes": v[1], "payload": v[2],
                            "copies": v[3]} for (p, r), v in sorted(self._comm.items())]
        self.trace.stats = self.stats
        return self.trace


def run(config: Config, network: NetworkModel, plan: AdversaryPlan | None = None, seed: int = 0,
        stop: StopCondition | None = None, **kwargs) -> RunTrace:
    """Run one simulation to the stop condition and return its trace."""
    sim = Simulator(config, network, plan, seed, **kwargs)
    return sim.run(stop or StopCondition(at_round=20))
