"""Metrics computed from a RunTrace."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..dag import rr
from ..simnet import RunTrace


def _mean_sd(xs) -> tuple[float, float]:
    if len(xs) == 0:
        return float("nan"), float("nan")
    a = np.asarray(xs, dtype=float)
    return float(a.mean()), float(a.std())


@dataclass
class Latency:
    rounds_mean: float
    rounds_sd: float
    time_mean: float
    time_sd: float
    anchors: int
    samples: int

    @property
    def live(self) -> bool:
        return self.anchors > 0


def rounds_to_commit(trace: RunTrace, party: int | None = None) -> list[int]:
    """Per delivered anchor: concluding round minus anchor round, plus one.

    An anchor of round r-2 committed while concluding round r spans three
    round steps (its own round and the two that support it).
    """
    n = trace.n
    parties = trace.honest if party is None else [party]
    return [d["at_round"] - d["round"] + 1 for p in parties for d in trace.deliveries[p]
            if d["creator"] == rr(d["round"], n)]


def measure_latency(trace: RunTrace, tx_size: int = 512) -> Latency:
    """Rounds-to-commit per anchor and delivery time per transaction.

    Time latency is measured from the creator's broadcast of the block holding
    the transaction to its delivery, weighted by the number of transactions
    (blocks without payload count once).
    """
    rounds = rounds_to_commit(trace)
    created = {}
    tx_count = {}
    for b in trace.broadcasts:
        created.setdefault(b["id"], b["time"])
        tx_count.setdefault(b["id"], b["payload"] // tx_size if tx_size else 0)
    weights, values = [], []
    any_tx = any(tx_count.values())
    for p in trace.honest:
        for d in trace.deliveries[p]:
            t0 = created.get(d["id"])
            if t0 is None:
                continue
            w = tx_count.get(d["id"], 0) if any_tx else 1
            if w:
                weights.append(w)
                values.append(d["time"] - t0)
    r_mean, r_sd = _mean_sd(rounds)
    if values:
        v = np.asarray(values)
        w = np.asarray(weights, dtype=float)
        t_mean = float(np.average(v, weights=w))
        t_sd = float(np.sqrt(np.average((v - t_mean) ** 2, weights=w)))
    else:
        t_mean = t_sd = float("nan")
    return Latency(r_mean, r_sd, t_mean, t_sd, len(rounds), int(sum(weights)))


@dataclass
class CommitRate:
    rounds: int
    direct_commits: int
    anchors_delivered: int
    mean_gap: float

    @property
    def rate(self) -> float:
        return self.direct_commits / self.rounds if self.rounds else float("nan")

    @property
    def anchor_rate(self) -> float:
        return self.anchors_delivered / self.rounds if self.rounds else float("nan")


def commit_rate(trace: RunTrace, party: int | None = None, skip: int = 0) -> CommitRate:
    """Direct anchor commits per round at one honest party.

    A direct commit is an anchor committed by the commit rule in its own
    right (not reached by the recursion from a later anchor). Rounds are the
    anchor rounds 1..R-3 that could have been decided by the party, whose
    last concluded round is R-1; the first `skip` rounds are excluded.
    """
    n = trace.n
    p = trace.honest[0] if party is None else party
    final = trace.stats["final_rounds"][p]
    last = final - 3
    direct = sorted({d["round"] for d in trace.deliveries[p]
                     if d["id"] == d["anchor"] and skip < d["round"] <= last})
    anchors = {d["round"] for d in trace.deliveries[p]
               if d["creator"] == rr(d["round"], n) and skip < d["round"] <= last}
    gaps = np.diff(direct)
    gap = float(gaps.mean()) if len(gaps) else float("nan")
    return CommitRate(max(0, last - skip), len(direct), len(anchors), gap)


@dataclass
class MemoryStats:
    series: list[tuple[int, int, int]]
    rounds_max: int
    rounds_mean: float
    blocks_max: int
    blocks_per_round_max: float


def measure_memory(trace: RunTrace, party: int | None = None, skip_time: float = 0.0) -> MemoryStats:
    """(round, retained rounds, retained blocks) after each round advance."""
    parties = set(trace.honest if party is None else [party])
    series = [(m["round"], m["retained_rounds"], m["retained_blocks"]) for m in trace.memory
              if m["party"] in parties and m["time"] >= skip_time]
    if not series:
        return MemoryStats([], 0, float("nan"), 0, float("nan"))
    rr_ = [s[1] for s in series]
    return MemoryStats(series, max(rr_), float(np.mean(rr_)), max(s[2] for s in series),
                       max(s[2] / s[1] for s in series))


@dataclass
class Communication:
    messages_per_round: float
    messages_min: int
    messages_max: int
    bytes_per_round: float
    nonpayload_bytes_per_round: float
    payload_bytes_per_round: float
    copies_per_round: float
    duplicate_copies: int


def measure_communication(trace: RunTrace, skip_rounds: int = 0) -> Communication:
    """Per honest party per round averages; self-addressed messages carry no bytes."""
    honest = set(trace.honest)
    last = {}
    for row in trace.comm:
        if row["party"] in honest:
            last[row["party"]] = max(last.get(row["party"], 0), row["round"])
    rows = [row for row in trace.comm if row["party"] in honest and skip_rounds < row["round"]
            and row["round"] < last[row["party"]]]
    if not rows:
        nan = float("nan")
        return Communication(nan, 0, 0, nan, nan, nan, nan, trace.stats.get("duplicate_copies", 0))
    msgs = [r["messages"] for r in rows]
    total = np.array([r["bytes"] for r in rows], dtype=float)
    payload = np.array([r["payload"] for r in rows], dtype=float)
    return Communication(float(np.mean(msgs)), min(msgs), max(msgs), float(total.mean()),
                         float((total - payload).mean()), float(payload.mean()),
                         float(np.mean([r["copies"] for r in rows])), trace.stats.get("duplicate_copies", 0))


def throughput(trace: RunTrace, tx_size: int = 512) -> float:
    """Transactions delivered per second, averaged over honest parties."""
    sizes = {b["id"]: b["payload"] for b in trace.broadcasts}
    duration = trace.stats.get("end_time", 0.0) / 1000.0
    if duration <= 0 or not trace.honest or tx_size <= 0:
        return 0.0
    per_party = [sum(sizes.get(d["id"], 0) for d in trace.deliveries[p]) // tx_size for p in trace.honest]
    return float(np.mean(per_party)) / duration


def linear_fit_r2(x, y) -> float:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss_tot = float(((y - y.mean()) ** 2).sum())
    return 1.0 if ss_tot == 0 else 1.0 - float((resid ** 2).sum()) / ss_tot
