"""Property checkers. Each is a pure function of a RunTrace."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from itertools import combinations

from ..dag import rr
from ..simnet import RunTrace


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str = ""
    counterexample: dict | None = None

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class CheckReport:
    results: list[CheckResult] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.results)

    def __getitem__(self, name: str) -> CheckResult:
        for r in self.results:
            if r.name == name:
                return r
        raise KeyError(name)

    def to_dict(self) -> dict:
        return {r.name: r.to_dict() for r in self.results}


def validity_budget(trace: RunTrace) -> int:
    """Rounds a post-GST honest broadcast may stay undelivered at the end of a run.

    A round-b block may miss the strong references of round b+1 but is weakly
    referenced by round b+2, so it is in the past of every anchor from round
    b+2 on. Each Byzantine anchor at round a blocks the commits of rounds a-1
    and a, so at most 2t consecutive anchor rounds go uncommitted: the first
    committed anchor from b+2 on is at most b+2+2t, decided when round b+4+2t
    concludes, that is once the party is in round b+5+2t.
    """
    t = len(trace.header["plan"]["corrupted"])
    return 2 * t + 5


def _ids(trace: RunTrace, party: int) -> list[str]:
    return [d["id"] for d in trace.deliveries.get(party, [])]


def check_validity(trace: RunTrace) -> CheckResult:
    budget = validity_budget(trace)
    final = trace.stats.get("final_rounds", [])
    delivered = {p: set(_ids(trace, p)) for p in trace.honest}
    honest = set(trace.honest)
    checked = 0
    for b in trace.broadcasts:
        p = b["party"]
        if p not in honest or b["time"] < trace.gst or p >= len(final):
            continue
        if b["round"] + budget > final[p]:
            continue
        checked += 1
        if b["id"] not in delivered[p]:
            return CheckResult("validity", False, f"party {p} never delivered its round-{b['round']} block",
                               {"broadcast": b, "final_round": final[p], "budget": budget})
    return CheckResult("validity", True, f"{checked} post-GST broadcasts delivered within {budget} rounds")


def check_integrity(trace: RunTrace) -> CheckResult:
    broadcast_by = {}
    for b in trace.broadcasts:
        broadcast_by.setdefault(b["id"], set()).add(b["party"])
    honest = set(trace.honest)
    for p in trace.honest:
        seen, slots = {}, {}
        for i, d in enumerate(trace.deliveries.get(p, [])):
            if d["seq"] != i:
                return CheckResult("integrity", False, f"party {p} sequence gap at {i}", {"party": p, "entry": d})
            if d["id"] in seen:
                return CheckResult("integrity", False, f"party {p} delivered a block twice",
                                   {"party": p, "first": seen[d["id"]], "second": d})
            slot = (d["creator"], d["round"])
            if slot in slots:
                return CheckResult("integrity", False, f"party {p} delivered two blocks of slot {slot}",
                                   {"party": p, "first": slots[slot], "second": d})
            seen[d["id"]] = slots[slot] = d
            if d["creator"] in honest and d["creator"] not in broadcast_by.get(d["id"], ()):
                return CheckResult("integrity", False, "delivered block attributed to an honest party "
                                   "that never broadcast it", {"party": p, "entry": d})
    return CheckResult("integrity", True, "no duplicates, no forged honest blocks")


def check_total_order(trace: RunTrace) -> CheckResult:
    logs = {p: _ids(trace, p) for p in trace.honest}
    for p, q in combinations(trace.honest, 2):
        a, b = logs[p], logs[q]
        for i in range(min(len(a), len(b))):
            if a[i] != b[i]:
                return CheckResult("total_order", False, f"parties {p} and {q} diverge at position {i}",
                                   {"parties": [p, q], "index": i,
                                    "slices": {str(p): trace.deliveries[p][max(0, i - 1):i + 1],
                                               str(q): trace.deliveries[q][max(0, i - 1):i + 1]}})
    return CheckResult("total_order", True, "honest logs pairwise prefix-related")


def check_agreement(trace: RunTrace) -> CheckResult:
    """Prefix-consistent sets, and convergence: anything delivered by an honest party
    sufficiently before the slowest honest party's final round is delivered by all."""
    budget = validity_budget(trace)
    final = trace.stats.get("final_rounds", [])
    if not trace.honest or not final:
        return CheckResult("agreement", True, "no honest parties")
    horizon = min(final[p] for p in trace.honest) - budget
    logs = {p: trace.deliveries.get(p, []) for p in trace.honest}
    sets = {p: {d["id"] for d in log} for p, log in logs.items()}
    for p, q in combinations(trace.honest, 2):
        m = min(len(logs[p]), len(logs[q]))
        if {d["id"] for d in logs[p][:m]} != {d["id"] for d in logs[q][:m]}:
            return CheckResult("agreement", False, f"parties {p} and {q} disagree within common prefix",
                               {"parties": [p, q], "length": m})
    for p in trace.honest:
        for d in logs[p]:
            if d["at_round"] > horizon:
                break
            for q in trace.honest:
                if d["id"] not in sets[q]:
                    return CheckResult("agreement", False, f"party {q} missing block delivered by {p}",
                                       {"delivered_by": p, "missing_at": q, "entry": d, "horizon": horizon})
    return CheckResult("agreement", True, f"converged up to round {horizon}")


def check_atomic_broadcast(trace: RunTrace) -> CheckReport:
    return CheckReport([check_validity(trace), check_agreement(trace), check_integrity(trace),
                        check_total_order(trace)])


def check_post_gst_delay(trace: RunTrace) -> CheckResult:
    bad = trace.stats.get("post_gst_violations", 0)
    for s in trace.sends:
        if s["sent"] >= trace.gst and s["delivered"] - s["sent"] > trace.delta + 1e-9:
            return CheckResult("post_gst_delay", False, "message exceeded delta after GST", {"send": s})
    return CheckResult("post_gst_delay", bad == 0, f"{bad} post-GST deliveries slower than delta")


def check_no_timeouts(trace: RunTrace) -> CheckResult:
    for a in trace.advances:
        if a["party"] in trace.honest and a["timeout"]:
            return CheckResult("no_timeouts", False, "honest party advanced through the timeout branch",
                               {"advance": a})
    return CheckResult("no_timeouts", True, "every honest advance was responsive")


def check_rounds_to_commit(trace: RunTrace, expected: int = 3) -> CheckResult:
    """Every anchor delivered by an honest party is committed `expected` rounds after its own."""
    n = trace.n
    count = 0
    for p in trace.honest:
        for d in trace.deliveries[p]:
            if d["creator"] != rr(d["round"], n):
                continue
            count += 1
            rounds = d["at_round"] - d["round"] + 1
            if rounds != expected or d["id"] != d["anchor"]:
                return CheckResult("rounds_to_commit", False, f"anchor committed after {rounds} rounds",
                                   {"party": p, "entry": d})
    if count == 0:
        return CheckResult("rounds_to_commit", False, "no anchors committed")
    return CheckResult("rounds_to_commit", True, f"{count} anchor deliveries at exactly {expected} rounds")


def catch_up_spread(trace: RunTrace) -> dict[int, float]:
    """For each round fully broadcast by all honest parties after GST, the spread of their broadcast times."""
    times: dict[int, dict[int, float]] = {}
    honest = set(trace.honest)
    for b in trace.broadcasts:
        if b["party"] in honest:
            times.setdefault(b["round"], {}).setdefault(b["party"], b["time"])
    out = {}
    for r, by_party in sorted(times.items()):
        if len(by_party) == len(honest) and min(by_party.values()) >= trace.gst:
            out[r] = max(by_party.values()) - min(by_party.values())
    return out


def check_catch_up(trace: RunTrace, bound_factor: float = 3.0) -> CheckResult:
    spread = catch_up_spread(trace)
    bound = bound_factor * trace.delta
    for r, s in spread.items():
        if s > bound + 1e-9:
            return CheckResult("catch_up", False, f"round {r} broadcast spread {s:.1f} > {bound:.1f}",
                               {"round": r, "spread": s})
    worst = max(spread.values(), default=0.0)
    return CheckResult("catch_up", bool(spread), f"max spread {worst:.1f} over {len(spread)} rounds")


def check_messages_per_round(trace: RunTrace) -> CheckResult:
    n = trace.n
    honest = set(trace.honest)
    for row in trace.comm:
        if row["party"] in honest and row["messages"] != n:
            return CheckResult("messages_per_round", False, f"{row['messages']} messages in a round",
                               {"row": row})
    return CheckResult("messages_per_round", True, f"exactly {n} messages per party per round")


def check_no_duplicate_copies(trace: RunTrace) -> CheckResult:
    dup = trace.stats.get("duplicate_copies", 0)
    return CheckResult("no_duplicate_copies", dup == 0, f"{dup} repeated block copies")


def run_checks(trace: RunTrace, honest_run: bool | None = None) -> CheckReport:
    """Atomic broadcast properties plus the model checks; honest-run checks when no party is corrupted."""
    report = check_atomic_broadcast(trace)
    report.results.append(check_post_gst_delay(trace))
    if honest_run is None:
        honest_run = not trace.header["plan"]["corrupted"]
    if honest_run and trace.gst == 0:
        report.results.append(check_messages_per_round(trace))
        if trace.stats.get("copies_tracked"):
            report.results.append(check_no_duplicate_copies(trace))
    return report
