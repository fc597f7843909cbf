"""Scenario configuration, execution, reports and CSV output."""

from __future__ import annotations

import csv
import hashlib
import io
import itertools
import json
import os
import random
import struct
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from ..simnet import AdversaryPlan, Behavior, NetworkModel, RunTrace, Simulator, StopCondition
from ..types import Config
from .checks import CheckReport, run_checks
from .metrics import commit_rate, measure_communication, measure_latency, measure_memory, throughput

CSV_HEADER = ("n", "delta", "seed", "metric", "value")
OUT_ENV = "DAGBFT_OUT"


@dataclass
class ScenarioConfig:
    name: str = "scenario"
    n: int = 4
    f: int | None = None  # default: largest f with 3f+1 <= n
    t: int | None = 0  # None: t = f
    delta: float = 100.0
    gst: float = 0.0
    delay_dist: str = "poisson"
    fixed_delay: float | None = None
    pre_gst_policy: str = "adversary"
    gc_multiplier: float = 3.0
    timeout_multiplier: float = 2.0
    adversary: str = "none"
    placement: str = "last"  # which parties are corrupted: last, first or spread
    adversary_at_round: int = 1
    adversary_rounds: list[int] | None = None
    adversary_subset: list[int] = field(default_factory=list)
    plan: dict | None = None  # explicit AdversaryPlan dict, overrides the fields above
    rounds: int | None = None
    duration: float | None = None
    seed: int = 0
    tx_size: int = 512
    injection_rate: float = 0.0  # transactions per second per party
    signer: str = "sim"
    record_sends: bool = False
    record_events: bool = False
    track_copies: bool = True

    def __post_init__(self):
        if self.f is None:
            self.f = (self.n - 1) // 3
        if self.t is None:
            self.t = self.f
        if self.n < 4 or 3 * self.f + 1 > self.n:
            raise ValueError(f"need n >= 4 and 3f+1 <= n (n={self.n}, f={self.f})")
        if not 0 <= self.t <= self.f:
            raise ValueError(f"t={self.t} must be between 0 and f={self.f}")
        if self.t and self.adversary == "none" and self.plan is None:
            raise ValueError("t > 0 needs an adversary behavior")
        if self.placement not in ("last", "first", "spread"):
            raise ValueError(f"unknown placement {self.placement!r}")
        if self.signer not in ("sim", "ed25519"):
            raise ValueError(f"unknown signer {self.signer!r}")
        if self.tx_size < 0 or self.injection_rate < 0:
            raise ValueError("tx_size and injection_rate must be non-negative")
        self.network  # validates delay settings

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown scenario fields: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)

    @property
    def config(self) -> Config:
        return Config(self.n, self.f, self.delta, self.gc_multiplier, self.timeout_multiplier)

    @property
    def network(self) -> NetworkModel:
        return NetworkModel(self.delta, self.gst, self.delay_dist, self.fixed_delay, self.pre_gst_policy)

    def corrupted_parties(self) -> list[int]:
        n, t = self.n, self.t
        if self.placement == "first":
            return list(range(t))
        if self.placement == "spread":
            return sorted({(i * n) // t for i in range(t)}) if t else []
        return list(range(n - t, n))

    def adversary_plan(self) -> AdversaryPlan:
        if self.plan is not None:
            return AdversaryPlan.from_dict(self.plan)
        if self.t == 0:
            return AdversaryPlan()
        rounds = None if self.adversary_rounds is None else frozenset(self.adversary_rounds)
        beh = Behavior(self.adversary, self.adversary_at_round, rounds, tuple(self.adversary_subset))
        return AdversaryPlan({p: beh for p in self.corrupted_parties()}, self.seed)

    def stop(self) -> StopCondition:
        if self.rounds is None and self.duration is None:
            return StopCondition(at_round=50)
        return StopCondition(at_time=self.duration, at_round=self.rounds)


def load_scenario(path: str | os.PathLike) -> dict:
    with open(path) as fh:
        return json.load(fh)


class PayloadGenerator:
    """Transactions injected at a constant rate; a block carries those injected
    since its creator's previous block. Each transaction is tx_size bytes with
    a (party, round, index) header."""

    _TX = struct.Struct(">IQI")

    def __init__(self, tx_size: int, rate: float):
        self.tx_size = tx_size
        self.rate = rate
        self._last: dict[int, float] = {}
        self._carry: dict[int, float] = {}

    def __call__(self, party: int, rnd: int, now: float) -> bytes:
        if self.rate <= 0 or self.tx_size <= 0:
            return b""
        due = (now - self._last.get(party, 0.0)) * self.rate / 1000.0 + self._carry.get(party, 0.0)
        count = int(due)
        self._carry[party] = due - count
        self._last[party] = now
        pad = b"\x00" * max(0, self.tx_size - self._TX.size)
        return b"".join((self._TX.pack(party, rnd, i) + pad)[:self.tx_size] for i in range(count))


@dataclass
class RunReport:
    scenario: str
    n: int
    delta: float
    seed: int
    throughput: float
    latency_time_mean: float
    latency_time_sd: float
    latency_rounds_mean: float
    latency_rounds_sd: float
    commit_rate: float
    anchor_rate: float
    mean_commit_gap: float
    rounds_retained_max: int
    rounds_retained_mean: float
    blocks_retained_max: int
    messages_per_party_per_round: float
    bytes_sent_per_party_per_round: float
    nonpayload_bytes_per_party_per_round: float
    block_copies_per_peer: float
    duplicate_copies: int
    timeouts: int
    clamped_delays: int
    final_round: int
    invariant_results: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(v["passed"] for v in self.invariant_results.values())

    def to_dict(self) -> dict:
        d = asdict(self)
        d["passed"] = self.passed
        return d

    def metrics(self) -> dict[str, float]:
        skip = {"scenario", "n", "delta", "seed", "invariant_results"}
        out = {k: v for k, v in asdict(self).items() if k not in skip}
        out["invariants_pass"] = int(self.passed)
        return out


def build_report(sc: ScenarioConfig, trace: RunTrace, checks: CheckReport | None = None) -> RunReport:
    checks = checks if checks is not None else run_checks(trace)
    lat = measure_latency(trace, sc.tx_size)
    cr = commit_rate(trace)
    mem = measure_memory(trace)
    comm = measure_communication(trace)
    honest = set(trace.honest)
    timeouts = sum(1 for a in trace.advances if a["party"] in honest and a["timeout"])
    final = min(trace.stats["final_rounds"][p] for p in trace.honest)
    return RunReport(
        scenario=sc.name, n=sc.n, delta=sc.delta, seed=sc.seed,
        throughput=throughput(trace, sc.tx_size),
        latency_time_mean=lat.time_mean, latency_time_sd=lat.time_sd,
        latency_rounds_mean=lat.rounds_mean, latency_rounds_sd=lat.rounds_sd,
        commit_rate=cr.rate, anchor_rate=cr.anchor_rate, mean_commit_gap=cr.mean_gap,
        rounds_retained_max=mem.rounds_max, rounds_retained_mean=mem.rounds_mean,
        blocks_retained_max=mem.blocks_max,
        messages_per_party_per_round=comm.messages_per_round,
        bytes_sent_per_party_per_round=comm.bytes_per_round,
        nonpayload_bytes_per_party_per_round=comm.nonpayload_bytes_per_round,
        block_copies_per_peer=comm.copies_per_round / max(1, sc.n - 1),
        duplicate_copies=comm.duplicate_copies, timeouts=timeouts,
        clamped_delays=trace.stats.get("clamped", 0), final_round=final,
        invariant_results={k: {"passed": v["passed"], "detail": v["detail"]}
                           for k, v in checks.to_dict().items()},
    )


def simulate(sc: ScenarioConfig) -> RunTrace:
    sim = Simulator(sc.config, sc.network, sc.adversary_plan(), sc.seed,
                    payload_fn=PayloadGenerator(sc.tx_size, sc.injection_rate), signer=sc.signer,
                    record_sends=sc.record_sends, record_events=sc.record_events,
                    track_copies=sc.track_copies)
    sim.trace.header["scenario"] = sc.to_dict()
    return sim.run(sc.stop())


def csv_rows(report: RunReport, tag: str = "") -> list[tuple]:
    rows = []
    for metric, value in report.metrics().items():
        name = f"{metric}@{tag}" if tag else metric
        rows.append((report.n, _fmt(report.delta), report.seed, name, _fmt(value)))
    return rows


def _fmt(v) -> str:
    if isinstance(v, bool):
        return str(int(v))
    if isinstance(v, int):
        return str(v)
    return repr(round(float(v), 6))


def write_csv(rows: list[tuple], path: str | os.PathLike | None = None) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    w.writerows(rows)
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text)
    return text


def trace_digest(trace: RunTrace) -> str:
    return hashlib.sha256(trace.to_jsonl().encode()).hexdigest()


def write_artifacts(out_dir: str | os.PathLike, trace: RunTrace, report: RunReport, rows: list[tuple],
                    checks: CheckReport) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    text = trace.to_jsonl()
    (out / "trace.jsonl").write_text(text)
    for p in range(trace.n):
        (out / f"delivery-{p}.log").write_text(trace.delivery_log(p))
    doc = report.to_dict()
    doc["trace_sha256"] = hashlib.sha256(text.encode()).hexdigest()
    doc["counterexamples"] = {r.name: r.counterexample for r in checks.results if not r.passed}
    (out / "report.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    write_csv(rows, out / "results.csv")
    return out


def run_scenario(sc: ScenarioConfig | dict, out_dir: str | os.PathLike | None = None):
    """Simulate, check and measure one scenario; optionally write artifacts.

    Returns (report, trace, checks).
    """
    if isinstance(sc, dict):
        sc = ScenarioConfig.from_dict(sc)
    trace = simulate(sc)
    checks = run_checks(trace)
    report = build_report(sc, trace, checks)
    if out_dir is not None:
        write_artifacts(out_dir, trace, report, csv_rows(report), checks)
    return report, trace, checks


def expand_sweep(doc: dict) -> list[tuple[ScenarioConfig, str]]:
    """A sweep document is {"base": {...}, "grid": {field: [values, ...]}}.

    Grid fields other than n, delta and seed are folded into the metric tag.
    """
    base = doc.get("base", {})
    grid = doc.get("grid", {})
    keys = sorted(grid)
    out = []
    for values in itertools.product(*(grid[k] for k in keys)):
        combo = dict(zip(keys, values))
        sc = ScenarioConfig.from_dict({**base, **combo})
        tag = ",".join(f"{k}={combo[k]}" for k in keys if k not in ("n", "delta", "seed"))
        out.append((sc, tag))
    return out


def fuzz_scenarios(doc: dict) -> list[ScenarioConfig]:
    """Seeded random adversarial scenarios from {"base": {...}, "fuzz": {...}}.

    Each run picks n, a corrupted set of size 1..f with a behavior per party,
    and a GST of up to `max_gst_rounds` deltas; it runs `post_gst_rounds`
    timeout periods past GST.
    """
    base = doc.get("base", {})
    fz = doc["fuzz"]
    delta = base.get("delta", 100.0)
    out = []
    for i in range(fz["runs"]):
        rng = random.Random(fz.get("seed", 0) * 1_000_003 + i)
        n = rng.choice(fz["n"])
        f = (n - 1) // 3
        t = rng.randint(1, f)
        corrupted = {}
        for p in rng.sample(range(n), t):
            kind = rng.choice(fz["behaviors"])
            others = [j for j in range(n) if j != p]
            corrupted[str(p)] = {"kind": kind, "at_round": rng.randint(1, 30), "rounds": None,
                                 "subset": sorted(rng.sample(others, rng.randint(1, n - 2)))}
        gst = round(rng.uniform(0, fz["max_gst_rounds"]) * delta, 3)
        duration = gst + fz["post_gst_rounds"] * 2 * delta
        out.append(ScenarioConfig.from_dict({
            **base, "name": f"{base.get('name', 'fuzz')}-{i}", "n": n, "f": f, "t": t, "seed": i, "gst": gst,
            "duration": duration, "plan": {"corrupted": corrupted, "pre_gst_seed": i}}))
    return out


def _sweep_one(item):
    sc, tag = item
    trace = simulate(sc)
    report = build_report(sc, trace)
    return report, tag


def sweep(doc: dict, out_dir: str | os.PathLike | None = None, workers: int = 1):
    """Run every grid point (optionally in parallel) and collect one CSV."""
    items = expand_sweep(doc)
    if workers > 1:
        with ProcessPoolExecutor(workers) as ex:
            results = list(ex.map(_sweep_one, items))
    else:
        results = [_sweep_one(it) for it in items]
    rows = [row for report, tag in results for row in csv_rows(report, tag)]
    text = write_csv(rows)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "results.csv").write_text(text)
        (out / "report.json").write_text(json.dumps(
            [dict(report.to_dict(), tag=tag) for report, tag in results], indent=2, sort_keys=True) + "\n")
    return [r for r, _ in results], rows
