import copy
import json
from pathlib import Path

import pytest

from dagbft.harness.checks import (check_agreement, check_atomic_broadcast, check_integrity, check_total_order,
                                   check_validity, run_checks)
from dagbft.harness.cli import main
from dagbft.harness.metrics import (commit_rate, linear_fit_r2, measure_communication, measure_latency,
                                    measure_memory)
from dagbft.harness.scenario import (CSV_HEADER, PayloadGenerator, ScenarioConfig, csv_rows, expand_sweep,
                                     run_scenario, simulate, sweep, write_csv)
from dagbft.simnet import RunTrace

GOLDEN = Path(__file__).parent / "golden"
SMALL = dict(name="small", n=4, delta=100.0, delay_dist="fixed", fixed_delay=20.0, rounds=12, seed=3,
             injection_rate=100.0)


@pytest.fixture(scope="module")
def honest_trace():
    return simulate(ScenarioConfig(**SMALL, record_sends=True))


def test_honest_run_passes_all_checks(honest_trace):
    report = run_checks(honest_trace)
    assert report.passed, report.to_dict()
    names = [r.name for r in report.results]
    assert names[:4] == ["validity", "agreement", "integrity", "total_order"]


def test_checkers_are_pure(honest_trace):
    stored = RunTrace.from_jsonl(honest_trace.to_jsonl())
    assert run_checks(stored).to_dict() == run_checks(honest_trace).to_dict()


def test_swapped_log_entries_break_total_order(honest_trace):
    bad = copy.deepcopy(honest_trace)
    log = bad.deliveries[1]
    log[3], log[4] = log[4], log[3]
    for i, d in enumerate(log):
        d["seq"] = i
    result = check_total_order(bad)
    assert not result.passed
    assert result.counterexample["index"] == 3


def test_duplicate_delivery_breaks_integrity(honest_trace):
    bad = copy.deepcopy(honest_trace)
    bad.deliveries[0].append(dict(bad.deliveries[0][2], seq=len(bad.deliveries[0])))
    assert not check_integrity(bad).passed


def test_forged_honest_block_breaks_integrity(honest_trace):
    bad = copy.deepcopy(honest_trace)
    bad.deliveries[2][1]["id"] = "ab" * 32
    assert not check_integrity(bad).passed


def test_missing_delivery_breaks_validity_and_agreement(honest_trace):
    bad = copy.deepcopy(honest_trace)
    victim = bad.deliveries[0]
    own = next(i for i, d in enumerate(victim) if d["creator"] == 0)
    del victim[own]
    for i, d in enumerate(victim):
        d["seq"] = i
    assert not check_validity(bad).passed
    assert not check_agreement(bad).passed
    assert not check_atomic_broadcast(bad).passed


def test_metrics_on_honest_run(honest_trace):
    lat = measure_latency(honest_trace)
    assert lat.rounds_mean == 3.0 and lat.rounds_sd == 0.0
    assert lat.time_mean > 0
    cr = commit_rate(honest_trace)
    assert cr.rate == 1.0 and cr.mean_gap == 1.0
    comm = measure_communication(honest_trace)
    assert comm.messages_min == comm.messages_max == 4
    assert comm.nonpayload_bytes_per_round > 0
    mem = measure_memory(honest_trace)
    assert mem.rounds_max >= 3
    assert mem.blocks_per_round_max <= 4


def test_memory_of_empty_run():
    trace = RunTrace({"config": {"n": 4}}, [0], {0: []})
    assert measure_memory(trace).series == []


def test_linear_fit():
    assert linear_fit_r2([3, 6, 9], [5, 8, 11]) == pytest.approx(1.0)
    assert linear_fit_r2([3, 6, 9], [5, 11, 5]) < 0.1


def test_payload_generator_rate():
    gen = PayloadGenerator(512, 1000.0)
    assert len(gen(0, 1, 0.0)) == 0
    assert len(gen(0, 2, 10.5)) == 10 * 512
    assert len(gen(0, 3, 11.0)) == 1 * 512  # carried fraction
    assert len(gen(1, 2, 2.0)) == 2 * 512


@pytest.mark.parametrize("bad", [dict(n=3), dict(n=4, f=2), dict(n=7, t=3), dict(n=4, t=1),
                                 dict(unknown_field=1), dict(placement="middle")])
def test_invalid_scenarios(bad):
    with pytest.raises((ValueError, TypeError)):
        ScenarioConfig.from_dict(bad)


def test_csv_matches_golden():
    report, _, _ = run_scenario(ScenarioConfig(**SMALL))
    text = write_csv(csv_rows(report))
    assert text.splitlines()[0] == ",".join(CSV_HEADER)
    assert text == (GOLDEN / "small.csv").read_text()


def test_sweep_row_counts():
    doc = {"base": dict(n=4, delay_dist="fixed", fixed_delay=10.0, rounds=6),
           "grid": {"seed": list(range(10)), "delta": [200, 400, 600, 800, 1000]}}
    reports, rows = sweep(doc)
    assert len(reports) == 50
    per_metric = {}
    for row in rows:
        per_metric[row[3]] = per_metric.get(row[3], 0) + 1
    assert set(per_metric.values()) == {50}


def test_sweep_tags_extra_grid_fields():
    items = expand_sweep({"base": {"n": 4}, "grid": {"gc_multiplier": [3, 6], "seed": [0]}})
    assert [tag for _, tag in items] == ["gc_multiplier=3", "gc_multiplier=6"]


def test_cli_run_check_replay(tmp_path, monkeypatch, capsys):
    scen = tmp_path / "s.json"
    scen.write_text(json.dumps(dict(SMALL, name="cli")))
    monkeypatch.setenv("DAGBFT_OUT", str(tmp_path / "out"))
    assert main(["run", str(scen), "--rounds", "10"]) == 0
    out = tmp_path / "out" / "cli"
    for name in ("report.json", "trace.jsonl", "results.csv", "delivery-0.log", "delivery-3.log"):
        assert (out / name).exists()
    report = json.loads((out / "report.json").read_text())
    assert report["passed"] and report["final_round"] >= 10
    fields = (out / "delivery-0.log").read_text().splitlines()[0].split()
    assert len(fields) == 5
    assert main(["check", str(out / "trace.jsonl")]) == 0
    assert main(["replay", str(out / "trace.jsonl")]) == 0
    assert "identical" in capsys.readouterr().out


def test_cli_detects_tampered_trace(tmp_path):
    assert main(["run", "--n", "4", "--rounds", "8", "--out", str(tmp_path)]) == 0
    path = tmp_path / "trace.jsonl"
    lines = path.read_text().splitlines()
    delivers = [i for i, l in enumerate(lines) if '"type": "deliver"' in l and '"party": 0' in l]
    a, b = (json.loads(lines[i]) for i in delivers[2:4])
    a["id"], b["id"] = b["id"], a["id"]
    lines[delivers[2]], lines[delivers[3]] = json.dumps(a, sort_keys=True), json.dumps(b, sort_keys=True)
    path.write_text("\n".join(lines) + "\n")
    assert main(["check", str(path)]) == 1
    assert main(["replay", str(path)]) == 1


def test_cli_usage_errors(tmp_path):
    assert main(["run", "--n", "3", "--out", str(tmp_path)]) == 2
    assert main(["run", str(tmp_path / "missing.json")]) == 2
    with pytest.raises(SystemExit):
        main(["run", "--n", "four"])


def test_cli_sweep(tmp_path):
    doc = tmp_path / "sw.json"
    doc.write_text(json.dumps({"base": dict(n=4, rounds=5, name="sw"), "grid": {"seed": [0, 1]}}))
    assert main(["sweep", str(doc), "--out", str(tmp_path / "o")]) == 0
    lines = (tmp_path / "o" / "results.csv").read_text().splitlines()
    assert lines[0] == "n,delta,seed,metric,value"
    assert len(lines) > 2
