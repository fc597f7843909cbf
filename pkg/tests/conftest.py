import re

import pytest

ACCEPTANCE: dict[int, list[tuple[str, bool | None, str]]] = {}
_BEFORE = pytest.StashKey[int]()
TITLES = {
    1: "honest-case latency",
    2: "Byzantine commit rate",
    3: "first commit-rule DAG",
    4: "recursive commit-rule DAG",
    5: "safety fuzz",
    6: "catch-up bound",
    7: "communication",
    8: "memory / GC",
    9: "determinism",
    10: "oracle equivalence",
}


@pytest.fixture
def record():
    def _record(criterion: int, case: str, passed: bool | None, detail: str = ""):
        # passed=None marks an informational line that does not affect the verdict
        ACCEPTANCE.setdefault(criterion, []).append((case, passed, detail))
        return passed
    return _record


def _recorded():
    return sum(len(v) for v in ACCEPTANCE.values())


def pytest_runtest_setup(item):
    item.stash[_BEFORE] = _recorded()


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    # a test that fails before recording still shows up as a FAIL line
    outcome = yield
    report = outcome.get_result()
    m = re.match(r"test_c(\d+)", item.name)
    if m and report.when == "call" and report.failed and _recorded() == item.stash.get(_BEFORE, -1):
        crit = int(m.group(1))
        ACCEPTANCE.setdefault(crit, []).append((item.name, False, f"raised before recording: {call.excinfo.typename}"))


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for crit in sorted(ACCEPTANCE):
        cases = ACCEPTANCE[crit]
        ok = all(p for _, p, _ in cases if p is not None)
        tr.write_line(f"criterion {crit:2d} {TITLES.get(crit, '')}: {'PASS' if ok else 'FAIL'}")
        for case, passed, detail in cases:
            tag = "info" if passed is None else "pass" if passed else "FAIL"
            tr.write_line(f"    [{tag}] {case}: {detail}")
