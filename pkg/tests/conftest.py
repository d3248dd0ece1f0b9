"""Per-criterion PASS/FAIL summary for the acceptance suite."""

import pytest

CRITERIA = {
    1: "mission protocol fidelity (good_mission N=1,2,3,100)",
    2: "stale-buffer premature ACK dropped (all N<=3, k<N)",
    3: "sequential requests: exhaustive traces <= 8 vs hand-coded oracle",
    4: "pitch-rate guard boundary and fail-closed shadow",
    5: "parachute guard conjunct coverage",
    6: "wire interop: CRC, crc_extra, payload fuzz, bit flips",
    7: "common dialect scale and stable emit",
    8: "deterministic replay",
    9: "decision latency bound and bench report shape",
    10: "live UDP relay matches offline replay",
}

_criterion_of: dict[str, int] = {}
_outcomes: dict[int, list[bool]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion checked by the test")


def pytest_collection_modifyitems(items):
    for item in items:
        mark = item.get_closest_marker("criterion")
        if mark is not None:
            _criterion_of[item.nodeid] = mark.args[0]


@pytest.hookimpl(tryfirst=True)
def pytest_runtest_logreport(report):
    n = _criterion_of.get(report.nodeid)
    if n is None:
        return
    if report.when == "call" or report.failed or report.skipped:
        _outcomes.setdefault(n, []).append(report.passed)


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(CRITERIA):
        if n not in _outcomes:
            continue
        ok = all(_outcomes[n])
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} criterion {n}: {CRITERIA[n]}")
