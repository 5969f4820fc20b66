import re

import pytest

from ghzbayes.prior import gaussian_prior

_CRITERION = re.compile(r"test_acceptance\.py::test_criterion_(\d+)")
_TITLES = {
    1: "metrological gain at N=21, delta_phi=0.7",
    2: "partition-table winners at N=21",
    3: "optimal-partition bound within 3% of OQI",
    4: "varying-block overhead 1.66",
    5: "proposed-scheme overhead and advantages",
    6: "fixed-block scheme: M, estimator ordering, overhead",
    7: "large-N plateaus",
    8: "noisy gains and decay-fit exponents",
    9: "unwinding identities and protocol ordering",
    10: "flat-prior overheads",
    11: "property suite",
}


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """One [PASS]/[FAIL] line per acceptance criterion."""
    results: dict[int, str] = {}
    for status, flag in (("passed", "PASS"), ("failed", "FAIL"),
                         ("error", "FAIL"), ("skipped", "SKIP")):
        for report in terminalreporter.stats.get(status, ()):
            match = _CRITERION.search(getattr(report, "nodeid", ""))
            if match:
                results[int(match.group(1))] = flag
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(results):
        title = _TITLES.get(num, "")
        terminalreporter.write_line(f"[{results[num]}] criterion {num}: {title}")


@pytest.fixture(scope="session")
def prior07():
    return gaussian_prior(0.7, max_frequency=16.0)
