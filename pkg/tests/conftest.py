from __future__ import annotations

import sys

from hypothesis import HealthCheck, settings

# one slow core: keep example counts modest and drop per-example deadlines
settings.register_profile("desk", max_examples=40, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("desk")


def pytest_terminal_summary(terminalreporter):
    lines = []
    for name, module in list(sys.modules.items()):
        if name.endswith("test_acceptance"):
            lines = getattr(module, "RESULTS", [])
    reported = {ln.split(" (")[0].split("criterion ")[1] for ln in lines}
    for rep in terminalreporter.stats.get("failed", []) + terminalreporter.stats.get("error", []):
        test = rep.nodeid.rsplit("::", 1)[-1]
        if test.startswith("test_criterion_"):
            number = test.split("_")[2]
            if number not in reported:
                lines.append(f"FAIL criterion {number}: {test} raised before reporting")
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split("criterion ")[1].split()[0].rstrip(":"))):
            terminalreporter.write_line(line)
