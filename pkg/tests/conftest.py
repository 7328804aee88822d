"""Prints one PASS/FAIL line per acceptance criterion at the end of the run."""

import re

ACCEPTANCE = re.compile(r"test_acceptance\.py::test_criterion_(\d+)_(\w+)")


def pytest_terminal_summary(terminalreporter):
    lines = {}
    for status in ("passed", "failed", "error"):
        for rep in terminalreporter.stats.get(status, []):
            m = ACCEPTANCE.search(getattr(rep, "nodeid", ""))
            if not m or (rep.when != "call" and status != "error"):
                continue
            detail = "; ".join(v for k, v in getattr(rep, "user_properties", []) if k == "detail")
            verdict = "PASS" if status == "passed" else "FAIL"
            lines[int(m.group(1))] = f"criterion {int(m.group(1)):2d} {m.group(2):<28} {verdict}  {detail}"
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(lines):
        terminalreporter.write_line(lines[k])
