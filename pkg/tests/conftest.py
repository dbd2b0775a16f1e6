import re

_CRITERION = re.compile(r"test_criterion_(\d+)_(\w+)")


def pytest_terminal_summary(terminalreporter):
    """One pass/fail line per acceptance criterion."""
    lines = {}
    for outcome in ("passed", "failed", "error"):
        for rep in terminalreporter.stats.get(outcome, []):
            if getattr(rep, "when", "call") != "call" and outcome != "error":
                continue
            m = _CRITERION.search(rep.nodeid)
            if m:
                verdict = "PASS" if outcome == "passed" else "FAIL"
                lines[int(m.group(1))] = (m.group(2).replace("_", " "), verdict, rep.duration)
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(lines):
        title, verdict, dur = lines[k]
        terminalreporter.write_line(f"criterion {k:2d} {verdict}  {title} ({dur:.2f} s)")
