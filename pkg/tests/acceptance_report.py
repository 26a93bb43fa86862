"""Collects one pass/fail line per acceptance criterion for the terminal summary."""
REPORT = []


def record(number, title, passed, detail):
    line = f"[{'PASS' if passed else 'FAIL'}] criterion {number}: {title} -- {detail}"
    REPORT.append(line)
    print(line)
    return passed
