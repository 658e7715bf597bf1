"""Shared store for acceptance lines, printed in the terminal summary."""

LINES = {}


def record(number, name, passed, detail, elapsed, limit):
    ok = passed and elapsed <= limit
    line = f"criterion {number:2d} {'PASS' if ok else 'FAIL'}  {name}: {detail}  [{elapsed:.1f}s, limit {limit:.0f}s]"
    LINES[number] = line
    print(line)
    return ok
