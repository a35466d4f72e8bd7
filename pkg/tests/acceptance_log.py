"""One line per acceptance criterion, echoed at the end of the pytest run."""

LINES: list[str] = []


def record(number, passed, detail: str) -> bool:
    status = "PASS" if passed is True else ("SKIP" if passed is None else "FAIL")
    line = f"criterion {number}: {status}  {detail}"
    LINES.append(line)
    print(line)
    return bool(passed)
