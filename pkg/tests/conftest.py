"""Shared pytest hooks: the acceptance suite reports one line per criterion."""

import contextlib

_CRITERIA = {}


@contextlib.contextmanager
def criterion(number: int, title: str):
    """Record PASS/FAIL for an acceptance criterion around a block of checks."""
    key = (number, title)
    _CRITERIA.setdefault(key, [])
    try:
        yield
    except BaseException as exc:
        _CRITERIA[key].append(f"{type(exc).__name__}: {str(exc).splitlines()[0] if str(exc) else ''}")
        raise
    else:
        _CRITERIA[key].append(None)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for (number, title), outcomes in sorted(_CRITERIA.items()):
        failures = [o for o in outcomes if o is not None]
        status = "FAIL" if failures or not outcomes else "PASS"
        line = f"criterion {number:2d} {status}  {title}"
        if failures:
            line += f"  ({failures[0]})"
        terminalreporter.write_line(line)
