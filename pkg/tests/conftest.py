import contextlib
import time

import pytest

_RESULTS = {}


@contextlib.contextmanager
def criterion(number, title):
    """Record the outcome of one acceptance criterion for the end-of-run summary."""
    t0 = time.monotonic()
    key = str(number)
    try:
        yield
    except pytest.skip.Exception as e:
        _RESULTS[key] = ("SKIP", title, time.monotonic() - t0, str(e))
        raise
    except BaseException as e:
        _RESULTS[key] = ("FAIL", title, time.monotonic() - t0, f"{type(e).__name__}: {e}".splitlines()[0][:160])
        raise
    else:
        _RESULTS[key] = ("PASS", title, time.monotonic() - t0, "")


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    order = sorted(_RESULTS, key=lambda k: (int("".join(ch for ch in k if ch.isdigit())), k))
    for key in order:
        status, title, secs, note = _RESULTS[key]
        line = f"criterion {key:<3} {status:<4}  {title}  ({secs:.1f} s)"
        tr.write_line(line + (f"  [{note}]" if note else ""))
