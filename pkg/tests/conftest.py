import functools
import time

import pytest

# criterion id -> (passed, seconds, detail)
ACCEPTANCE: dict[str, tuple[bool, float, str]] = {}


def criterion(cid: str, budget_s: float):
    """Record a PASS/FAIL line for ``cid``; exceeding ``budget_s`` is a failure."""

    def wrap(fn):
        @functools.wraps(fn)
        def run(*args, **kwargs):
            t0 = time.perf_counter()
            detail, ok = "", False
            try:
                detail = fn(*args, **kwargs) or ""
                ok = True
            except AssertionError as exc:
                detail = str(exc).splitlines()[0] if str(exc) else "assertion failed"
                raise
            finally:
                dt = time.perf_counter() - t0
                if ok and dt > budget_s:
                    ok = False
                    detail += f" (over budget: {dt:.1f}s > {budget_s:.0f}s)"
                ACCEPTANCE[cid] = (ok, dt, detail)
                print(f"{cid} {'PASS' if ok else 'FAIL'} [{dt:.1f}s] {detail}")
            if not ok:
                pytest.fail(f"{cid} over its runtime budget: {detail}")

        return run

    return wrap


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for cid in sorted(ACCEPTANCE, key=lambda c: int(c[1:])):
        ok, dt, detail = ACCEPTANCE[cid]
        terminalreporter.write_line(f"{cid} {'PASS' if ok else 'FAIL'} [{dt:.1f}s] {detail}")
