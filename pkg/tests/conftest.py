import os
import sys

import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, os.path.dirname(__file__))

settings.register_profile(
    "default", deadline=None, suppress_health_check=[HealthCheck.too_slow], derandomize=True
)
settings.load_profile("default")

# criterion number -> list of (ok, detail)
_ACCEPTANCE: dict[int, list[tuple[bool, str]]] = {}


@pytest.fixture
def acceptance():
    """Record one check toward a numbered acceptance criterion."""

    def record(criterion: int, ok: bool, detail: str) -> bool:
        _ACCEPTANCE.setdefault(criterion, []).append((bool(ok), detail))
        print(f"criterion {criterion}: {'PASS' if ok else 'FAIL'}  {detail}")
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_ACCEPTANCE):
        checks = _ACCEPTANCE[n]
        ok = all(c for c, _ in checks)
        details = "; ".join(d for _, d in checks)
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {details}")
