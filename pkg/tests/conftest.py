import os

import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("ci", parent=settings.get_profile("default"), max_examples=200)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

_ACCEPTANCE: dict = {}


class AcceptanceLog:
    """Collects one verdict line per acceptance criterion."""

    def __init__(self, store: dict, capsys):
        self.store = store
        self.capsys = capsys

    def __call__(self, criterion: str, ok: bool, detail: str) -> bool:
        line = f"{criterion}: {'PASS' if ok else 'FAIL'}  {detail}"
        self.store[criterion] = line
        with self.capsys.disabled():
            print("\n" + line)
        return ok


@pytest.fixture
def acceptance(capsys):
    return AcceptanceLog(_ACCEPTANCE, capsys)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    key = lambda c: int(c[1:].split()[0].split("(")[0])  # noqa: E731
    for criterion in sorted(_ACCEPTANCE, key=key):
        terminalreporter.write_line(_ACCEPTANCE[criterion])
