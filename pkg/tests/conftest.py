from importlib.resources import files
from pathlib import Path

import pytest

DATA = Path(str(files("potfield") / "data"))

_ACCEPTANCE: list[str] = []


@pytest.fixture(scope="session")
def data_dir() -> Path:
    return DATA


@pytest.fixture
def report():
    """Collects one PASS/FAIL line per acceptance criterion; printed at the end
    of the run so it shows up even with output capture on."""

    def add(label: str, ok: bool, detail: str) -> None:
        line = f"{label}: {'PASS' if ok else 'FAIL'} | {detail}"
        _ACCEPTANCE.append(line)
        print(line)

    return add


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE, key=lambda s: int(s.split(":")[0][2:])):
            terminalreporter.write_line(line)
