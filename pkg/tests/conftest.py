import os
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

GOLDEN_DIR = Path(__file__).parent / "golden"
REPO_ROOT = Path(__file__).resolve().parents[1]
SCENARIO_DIR = REPO_ROOT / "scenarios"


@pytest.fixture
def golden():
    """Read a frozen hex vector from tests/golden."""

    def read(name: str) -> str:
        path = GOLDEN_DIR / name
        return path.read_text().strip()

    return read


@pytest.fixture
def scenario_dir() -> Path:
    return SCENARIO_DIR


def pytest_report_header(config):
    from qsmn import KERNEL_BACKEND

    return f"qsmn kernel backend: {KERNEL_BACKEND} (QSMN_PURE_PYTHON={os.environ.get('QSMN_PURE_PYTHON', '')})"


ACCEPTANCE_KEY = pytest.StashKey[list]()


@pytest.fixture
def verdict(request):
    """Record one acceptance line (printed in the terminal summary) and assert it."""
    lines = request.config.stash.setdefault(ACCEPTANCE_KEY, [])

    def record(criterion: int, ok: bool, detail: str) -> None:
        line = f"acceptance {criterion}: {'PASS' if ok else 'FAIL'} - {detail}"
        lines.append(line)
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(ACCEPTANCE_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
