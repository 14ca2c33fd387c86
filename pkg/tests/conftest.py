import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from chiplet_cosim.hardware import mesh_config  # noqa: E402

ROOT = Path(__file__).resolve().parents[1]
CONFIGS = ROOT / "configs"


@pytest.fixture
def mesh2x2():
    return mesh_config(2, 2)


@pytest.fixture
def mesh4x4():
    return mesh_config(4, 4)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for line in lines:
        terminalreporter.write_line(line)
