import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from mgrl.autodiff import backend


@pytest.fixture(params=backend.available())
def backend_name(request):
    """Run the engine-level tests once per available kernel backend."""
    return request.param


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "REPORT", None) if mod else None
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
