import os
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

ROOT = Path(__file__).resolve().parents[1]
DATA = ROOT / "data"

settings.register_profile("ci", max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("ci")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def mutag_dir():
    root = Path(os.environ.get("AUGCL_DATA_DIR", DATA))
    path = root / "MUTAG"
    if not (path / "MUTAG_A.txt").is_file():
        pytest.skip("MUTAG not available; see README for how to fetch it")
    return path


@pytest.fixture(autouse=True)
def _data_env(monkeypatch):
    if "AUGCL_DATA_DIR" not in os.environ:
        monkeypatch.setenv("AUGCL_DATA_DIR", str(DATA))


def pytest_terminal_summary(terminalreporter):
    import sys

    lines = []
    for name, mod in list(sys.modules.items()):
        if name.endswith("test_acceptance"):
            lines.extend(getattr(mod, "RESULTS", []))
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(set(lines)):
            terminalreporter.write_line(line)
