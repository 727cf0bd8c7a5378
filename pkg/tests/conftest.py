import sys
from pathlib import Path

import pytest

from cfpc import SimConfig, netgen

sys.path.insert(0, str(Path(__file__).parent))  # expose tests/helpers.py


@pytest.fixture(scope="session")
def cfg():
    """The paper-scale desk configuration."""
    return SimConfig()


@pytest.fixture(scope="session")
def snap42(cfg):
    return netgen.generate_snapshot(cfg, 42)
