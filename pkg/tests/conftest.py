"""Shared pytest setup: repo root on sys.path, the slow marker and an rng."""

import sys
from pathlib import Path

import pytest

# Add parent directory to path for imports
sys.path.insert(0, str(Path(__file__).parent.parent))

from ddcascade.datagen import make_rng


def pytest_addoption(parser):
    parser.addoption('--runslow', action='store_true', default=False,
                     help='run the full-size accuracy studies')


def pytest_configure(config):
    config.addinivalue_line('markers', 'slow: full-size run, needs --runslow')


def pytest_collection_modifyitems(config, items):
    if config.getoption('--runslow'):
        return
    skip_slow = pytest.mark.skip(reason='needs --runslow')
    for item in items:
        if 'slow' in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def rng():
    return make_rng(12345)


@pytest.fixture(autouse=True)
def no_fault_injection(monkeypatch):
    monkeypatch.delenv('DDCASCADE_FAULT_BIN_ALIGN', raising=False)
