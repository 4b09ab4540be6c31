"""Pytest configuration and shared fixtures"""
import sys
import tempfile
from pathlib import Path

import pytest

# Add src to path
sys.path.insert(0, str(Path(__file__).parent.parent))

from src.config import Settings  # noqa: E402
from tests.fixtures.sample_data import TestDataFactory  # noqa: E402

PROJECT_ROOT = Path(__file__).parent.parent


@pytest.fixture
def temp_dir():
    """Create temporary directory for test files"""
    with tempfile.TemporaryDirectory() as tmpdir:
        yield Path(tmpdir)


@pytest.fixture(autouse=True)
def fresh_settings():
    """Drop the cached settings so environment changes made by a test are seen"""
    Settings.load.__func__.cache_clear()
    yield
    Settings.load.__func__.cache_clear()


@pytest.fixture
def smooth_noise():
    """Three-mode forcing on a coarse grid over [-1, 0]"""
    return TestDataFactory.create_noise(n_space=32, t_start=-1.0, dt=1e-3, seed=7)


@pytest.fixture
def quiet_noise():
    """Vanishing forcing: every solution is deterministic"""
    return TestDataFactory.create_zero_noise(n_space=32, t_start=-1.0, dt=1e-3)


@pytest.fixture
def template_path():
    return PROJECT_ROOT / "resources" / "report_template.md"
