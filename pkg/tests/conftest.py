from pathlib import Path

import numpy as np
import pytest

from src.core.fgmu import frontal_landmarks
from src.core.params import SynthConfig
from src.core.synthgen import base_texture, generate_sample

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture
def fixtures_dir() -> Path:
    return FIXTURES


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_config() -> SynthConfig:
    return SynthConfig(width=64, height=64)


@pytest.fixture(scope="session")
def sample(small_config):
    return generate_sample(7, small_config)


@pytest.fixture
def landmarks128():
    return frontal_landmarks(128, 128)


@pytest.fixture(scope="session")
def texture():
    return base_texture(3, 96, 96)


@pytest.fixture
def api_key(monkeypatch) -> str:
    monkeypatch.setenv("MELLM_API_KEY", "test-key")
    return "test-key"


@pytest.fixture
def no_api_key(monkeypatch):
    monkeypatch.delenv("MELLM_API_KEY", raising=False)
