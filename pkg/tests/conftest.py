"""
Pytest Configuration and Fixtures

Shared fixtures for ContrastGuard tests.
"""

import os

import numpy as np
import pytest

# Set test environment before importing settings
os.environ["CONTRASTGUARD_APP_ENV"] = "development"
os.environ["CONTRASTGUARD_WORKERS"] = "2"
os.environ.pop("CONTRASTGUARD_DATA_DIR", None)


TINY_MODEL = {
    "preset": "tiny",
    "channels": [4, 8],
    "embedding_dim": 16,
    "projection_hidden": 16,
    "projection_dim": 8,
    "seed": 0,
}


@pytest.fixture
def tiny_config():
    """Narrow encoder configuration for fast tests."""
    from src.models.network import ModelConfig

    return ModelConfig(**TINY_MODEL)


@pytest.fixture
def tiny_model(tiny_config):
    """Freshly initialized narrow model."""
    from src.models.network import build_model

    return build_model(tiny_config)


@pytest.fixture
def blobs():
    """Forty labeled synthetic images."""
    from src.services.datasets import make_synthetic_blobs

    return make_synthetic_blobs(40, seed=0)


@pytest.fixture
def small_images(blobs):
    """Eight float images in [0, 1]."""
    return blobs.as_float()[:8]


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def ci_config(tmp_path):
    """The ci preset writing into a temporary directory."""
    from src.evaluation.config import build_config

    return build_config("ci", output_dir=tmp_path / "run", workers=2)


@pytest.fixture(autouse=True)
def _reset_structlog():
    """Drop process-wide logging config set by CLI tests.

    setup_logging binds structlog to the sys.stderr that pytest captures for
    that test; the stream is closed afterwards, so later tests must not reuse it.
    """
    yield
    import structlog

    structlog.reset_defaults()
