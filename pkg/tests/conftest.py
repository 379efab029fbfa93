"""Shared trained-model fixtures.

Trained checkpoints live in ``artifacts/`` (override with
``SPRITEMOTION_ARTIFACTS``). Each carries a recipe sidecar; when a checkpoint
is missing or its recipe differs from the default config it is retrained,
which takes tens of minutes on one CPU core.
"""
import os
from pathlib import Path

import pytest

from spritemotion.config import default_config
from spritemotion.experiment import ensure_pipeline, ensure_stage1

ARTIFACTS = Path(os.environ.get("SPRITEMOTION_ARTIFACTS", Path(__file__).resolve().parents[1] / "artifacts"))


@pytest.fixture(scope="session")
def cfg():
    return default_config()


@pytest.fixture(scope="session")
def artifacts_dir():
    ARTIFACTS.mkdir(parents=True, exist_ok=True)
    return ARTIFACTS


@pytest.fixture(scope="session")
def trained_stage1(cfg, artifacts_dir):
    return ensure_stage1(cfg, artifacts_dir)


@pytest.fixture(scope="session")
def trained_pipeline(cfg, artifacts_dir):
    return ensure_pipeline(cfg, artifacts_dir)
