import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from hqnn.data import synth_dataset


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory):
    """Small synthetic dataset shared by training/CLI tests."""
    root = tmp_path_factory.mktemp("tinydata")
    manifest = synth_dataset(root, n_per_class=8, seed=42)
    return manifest
