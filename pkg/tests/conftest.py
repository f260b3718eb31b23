import numpy as np
import pytest

from zdcfast.oracle import OracleConfig, generate_dataset


@pytest.fixture(scope="session")
def tiny_dataset():
    """Small mixed dataset shared by training/pipeline smoke tests."""
    return generate_dataset(OracleConfig(seed=11, n_samples=1200))


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)
