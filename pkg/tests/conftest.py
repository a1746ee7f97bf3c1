# conftest.py - Shared fixtures; app/ is put on sys.path as `python app/app.py` does.

import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.join(os.path.dirname(os.path.abspath(__file__)), "..", "app"))

from dataset_utils import generate_synthetic  # noqa: E402
from snn_utils import LifConfig, init_network  # noqa: E402


@pytest.fixture
def small_series():
    return generate_synthetic(total_steps=3000, max_duration=50, seed=3)


@pytest.fixture
def small_network(small_series):
    config = LifConfig(dt=0.001, tau_syn=0.01, tau_mem=0.001)
    return init_network([small_series.n_channels, 6, small_series.n_classes], config, seed=11, weight_scale=3.0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
