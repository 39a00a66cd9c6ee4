import os

import numpy as np
import pytest

from ttnet.synth import generate_dataset


def random_shape_factors(rng, d, max_factor=4):
    p = tuple(int(v) for v in rng.integers(1, max_factor + 1, size=d))
    q = tuple(int(v) for v in rng.integers(1, max_factor + 1, size=d))
    return p, q


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory):
    """Three short utterances on disk; shared by CLI and pipeline tests."""
    out = tmp_path_factory.mktemp("tiny")
    generate_dataset(out, 3, snrs=(0, 6), seed=3, n_samples=4000)
    return out


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_report_header(config):
    from ttnet import BACKEND
    forced = " (forced)" if os.environ.get("TTNET_PURE_PYTHON") == "1" else ""
    return f"ttnet kernel backend: {BACKEND}{forced}"
