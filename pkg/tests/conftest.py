import os
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, max_examples=60, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

DATA = Path(__file__).parent / "data"
MNIST_IMAGES = DATA / "mnist5k-images-idx3-ubyte.gz"
MNIST_LABELS = DATA / "mnist5k-labels-idx1-ubyte.gz"


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def mnist():
    from invariant_cae.data_io import load_idx

    return load_idx(MNIST_IMAGES, MNIST_LABELS)


@pytest.fixture(scope="session")
def mnist_run(mnist):
    """The desk-scale rotated-digit experiment, shared by the acceptance and property tests."""
    import time

    from invariant_cae.experiments import rotated_mnist

    start = time.perf_counter()
    result = rotated_mnist(mnist.images, mnist.labels)
    result.elapsed = time.perf_counter() - start
    return result
