import os

# single-threaded BLAS: the reproducibility contract is defined for
# single-threaded execution, and the sandbox has one core anyway
os.environ.setdefault("OPENBLAS_NUM_THREADS", "1")
os.environ.setdefault("OMP_NUM_THREADS", "1")
os.environ.setdefault("MKL_NUM_THREADS", "1")

import numpy as np  # noqa: E402
import pytest  # noqa: E402

from varnet4d import backend  # noqa: E402


@pytest.fixture(params=backend.available_backends())
def kernel_backend(request):
    """Run a test once per available kernel backend."""
    prev = backend.backend_name()
    backend.set_backend(request.param)
    yield request.param
    backend.set_backend(prev)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
