import numpy as np
import pytest

from cochceps import kernels

KERNEL_NAMES = ("lift_rows", "mode_energies", "nt_xent", "resize_nearest")


@pytest.fixture(params=sorted(kernels.BACKENDS))
def backend(request, monkeypatch):
    """Run a test once per available kernel backend."""
    impl = kernels.BACKENDS[request.param]
    for name in KERNEL_NAMES:
        monkeypatch.setattr(kernels, name, getattr(impl, name))
    return request.param


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)
