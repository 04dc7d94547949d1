import pytest

from pwvqa import backend


@pytest.fixture(params=backend.available_backends())
def kernel_backend(request):
    """Run the decorated test once per available kernel backend."""
    previous = backend.active_backend()
    backend.set_backend(request.param)
    yield request.param
    backend.set_backend(previous)
