import pytest

from sinkdro import _kernels


@pytest.fixture(scope="session", autouse=True)
def _jit_warmup():
    # pay the numba compile cost once, outside any timed assertion
    _kernels.warmup()
