import pytest
from hypothesis import HealthCheck, settings

from cilo.fixtures import ex1 as build_ex1

settings.register_profile(
    "default", deadline=None, max_examples=40, suppress_health_check=[HealthCheck.too_slow], derandomize=True
)
settings.load_profile("default")


@pytest.fixture(scope="session")
def ex1():
    return build_ex1()
