# tests/flows/conftest.py
import pytest
from prefect.testing.utilities import prefect_test_harness


@pytest.fixture(autouse=True, scope="session")
def prefect_backend():
    """Runs every flow test against a throwaway Prefect database."""
    with prefect_test_harness():
        yield
