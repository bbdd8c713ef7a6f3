import pytest

from precsched.core_model import Instance


@pytest.fixture
def two_by_three():
    """Three jobs of size 2 on two machines, no precedence."""
    return Instance.build({"a": 2, "b": 2, "c": 2}, machines=2)


@pytest.fixture
def unit_chain():
    return Instance.build({"a": 1, "b": 1, "c": 1}, [("a", "b"), ("b", "c")], machines=1)
