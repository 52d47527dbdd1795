import pytest

from decode_attention.numerics import SeededRng


@pytest.fixture
def rng():
    return SeededRng(1234)
