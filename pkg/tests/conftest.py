import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("hesslab", deadline=None, max_examples=60, derandomize=True)
settings.load_profile("hesslab")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
