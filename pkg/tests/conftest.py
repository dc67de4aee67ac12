import os

import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("ramit", max_examples=40, deadline=None)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "ramit"))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
