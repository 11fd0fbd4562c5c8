import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("default", max_examples=40, deadline=None)
settings.load_profile("default")


@pytest.fixture
def gen():
    return np.random.default_rng(12345)


def random_orthogonal(k, gen):
    q, r = np.linalg.qr(gen.standard_normal((k, k)))
    return q * np.sign(np.diag(r))
