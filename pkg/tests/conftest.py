import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "default", max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_hpd(rng, m, cond=10.0):
    """Random Hermitian positive definite matrix."""
    a = rng.standard_normal((m, m)) + 1j * rng.standard_normal((m, m))
    q, _ = np.linalg.qr(a)
    ev = np.exp(rng.uniform(0, np.log(cond), m))
    return (q * ev) @ q.conj().T
