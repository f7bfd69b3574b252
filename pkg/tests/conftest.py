import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "repo",
    max_examples=40,
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("repo")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def fd_check(fn, params, tol=1e-4):
    """Assert autodiff vs central differences for every parameter."""
    from dgembed.autodiff import check_gradients

    worst = check_gradients(fn, params, step=1e-5)
    assert worst < tol, f"relative gradient error {worst:.3g}"
    return worst
