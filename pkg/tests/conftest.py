import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "artifact", max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("artifact")


@pytest.fixture
def rng():
    return np.random.default_rng(20241016)


def random_lower(rng, n, rank=None):
    """Random lower-triangular factor, optionally rank deficient."""
    A = rng.standard_normal((n, n if rank is None else rank))
    cov = A @ A.T
    if rank is None:
        return np.linalg.cholesky(cov + 1e-12 * np.eye(n))
    w, v = np.linalg.eigh(cov)
    root = v * np.sqrt(np.clip(w, 0, None))
    q, r = np.linalg.qr(root.T)
    r = r * np.sign(np.where(np.diag(r) == 0, 1, np.diag(r)))[:, None]
    return r.T


def is_lower(M, atol=0.0):
    return np.all(np.abs(np.triu(M, 1)) <= atol)


# one line per acceptance criterion, printed after the run
ACCEPTANCE_LINES = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[key])
