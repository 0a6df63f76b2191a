import numpy as np
import pytest

from wmf_lab.sparse import BinaryInteractionMatrix


def random_binary(rng, n_users, n_items, density=0.4, full_column_rank=False):
    """Random 0/1 matrix; optionally redrawn until XᵀX is well conditioned."""
    for _ in range(1000):
        X = (rng.random((n_users, n_items)) < density).astype(float)
        if not full_column_rank:
            return X
        if np.linalg.matrix_rank(X) == n_items and np.linalg.cond(X) < 1e3:
            return X
    raise RuntimeError("could not draw a full-column-rank instance")


def rel_err(a, b):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300)


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


@pytest.fixture
def small_X(rng):
    Xd = random_binary(rng, 20, 6, 0.4, full_column_rank=True)
    return Xd, BinaryInteractionMatrix.from_dense(Xd)


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "LINES", None)
    if lines:
        terminalreporter.section("acceptance")
        for line in lines:
            terminalreporter.write_line(line)
