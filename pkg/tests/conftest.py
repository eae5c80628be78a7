import numpy as np
import pytest

from qprox import RegularizerSpec, generate_instance


def fd_gradient(f, x, h=1e-6):
    """Central finite differences, one coordinate at a time."""
    g = np.zeros_like(x)
    for k in range(len(x)):
        e = np.zeros_like(x)
        e[k] = h
        g[k] = (f(x + e) - f(x - e)) / (2.0 * h)
    return g


def rel_err(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-30)


@pytest.fixture(scope="session")
def small_instance():
    """6-node ring-ish instance shared by solver tests."""
    reg = RegularizerSpec("elastic_net", 0.1, 0.5)
    return generate_instance(6, 2, 2, 8, reg, seed=3)
