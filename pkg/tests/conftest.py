import numpy as np
import pytest

from cfgflow import domains


def rel_err(a, b, floor=1e-12):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    denom = max(np.linalg.norm(a), np.linalg.norm(b), floor)
    return np.linalg.norm(a - b) / denom


def sample_off_singular(domain_name, n, seed):
    """Random points avoiding each domain's non-smooth sets."""
    rng = np.random.default_rng(seed)
    if domain_name == "ring":
        x = rng.uniform(-2.5, 2.5, size=(4 * n, 2))
        s = np.sum(x ** 2, axis=1)
        x = x[(np.abs(s - 2.5) > 0.05) & (s > 0.05)]
    elif domain_name == "cardioid":
        x = rng.uniform(-2.5, 3.2, size=(4 * n, 2))
        x = x[np.abs(x[:, 0]) > 1e-2]
    elif domain_name == "double_moon":
        x = rng.uniform(-5.0, 5.0, size=(4 * n, 2))
        x = x[np.linalg.norm(x, axis=1) > 0.05]
    elif domain_name == "block":
        x = rng.uniform(-3.0, 3.0, size=(4 * n, 2))
        ax = np.abs(x)
        x = x[(np.abs(ax[:, 0] - ax[:, 1]) > 1e-2) & (ax.min(axis=1) > 1e-2)]
    else:
        raise ValueError(domain_name)
    assert len(x) >= n
    return x[:n]


@pytest.fixture(scope="session")
def toy_domains():
    return {"ring": domains.make_ring(),
            "cardioid": domains.make_cardioid(),
            "double_moon": domains.make_double_moon(),
            "block": domains.make_block()}
