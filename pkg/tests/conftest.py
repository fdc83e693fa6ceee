import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from qinireg import RandomSeed, UpliftDataset


def random_dataset(n, p, seed, *, treat_prob=0.5, signal=1.0):
    """Random dataset with a mild treatment-interaction signal."""
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, p))
    t = (rng.random(n) < treat_prob).astype(int)
    beta = rng.normal(0, 0.5, p)
    delta = rng.normal(0, 0.5, p) * signal
    eta = 0.3 + X @ beta + t * (0.1 + X @ delta)
    y = (rng.random(n) < 1 / (1 + np.exp(-eta))).astype(int)
    # guard against degenerate draws in tiny samples
    if t.sum() == 0:
        t[0] = 1
    if (1 - t).sum() == 0:
        t[0] = 0
    if y.sum() == 0:
        y[0] = 1
    if (1 - y).sum() == 0:
        y[0] = 0
    names = tuple(f"x{j + 1}" for j in range(p))
    return UpliftDataset(X, t, y, names)


def counts_dataset(n_treated, resp_treated, n_control, resp_control, p=0):
    """Dataset with exact per-arm response counts and optional zero features."""
    n = n_treated + n_control
    t = np.concatenate([np.ones(n_treated, dtype=int), np.zeros(n_control, dtype=int)])
    y = np.concatenate([
        np.ones(resp_treated, dtype=int), np.zeros(n_treated - resp_treated, dtype=int),
        np.ones(resp_control, dtype=int), np.zeros(n_control - resp_control, dtype=int),
    ])
    X = np.zeros((n, p))
    names = tuple(f"x{j + 1}" for j in range(p))
    return UpliftDataset(X, t, y, names)


@pytest.fixture
def seed0():
    return RandomSeed(0)
