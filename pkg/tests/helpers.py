"""Finite-difference oracles shared by the test modules."""

import numpy as np


def fd_grad(fn, x, step=1e-6):
    """Central differences of ``fn`` (any array output) w.r.t. the entries of ``x``."""
    x = np.asarray(x, dtype=float)
    f0 = np.asarray(fn(x))
    out = np.empty(x.shape + f0.shape)
    for idx in np.ndindex(x.shape):
        e = np.zeros_like(x)
        e[idx] = step
        out[idx] = (np.asarray(fn(x + e)) - np.asarray(fn(x - e))) / (2 * step)
    return out


def rel_err(a, b, floor=1e-8):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), floor))


def random_config(rng, d, h_range=(0.5, 1.5)):
    """Offset strictly inside the support and away from the origin."""
    h = rng.uniform(*h_range)
    while True:
        y = rng.uniform(-1, 1, d)
        if 0.05 < np.linalg.norm(y) < 0.95:
            return y * h, h
