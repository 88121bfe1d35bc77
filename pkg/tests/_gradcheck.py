"""Central finite differences for gradient oracles."""

import numpy as np

STEP = 1e-6
TOLERANCE = 1e-4


def numeric_gradient(f, x, step=STEP):
    """Central differences of scalar ``f`` at vector ``x`` (``x`` is restored)."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    for i in range(x.size):
        old = x.flat[i]
        x.flat[i] = old + step
        up = f(x)
        x.flat[i] = old - step
        down = f(x)
        x.flat[i] = old
        g.flat[i] = (up - down) / (2 * step)
    return g


def relative_error(analytic, numeric):
    """Per-coordinate ``|a - n| / max(|a|, |n|, 1e-4)``; the floor keeps exact zeros comparable."""
    a, n = np.asarray(analytic), np.asarray(numeric)
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-4)
