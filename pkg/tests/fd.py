"""Central finite-difference oracle used to check exact gradients."""

import numpy as np


def fd_gradient(f, x, h=1e-5):
    """Full central-difference gradient of scalar f at x."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        xp = x.copy()
        xm = x.copy()
        xp[idx] += h
        xm[idx] -= h
        g[idx] = (f(xp) - f(xm)) / (2.0 * h)
    return g


def fd_gradient_at(f, x, coords, h=1e-5):
    """Central differences at selected coordinates only."""
    x = np.asarray(x, dtype=np.float64)
    out = []
    for idx in coords:
        xp = x.copy()
        xm = x.copy()
        xp[idx] += h
        xm[idx] -= h
        out.append((f(xp) - f(xm)) / (2.0 * h))
    return np.array(out)


def rel_err(a, b, floor=1e-6):
    """Elementwise relative error with an absolute floor for tiny gradients."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
