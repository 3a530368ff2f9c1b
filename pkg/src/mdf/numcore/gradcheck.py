"""Central finite differences, used as an independent oracle for gradients."""
from __future__ import annotations

import numpy as np


def central_difference(f, params, step=1e-6):
    """Numerical gradient of the scalar ``f(*params)`` w.r.t. each array.

    ``f`` must accept plain float64 arrays and return something ``float()``
    accepts. Never touches the autodiff graph.
    """
    params = [np.array(p, dtype=np.float64) for p in params]
    out = []
    for p in params:
        g = np.zeros_like(p)
        flat, gflat = p.reshape(-1), g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            hi = float(f(*params))
            flat[i] = orig - step
            lo = float(f(*params))
            flat[i] = orig
            gflat[i] = (hi - lo) / (2 * step)
        out.append(g)
    return out


def relative_error(a, b, floor=1e-6):
    """Elementwise ``|a-b| / max(|a|, |b|, floor)``; the floor keeps
    exactly-zero gradients from producing 0/0."""
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
