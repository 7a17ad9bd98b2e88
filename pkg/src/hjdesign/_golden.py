"""Vectorized golden-section search.

Each row of the bracket arrays is an independent 1D problem; ``fun``
receives an array of candidate abscissae of the bracket's shape and
returns the objective there.  The objective only needs to be unimodal on
each bracket.
"""

from __future__ import annotations

import numpy as np

INV_PHI = (np.sqrt(5.0) - 1.0) / 2.0


def golden_min(fun, a, b, iters: int = 60):
    """Return ``(argmin, min)`` of ``fun`` on ``[a, b]`` elementwise."""
    a = np.array(a, dtype=float)
    b = np.array(b, dtype=float)
    c = b - INV_PHI * (b - a)
    d = a + INV_PHI * (b - a)
    fc, fd = fun(c), fun(d)
    for _ in range(iters):
        left = fc <= fd
        # keep [a, d] where the left probe wins, [c, b] otherwise
        b = np.where(left, d, b)
        a = np.where(left, a, c)
        new_c = b - INV_PHI * (b - a)
        new_d = a + INV_PHI * (b - a)
        c_next = np.where(left, new_c, d)
        d_next = np.where(left, c, new_d)
        f_probe = fun(np.where(left, new_c, new_d))
        fc, fd = np.where(left, f_probe, fd), np.where(left, fc, f_probe)
        c, d = c_next, d_next
    x = np.where(fc <= fd, c, d)
    return x, np.minimum(fc, fd)
