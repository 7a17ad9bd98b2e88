"""Pure numpy versions of the compiled kernels in ``_kernels.pyx``.

Loops run over stencil offsets (or constraint colours) with whole-grid
array operations inside, so the visiting order and tie-breaking match
the compiled loops.
"""

from __future__ import annotations

import numpy as np


def minplus_1d(u, cost, W):
    u = np.ascontiguousarray(u, dtype=float)
    n = u.shape[0]
    best = np.full(n, np.inf)
    arg = np.arange(n, dtype=np.intp)
    idx = np.arange(n)
    for k in range(-W, W + 1):
        j = idx + k
        ok = (j >= 0) & (j < n)
        cand = np.full(n, np.inf)
        cand[ok] = u[j[ok]] + cost[k + W]
        better = cand < best
        best = np.where(better, cand, best)
        arg = np.where(better, j, arg)
    return best, arg


def minplus_2d(u, cost, W):
    u = np.ascontiguousarray(u, dtype=float)
    n, m = u.shape
    best = np.full((n, m), np.inf)
    I, J = np.meshgrid(np.arange(n), np.arange(m), indexing="ij")
    ai, aj = I.copy(), J.copy()
    pad = np.full((n + 2 * W, m + 2 * W), np.inf)
    pad[W:W + n, W:W + m] = u
    for kp in range(-W, W + 1):
        for kq in range(-W, W + 1):
            cand = pad[W + kp:W + kp + n, W + kq:W + kq + m] + cost[kp + W, kq + W]
            better = cand < best
            best = np.where(better, cand, best)
            ai = np.where(better, I + kp, ai)
            aj = np.where(better, J + kq, aj)
    return best, ai, aj


def _snap(s):
    r = np.rint(s)
    return np.where(np.abs(s - r) < 1e-9, r, s)


def _interp1(v, L, h, x):
    M = v.shape[0]
    s = _snap((x + L) / h)
    fl = np.clip(np.floor(s), 0, M - 2)
    k = fl.astype(np.intp)
    t = s - fl
    return v[k] * (1.0 - t) + v[k + 1] * t


def _interp2(v, L, h, x, y):
    M = v.shape[0]
    s = _snap((x + L) / h)
    r = _snap((y + L) / h)
    fs = np.clip(np.floor(s), 0, M - 2)
    fr = np.clip(np.floor(r), 0, M - 2)
    i, j = fs.astype(np.intp), fr.astype(np.intp)
    a, b = s - fs, r - fr
    return (
        v[i, j] * (1 - a) * (1 - b)
        + v[i + 1, j] * a * (1 - b)
        + v[i, j + 1] * (1 - a) * b
        + v[i + 1, j + 1] * a * b
    )


def semilag_1d(u, L, h, disp, cost):
    u = np.ascontiguousarray(u, dtype=float)
    M = u.shape[0]
    x = -L + h * np.arange(M)
    best = np.full(M, np.inf)
    arg = np.zeros(M, dtype=np.intp)
    for k in range(disp.shape[0]):
        cand = cost[:, k] + _interp1(u, L, h, x - disp[k])
        better = cand < best
        best = np.where(better, cand, best)
        arg = np.where(better, k, arg)
    return best, arg


def semilag_2d(u, L, h, disp, cost):
    u = np.ascontiguousarray(u, dtype=float)
    M = u.shape[0]
    ax = -L + h * np.arange(M)
    X, Y = np.meshgrid(ax, ax, indexing="ij")
    best = np.full((M, M), np.inf)
    arg = np.zeros((M, M), dtype=np.intp)
    for k in range(disp.shape[0]):
        cand = cost[:, k].reshape(M, M) + _interp2(u, L, h, X - disp[k, 0], Y - disp[k, 1])
        better = cand < best
        best = np.where(better, cand, best)
        arg = np.where(better, k, arg)
    return best, arg


def _block_update(phi, lam, c, p, m, b, omega):
    """Simultaneous Hildreth steps on constraints with disjoint stencils.

    ``c``, ``p``, ``m`` index the centre, plus and minus nodes; ``lam``
    holds the duals at the same positions as ``c``.
    """
    viol = phi[p] + phi[m] - 2.0 * phi[c] - b
    d = omega * viol / 6.0
    d = np.maximum(d, -lam[c])
    lam[c] += d
    phi[m] -= d
    phi[p] -= d
    phi[c] += 2.0 * d
    return float(np.abs(d).max()) if d.size else 0.0


def hildreth_sweep_1d(phi, lam, b, omega):
    M = phi.shape[0]
    worst = 0.0
    for r in range(3):
        c = np.arange(r if r > 0 else 3, M - 1, 3)
        worst = max(worst, _block_update(phi, lam, c, c + 1, c - 1, b, omega))
    return worst


def hildreth_sweep_2d(phi, lam, b, dirs, omega):
    M = phi.shape[0]
    worst = 0.0
    flat = phi.reshape(-1)
    for d, (e0, e1) in enumerate(np.asarray(dirs)):
        e0, e1 = int(e0), int(e1)
        i0, j0 = abs(e0), abs(e1)
        lam_d = lam[d].reshape(-1)
        for r in range(3):
            if e0 != 0:
                ii = np.arange(i0 + (r - i0) % 3, M - i0, 3)
                jj = np.arange(j0, M - j0)
            else:
                ii = np.arange(i0, M - i0)
                jj = np.arange(j0 + (r - j0) % 3, M - j0, 3)
            I, J = np.meshgrid(ii, jj, indexing="ij")
            c = (I * M + J).ravel()
            p = ((I + e0) * M + (J + e1)).ravel()
            m = ((I - e0) * M + (J - e1)).ravel()
            worst = max(worst, _block_update(flat, lam_d, c, p, m, b[d], omega))
    return worst
