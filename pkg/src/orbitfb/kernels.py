"""Hot inner loops with a compiled and a vectorized path.

Two kernels dominate the non-BLAS runtime of the package:

* the one-sided Jacobi sweeps behind :func:`orbitfb.linalg.svd`
* the elementwise Adam update over ~0.7 M weights per optimizer step

Each kernel has a loop implementation (compiled by numba when enabled) and a
pure-numpy implementation. Both paths use the same pair ordering and the same
update formulas, so they agree to rounding.
"""

from __future__ import annotations

import math

import numpy as np

from ._accel import USE_NUMBA, njit

__all__ = [
    "round_robin_pairs",
    "jacobi_sweeps",
    "adam_update",
]


def round_robin_pairs(n: int) -> np.ndarray:
    """Tournament schedule of disjoint column pairs.

    Returns an int64 array of shape ``(rounds, n_pairs, 2)``. Every unordered
    pair ``(p, q)`` with ``p < q < n`` appears exactly once; pairs inside one
    round touch disjoint columns. Slots involving the padding column of an
    odd ``n`` are marked with ``-1``.
    """
    if n < 2:
        return np.zeros((0, 0, 2), dtype=np.int64)
    players = list(range(n)) if n % 2 == 0 else list(range(n)) + [-1]
    k = len(players)
    rounds = np.empty((k - 1, k // 2, 2), dtype=np.int64)
    ring = players[1:]
    for r in range(k - 1):
        line = [players[0]] + ring
        for j in range(k // 2):
            p, q = line[j], line[k - 1 - j]
            if p < 0 or q < 0:
                rounds[r, j] = (-1, -1)
            else:
                rounds[r, j] = (min(p, q), max(p, q))
        ring = ring[-1:] + ring[:-1]
    return rounds


@njit
def _jacobi_sweeps_loop(cols, vt, pairs, tol, max_sweeps):
    m = cols.shape[1]
    nv = vt.shape[1]
    for sweep in range(max_sweeps):
        rotated = 0
        for r in range(pairs.shape[0]):
            for k in range(pairs.shape[1]):
                p = pairs[r, k, 0]
                q = pairs[r, k, 1]
                if p < 0:
                    continue
                alpha = 0.0
                beta = 0.0
                gamma = 0.0
                for i in range(m):
                    x = cols[p, i]
                    y = cols[q, i]
                    alpha += x * x
                    beta += y * y
                    gamma += x * y
                if alpha == 0.0 or beta == 0.0:
                    continue
                if abs(gamma) <= tol * math.sqrt(alpha * beta):
                    continue
                rotated += 1
                zeta = (beta - alpha) / (2.0 * gamma)
                t = math.copysign(1.0, zeta) / (abs(zeta) + math.sqrt(1.0 + zeta * zeta))
                c = 1.0 / math.sqrt(1.0 + t * t)
                s = c * t
                for i in range(m):
                    x = cols[p, i]
                    y = cols[q, i]
                    cols[p, i] = c * x - s * y
                    cols[q, i] = s * x + c * y
                for i in range(nv):
                    x = vt[p, i]
                    y = vt[q, i]
                    vt[p, i] = c * x - s * y
                    vt[q, i] = s * x + c * y
        if rotated == 0:
            return sweep + 1
    return -1


def _jacobi_sweeps_numpy(cols, vt, pairs, tol, max_sweeps):
    rounds = []
    for r in range(pairs.shape[0]):
        live = pairs[r][pairs[r, :, 0] >= 0]
        rounds.append((live[:, 0], live[:, 1]))
    for sweep in range(max_sweeps):
        rotated = 0
        for p, q in rounds:
            x = cols[p]
            y = cols[q]
            alpha = np.einsum("ij,ij->i", x, x)
            beta = np.einsum("ij,ij->i", y, y)
            gamma = np.einsum("ij,ij->i", x, y)
            act = (alpha != 0.0) & (beta != 0.0)
            act &= np.abs(gamma) > tol * np.sqrt(alpha * beta)
            if not act.any():
                continue
            rotated += int(act.sum())
            p, q = p[act], q[act]
            x, y = x[act], y[act]
            zeta = (beta[act] - alpha[act]) / (2.0 * gamma[act])
            t = np.copysign(1.0, zeta) / (np.abs(zeta) + np.sqrt(1.0 + zeta * zeta))
            c = (1.0 / np.sqrt(1.0 + t * t))[:, None]
            s = c * t[:, None]
            cols[p] = c * x - s * y
            cols[q] = s * x + c * y
            vx = vt[p]
            vy = vt[q]
            vt[p] = c * vx - s * vy
            vt[q] = s * vx + c * vy
        if rotated == 0:
            return sweep + 1
    return -1


def jacobi_sweeps(cols: np.ndarray, vt: np.ndarray, tol: float, max_sweeps: int = 60) -> int:
    """Orthogonalize the rows of ``cols`` in place by plane rotations.

    ``cols`` holds the columns of the matrix being decomposed as rows (so the
    inner loops run over contiguous memory); ``vt`` accumulates the same
    rotations. Returns the number of sweeps used, or ``-1`` when
    ``max_sweeps`` ran out before every pair satisfied
    ``|<x, y>| <= tol * |x| |y|``.
    """
    pairs = round_robin_pairs(cols.shape[0])
    if USE_NUMBA:
        return int(_jacobi_sweeps_loop(cols, vt, pairs, tol, max_sweeps))
    return _jacobi_sweeps_numpy(cols, vt, pairs, tol, max_sweeps)


@njit
def _adam_loop(w, g, m, v, lr, beta1, beta2, eps, bc1, bc2):
    for i in range(w.shape[0]):
        gi = g[i]
        mi = beta1 * m[i] + (1.0 - beta1) * gi
        vi = beta2 * v[i] + (1.0 - beta2) * (gi * gi)
        m[i] = mi
        v[i] = vi
        w[i] -= lr * (mi / bc1) / (math.sqrt(vi / bc2) + eps)


def _adam_numpy(w, g, m, v, lr, beta1, beta2, eps, bc1, bc2):
    m *= beta1
    m += (1.0 - beta1) * g
    v *= beta2
    v += (1.0 - beta2) * (g * g)
    w -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)


def adam_update(w, g, m, v, lr, beta1, beta2, eps, step):
    """One bias-corrected Adam update, in place on ``w``, ``m`` and ``v``.

    All four arrays must be C-contiguous float64 of equal shape; ``step`` is
    the 1-based update counter.
    """
    bc1 = 1.0 - beta1**step
    bc2 = 1.0 - beta2**step
    args = (w.reshape(-1), g.reshape(-1), m.reshape(-1), v.reshape(-1))
    if USE_NUMBA:
        _adam_loop(*args, lr, beta1, beta2, eps, bc1, bc2)
    else:
        _adam_numpy(*args, lr, beta1, beta2, eps, bc1, bc2)
