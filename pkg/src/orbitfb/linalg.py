"""Dense linear algebra: SVD, ridge solve, least-squares ORM fitting, matrix files.

Matrices are plain 2-D ``float64`` numpy arrays. The SVD is a one-sided
Jacobi method (see :mod:`orbitfb.kernels`); the ridge solver deliberately
does *not* use it, so that it can serve as an independent check on the
spectral controller.
"""

from __future__ import annotations

from pathlib import Path
from typing import NamedTuple

import numpy as np
import scipy.linalg

from . import kernels
from .errors import DimensionError, NonFiniteError, ParseError, RankError, SingularityError

#: relative cutoff on singular values used by every rank decision
RANK_RTOL = 1e-10


class SvdResult(NamedTuple):
    """``m = u @ diag(sigma) @ v.T`` with ``sigma`` non-increasing."""

    u: np.ndarray
    sigma: np.ndarray
    v: np.ndarray


def as_matrix(m, name: str = "matrix") -> np.ndarray:
    a = np.array(m, dtype=np.float64)
    if a.ndim != 2:
        raise DimensionError(f"{name} must be 2-D, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise NonFiniteError(f"{name} has non-finite entries")
    return a


def as_vector(x, dim: int | None = None, name: str = "vector") -> np.ndarray:
    v = np.array(x, dtype=np.float64)
    if v.ndim != 1:
        raise DimensionError(f"{name} must be 1-D, got shape {v.shape}")
    if dim is not None and v.shape[0] != dim:
        raise DimensionError(f"{name} has length {v.shape[0]}, expected {dim}")
    if not np.all(np.isfinite(v)):
        raise NonFiniteError(f"{name} has non-finite entries")
    return v


def _fix_signs(u: np.ndarray, v: np.ndarray) -> None:
    # largest-magnitude entry of each column of u made positive
    idx = np.argmax(np.abs(u), axis=0)
    flip = u[idx, np.arange(u.shape[1])] < 0
    u[:, flip] *= -1.0
    v[:, flip] *= -1.0


def svd(m) -> SvdResult:
    """Full SVD of a square real matrix.

    Raises :class:`DimensionError` for non-square input and
    :class:`NonFiniteError` for NaN/Inf entries.
    """
    a = as_matrix(m)
    n, k = a.shape
    if n != k:
        raise DimensionError(f"svd expects a square matrix, got {a.shape}")
    if n == 0:
        return SvdResult(np.zeros((0, 0)), np.zeros(0), np.zeros((0, 0)))
    cols = np.ascontiguousarray(a.T)
    vt = np.eye(n)
    tol = max(np.sqrt(n), 1.0) * np.finfo(np.float64).eps
    sweeps = kernels.jacobi_sweeps(cols, vt, tol)
    if sweeps < 0:  # pragma: no cover - not observed for finite input
        raise SingularityError("Jacobi SVD did not converge")

    sigma = np.sqrt(np.einsum("ij,ij->i", cols, cols))
    order = np.argsort(-sigma, kind="stable")
    sigma = sigma[order]
    cols = cols[order]
    v = vt[order].T.copy()

    u0 = np.zeros((n, n))
    nz = sigma > 0
    u0[:, nz] = (cols[nz] / sigma[nz, None]).T
    # re-orthogonalize in order of decreasing sigma; zero columns get completed
    q, r = np.linalg.qr(u0)
    d = np.sign(np.diag(r))
    d[d == 0] = 1.0
    u = q * d
    _fix_signs(u, v)
    return SvdResult(u, sigma, v)


def numerical_rank(sigma: np.ndarray, rtol: float = RANK_RTOL) -> int:
    if sigma.size == 0 or sigma[0] == 0:
        return 0
    return int(np.sum(sigma > rtol * sigma[0]))


def ridge_solve(r, s, lam: float) -> np.ndarray:
    """Minimizer of ``|r a + s|^2 + lam |a|^2`` via ``(r^T r + lam I) a = -r^T s``."""
    r = as_matrix(r, "r")
    s = as_vector(s, r.shape[0], "s")
    if lam < 0 or not np.isfinite(lam):
        raise ValueError(f"lambda must be a finite non-negative number, got {lam}")
    if lam == 0:
        if r.shape[0] != r.shape[1]:
            raise DimensionError("lambda = 0 requires a square r")
        sv = np.linalg.svd(r, compute_uv=False)
        if numerical_rank(sv) < r.shape[1]:
            raise SingularityError("r is numerically singular and lambda = 0")
    gram = r.T @ r
    gram[np.diag_indices_from(gram)] += lam
    try:
        factor = scipy.linalg.cho_factor(gram, lower=False, check_finite=False)
    except np.linalg.LinAlgError as exc:
        raise SingularityError(str(exc)) from exc
    return -scipy.linalg.cho_solve(factor, r.T @ s, check_finite=False)


def fit_response_lstsq(data) -> np.ndarray:
    """Least-squares ORM estimate from transitions ``(s, a, s')``.

    Minimizes the mean of ``|(s' - s) - R a|^2``. ``data`` is a
    :class:`~orbitfb.trajectory.TrajectoryLog` or
    :class:`~orbitfb.trajectory.TransitionSet`. The normal equations
    ``A^T A X = A^T B`` are solved through the triangular factor of ``A``,
    with one right-hand side per BPM.
    """
    s, a, s_next = data.arrays()
    m = data.dim
    a = np.asarray(a, dtype=np.float64)
    n = a.shape[0]
    if n == 0:
        raise RankError(0, m)
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(s)) and np.all(np.isfinite(s_next))):
        raise NonFiniteError("transitions contain non-finite values")
    tri = np.linalg.qr(a, mode="r")
    if tri.shape[0] < m:
        tri = np.vstack([tri, np.zeros((m - tri.shape[0], m))])
    rank = numerical_rank(svd(tri).sigma)
    if rank < m:
        raise RankError(rank, m)
    rhs = a.T @ (np.asarray(s_next) - np.asarray(s))
    y = scipy.linalg.solve_triangular(tri, rhs, trans="T", check_finite=False)
    x = scipy.linalg.solve_triangular(tri, y, check_finite=False)
    return np.ascontiguousarray(x.T)


# -- matrix text files --------------------------------------------------------


def format_matrix(m) -> str:
    a = as_matrix(m)
    lines = [f"{a.shape[0]} {a.shape[1]}"]
    lines += [" ".join(f"{x:.17g}" for x in row) for row in a]
    return "\n".join(lines) + "\n"


def parse_matrix(lines: list[str], start: int = 0) -> tuple[np.ndarray, int]:
    """Parse one matrix beginning at ``lines[start]``; returns it and the next index."""
    if start >= len(lines):
        raise ParseError("missing matrix header", start + 1)
    head = lines[start].split()
    try:
        rows, cols = (int(x) for x in head)
    except ValueError:
        raise ParseError(f"bad matrix header {lines[start]!r}", start + 1) from None
    if rows < 0 or cols < 0:
        raise ParseError("negative matrix size", start + 1)
    out = np.empty((rows, cols))
    for i in range(rows):
        ln = start + 1 + i
        if ln >= len(lines):
            raise ParseError(f"expected {rows} rows, file ended", ln + 1)
        parts = lines[ln].split()
        if len(parts) != cols:
            raise ParseError(f"expected {cols} values, got {len(parts)}", ln + 1)
        try:
            out[i] = [float(x) for x in parts]
        except ValueError:
            raise ParseError("non-numeric value", ln + 1) from None
    if not np.all(np.isfinite(out)):
        raise ParseError("non-finite value in matrix", start + 1)
    return out, start + 1 + rows


def write_matrix(path, m) -> None:
    Path(path).write_text(format_matrix(m))


def read_matrix(path) -> np.ndarray:
    lines = [ln for ln in Path(path).read_text().splitlines() if ln.strip()]
    m, end = parse_matrix(lines)
    if end != len(lines):
        raise ParseError("trailing content after matrix", end + 1)
    return m
