import os
import subprocess
import sys

import numpy as np
import pytest

from orbitfb import _accel, kernels, linalg


def _loop_impls():
    impls = [("loop", kernels._jacobi_sweeps_loop)]
    py = getattr(kernels._jacobi_sweeps_loop, "py_func", None)
    if py is not None:
        impls.append(("loop-python", py))
    return impls


@pytest.mark.parametrize("n", [1, 2, 3, 6, 7])
def test_round_robin_covers_every_pair_once(n):
    pairs = kernels.round_robin_pairs(n)
    seen = []
    for rnd in pairs:
        used = [c for p in rnd for c in p if c >= 0]
        assert len(used) == len(set(used))
        seen += [tuple(p) for p in rnd if p[0] >= 0]
    expected = {(p, q) for p in range(n) for q in range(p + 1, n)}
    assert sorted(seen) == sorted(expected)


@pytest.mark.parametrize("n", [2, 5, 16, 33])
def test_jacobi_paths_agree(n):
    m = np.random.default_rng(n).standard_normal((n, n))
    pairs = kernels.round_robin_pairs(n)
    tol = np.sqrt(n) * np.finfo(float).eps
    ref_cols, ref_vt = m.T.copy(), np.eye(n)
    ref_sweeps = kernels._jacobi_sweeps_numpy(ref_cols, ref_vt, pairs, tol, 60)
    assert ref_sweeps > 0
    for _, impl in _loop_impls():
        cols, vt = m.T.copy(), np.eye(n)
        sweeps = impl(cols, vt, pairs, tol, 60)
        assert sweeps == ref_sweeps
        np.testing.assert_allclose(cols, ref_cols, rtol=0, atol=1e-12 * np.abs(m).max())
        np.testing.assert_allclose(vt, ref_vt, rtol=0, atol=1e-12)


def test_jacobi_reports_non_convergence():
    m = np.random.default_rng(0).standard_normal((10, 10))
    assert kernels.jacobi_sweeps(m.T.copy(), np.eye(10), 1e-300, max_sweeps=1) == -1


def test_adam_paths_agree():
    rng = np.random.default_rng(1)
    w0, g = rng.standard_normal(1000), rng.standard_normal(1000)
    m0, v0 = rng.standard_normal(1000) * 0.1, rng.random(1000) * 0.1
    out = []
    for impl in (kernels._adam_numpy, kernels._adam_loop):
        w, m, v = w0.copy(), m0.copy(), v0.copy()
        impl(w, g, m, v, 1e-3, 0.9, 0.999, 1e-8, 1 - 0.9**3, 1 - 0.999**3)
        out.append((w, m, v))
    for a, b in zip(*out):
        np.testing.assert_allclose(a, b, rtol=1e-14, atol=1e-16)


def test_adam_update_in_place_on_matrix():
    w = np.zeros((3, 4))
    m, v = np.zeros_like(w), np.zeros_like(w)
    kernels.adam_update(w, np.ones_like(w), m, v, 0.1, 0.9, 0.999, 1e-8, 1)
    np.testing.assert_allclose(w, -0.1 / (1 + 1e-8), rtol=1e-15)


def _backend_in_subprocess(flag):
    env = dict(os.environ)
    env.pop("ORBITFB_DISABLE_NUMBA", None)
    if flag is not None:
        env["ORBITFB_DISABLE_NUMBA"] = flag
    code = "import orbitfb; print(orbitfb.backend())"
    return subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True).stdout.strip()


def test_env_flag_selects_backend():
    assert _backend_in_subprocess("1") == "numpy"
    assert _backend_in_subprocess("true") == "numpy"
    expected = "numba" if _accel._numba is not None else "numpy"
    assert _backend_in_subprocess(None) == expected
    assert _backend_in_subprocess("0") == expected


def test_svd_identical_across_backends():
    code = (
        "import numpy as np, sys; from orbitfb import linalg;"
        "m = np.random.default_rng(7).standard_normal((20, 20));"
        "u, s, v = linalg.svd(m); sys.stdout.write(repr(s.tolist()) + repr(float(abs(u).sum())))"
    )
    outs = []
    for flag in ("1", "0"):
        env = dict(os.environ, ORBITFB_DISABLE_NUMBA=flag)
        outs.append(subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True).stdout)
    s0 = np.array(eval(outs[0].split("]")[0] + "]"))
    s1 = np.array(eval(outs[1].split("]")[0] + "]"))
    np.testing.assert_allclose(s0, s1, rtol=1e-13)
    ref = np.linalg.svd(np.random.default_rng(7).standard_normal((20, 20)), compute_uv=False)
    np.testing.assert_allclose(s1, ref, rtol=1e-12)
    assert linalg.svd(np.eye(2)).sigma.tolist() == [1.0, 1.0]
