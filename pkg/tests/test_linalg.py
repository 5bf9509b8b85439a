import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from orbitfb import linalg
from orbitfb.errors import DimensionError, NonFiniteError, ParseError, RankError, SingularityError
from orbitfb.trajectory import TrajectoryLog, TransitionSet


def check_svd(m, res, tol=1e-10):
    u, sigma, v = res
    n = m.shape[0]
    assert np.all(np.diff(sigma) <= 0)
    assert np.all(sigma >= 0)
    assert np.max(np.abs(u.T @ u - np.eye(n))) <= tol
    assert np.max(np.abs(v.T @ v - np.eye(n))) <= tol
    scale = max(sigma[0], np.finfo(float).tiny) if n else 1.0
    assert np.max(np.abs((u * sigma) @ v.T - m), initial=0.0) <= tol * scale


def test_identity():
    res = linalg.svd(np.eye(3))
    np.testing.assert_array_equal(res.sigma, [1.0, 1.0, 1.0])
    check_svd(np.eye(3), res)


def test_diagonal_up_to_sign():
    res = linalg.svd(np.diag([3.0, 2.0]))
    np.testing.assert_allclose(res.sigma, [3.0, 2.0], rtol=1e-15)
    np.testing.assert_allclose(np.abs(res.u), np.eye(2), atol=1e-15)
    np.testing.assert_allclose(np.abs(res.v), np.eye(2), atol=1e-15)


def test_diagonal_reordered():
    res = linalg.svd(np.diag([1.0, 5.0, 3.0]))
    np.testing.assert_allclose(res.sigma, [5.0, 3.0, 1.0], rtol=1e-15)


def test_random_5x5_reconstruction(rng):
    m = rng.standard_normal((5, 5))
    check_svd(m, linalg.svd(m))


def test_sign_convention(rng):
    u, _, _ = linalg.svd(rng.standard_normal((8, 8)))
    idx = np.argmax(np.abs(u), axis=0)
    assert np.all(u[idx, np.arange(8)] > 0)


def test_matches_lapack_singular_values(rng):
    m = rng.standard_normal((30, 30))
    np.testing.assert_allclose(linalg.svd(m).sigma, np.linalg.svd(m, compute_uv=False), rtol=1e-12)


def test_invariants_on_1000_matrices():
    rng = np.random.default_rng(2024)
    for k in range(1000):
        n = int(rng.integers(2, 51)) if k % 20 == 0 else int(rng.integers(2, 13))
        m = rng.standard_normal((n, n)) * 10.0 ** rng.uniform(-3, 3)
        check_svd(m, linalg.svd(m))


@pytest.mark.parametrize(
    "m",
    [np.zeros((4, 4)), np.ones((5, 5)), np.outer([1.0, 2.0, 3.0], [1.0, -1.0, 0.5]), np.diag([1.0, 0.0, 1e-300])],
    ids=["zero", "ones", "rank1", "tiny"],
)
def test_degenerate_matrices(m):
    res = linalg.svd(m)
    check_svd(m, res)


def test_ill_conditioned_spectrum():
    from orbitfb.env import generate_orm

    r = generate_orm(60, 1e6, 3)
    res = linalg.svd(r)
    check_svd(r, res)
    np.testing.assert_allclose(res.sigma, np.logspace(0, -6, 60), rtol=1e-8)


def test_svd_deterministic(rng):
    m = rng.standard_normal((12, 12))
    a, b = linalg.svd(m), linalg.svd(m.copy())
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x, y)


@pytest.mark.parametrize("bad", [np.zeros((2, 3)), np.zeros(3), np.array([[1.0, np.nan], [0.0, 1.0]])])
def test_svd_rejects(bad):
    with pytest.raises((DimensionError, NonFiniteError)):
        linalg.svd(bad)


@given(st.integers(2, 9), st.integers(0, 2**31 - 1), st.floats(-4, 4))
def test_svd_property(n, seed, log_scale):
    m = np.random.default_rng(seed).standard_normal((n, n)) * 10.0**log_scale
    check_svd(m, linalg.svd(m))


# -- ridge --------------------------------------------------------------------


def test_ridge_identity_examples():
    np.testing.assert_allclose(linalg.ridge_solve(np.eye(2), [1.0, 1.0], 0.0), [-1.0, -1.0], rtol=1e-15)
    np.testing.assert_allclose(linalg.ridge_solve(np.eye(2), [1.0, 1.0], 1.0), [-0.5, -0.5], rtol=1e-15)


def test_ridge_zero_state(rng):
    r = rng.standard_normal((6, 6))
    for lam in (0.0, 0.1, 10.0):
        np.testing.assert_array_equal(linalg.ridge_solve(r, np.zeros(6), lam), np.zeros(6))


def test_ridge_singular_raises():
    with pytest.raises(SingularityError):
        linalg.ridge_solve(np.array([[1.0, 2.0], [2.0, 4.0]]), [1.0, 0.0], 0.0)
    # regularised problem is well posed
    a = linalg.ridge_solve(np.array([[1.0, 2.0], [2.0, 4.0]]), [1.0, 0.0], 1e-3)
    assert np.all(np.isfinite(a))


def test_ridge_rejects_negative_lambda():
    with pytest.raises(ValueError):
        linalg.ridge_solve(np.eye(2), [1.0, 1.0], -1.0)


def test_ridge_dimension_mismatch():
    with pytest.raises(DimensionError):
        linalg.ridge_solve(np.eye(3), [1.0, 1.0], 0.1)


@given(st.integers(2, 20), st.integers(0, 2**31 - 1), st.floats(1e-6, 10.0))
def test_ridge_stationarity(n, seed, lam):
    rng = np.random.default_rng(seed)
    r = rng.standard_normal((n, n))
    s = rng.standard_normal(n)
    a = linalg.ridge_solve(r, s, lam)
    resid = (r.T @ r + lam * np.eye(n)) @ a + r.T @ s
    sigma1 = np.linalg.norm(r, 2)
    assert np.max(np.abs(resid)) <= 1e-9 * (sigma1**2 + lam) * np.max(np.abs(s))


# -- least-squares fit --------------------------------------------------------


def _transitions(r, n, rng, noise=0.0):
    m = r.shape[0]
    s = rng.standard_normal((n, m))
    a = rng.standard_normal((n, m))
    s_next = s + a @ r.T + noise * rng.standard_normal((n, m))
    return TransitionSet(s, a, s_next)


def test_fit_recovers_exact(rng):
    r = rng.standard_normal((5, 5))
    r_hat = linalg.fit_response_lstsq(_transitions(r, 200, rng))
    assert np.max(np.abs(r_hat - r)) <= 1e-8


def test_fit_from_trajectory_log(rng):
    r = rng.standard_normal((4, 4))
    log = TrajectoryLog(4)
    s = rng.standard_normal(4)
    log.start(s)
    for _ in range(30):
        a = rng.standard_normal(4)
        s = s + r @ a
        log.append(a, s)
    assert np.max(np.abs(linalg.fit_response_lstsq(log) - r)) <= 1e-8


def test_fit_single_transition_rank_error(rng):
    with pytest.raises(RankError) as exc:
        linalg.fit_response_lstsq(_transitions(np.eye(3), 1, rng))
    assert exc.value.rank == 1 and exc.value.required == 3


def test_fit_zero_actions_rank_error():
    data = TransitionSet(np.ones((10, 3)), np.zeros((10, 3)), np.ones((10, 3)))
    with pytest.raises(RankError) as exc:
        linalg.fit_response_lstsq(data)
    assert exc.value.rank == 0


def test_fit_noise_error_shrinks():
    m = 5
    r = np.random.default_rng(0).standard_normal((m, m))
    errs = []
    for factor in (10, 100, 1000):
        e = 0.0
        for seed in range(10):
            rng = np.random.default_rng([seed, factor])
            e += np.max(np.abs(linalg.fit_response_lstsq(_transitions(r, factor * m, rng, noise=0.1)) - r))
        errs.append(e / 10)
    assert errs[0] > errs[1] > errs[2]


# -- matrix files -------------------------------------------------------------


def test_matrix_roundtrip(tmp_path, rng):
    m = rng.standard_normal((4, 7)) * 10.0 ** rng.uniform(-20, 20, (4, 7))
    linalg.write_matrix(tmp_path / "m.txt", m)
    np.testing.assert_array_equal(linalg.read_matrix(tmp_path / "m.txt"), m)
    assert (tmp_path / "m.txt").read_text().splitlines()[0] == "4 7"


@pytest.mark.parametrize(
    "text, line",
    [("2 2\n1 2\n3\n", 3), ("2 x\n", 1), ("2 2\n1 2\n", 3), ("1 2\n1 nan\n", 1), ("1 1\n1\n5\n", 3)],
)
def test_matrix_parse_errors(tmp_path, text, line):
    (tmp_path / "bad.txt").write_text(text)
    with pytest.raises(ParseError) as exc:
        linalg.read_matrix(tmp_path / "bad.txt")
    assert exc.value.line == line
    assert f"line {line}" in str(exc.value)
