import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bspce.detsolve import DeterministicFit, SolveError, solve_exact, solve_least_squares, solve_ridge


def well_posed(rng, T, M):
    A = rng.standard_normal((T, M))
    A[:, 0] = 1.0
    return A, rng.standard_normal(T)


def test_exact_recovers_solution():
    rng = np.random.default_rng(0)
    A, _ = well_posed(rng, 6, 6)
    c = rng.standard_normal(6)
    fit = solve_exact(A, A @ c)
    assert np.allclose(fit.coefficients, c, atol=1e-12)
    assert fit.residual_norm < 1e-12


def test_exact_needs_square():
    with pytest.raises(SolveError):
        solve_exact(np.ones((4, 3)), np.ones(4))


def test_exact_singular_raises():
    A = np.ones((3, 3))
    with pytest.raises(SolveError, match="singular"):
        solve_exact(A, np.ones(3))


def test_least_squares_matches_numpy():
    rng = np.random.default_rng(1)
    A, y = well_posed(rng, 40, 7)
    ref, *_ = np.linalg.lstsq(A, y, rcond=None)
    assert np.allclose(solve_least_squares(A, y).coefficients, ref, atol=1e-12)


def test_least_squares_underdetermined_raises():
    with pytest.raises(SolveError, match="ridge"):
        solve_least_squares(np.ones((2, 3)), np.ones(2))


def test_ridge_matches_closed_form():
    rng = np.random.default_rng(2)
    A, y = well_posed(rng, 30, 8)
    lam = 0.7
    ref = np.linalg.solve(A.T @ A + lam * np.eye(8), A.T @ y)
    assert np.allclose(solve_ridge(A, y, lam).coefficients, ref, atol=1e-12)


def test_ridge_handles_underdetermined_with_positive_lambda():
    rng = np.random.default_rng(3)
    A, y = well_posed(rng, 5, 12)
    fit = solve_ridge(A, y, 1e-3)
    assert np.all(np.isfinite(fit.coefficients))
    with pytest.raises(SolveError):
        solve_ridge(A, y, 0.0)


def test_ridge_rejects_negative_lambda():
    with pytest.raises(SolveError):
        solve_ridge(np.eye(2), np.ones(2), -1.0)


def test_shape_mismatch_and_nonfinite():
    with pytest.raises(SolveError):
        solve_least_squares(np.ones((3, 2)), np.ones(4))
    A = np.eye(2)
    A[0, 0] = np.nan
    with pytest.raises(SolveError):
        solve_exact(A, np.ones(2))


def test_nesting_on_random_square_problems():
    rng = np.random.default_rng(4)
    for _ in range(50):
        M = int(rng.integers(3, 30))
        A, y = well_posed(rng, M, M)
        a = solve_exact(A, y).coefficients
        b = solve_least_squares(A, y).coefficients
        c = solve_ridge(A, y, 0.0).coefficients
        scale = np.linalg.norm(a)
        assert np.linalg.norm(a - b) / scale < 1e-10
        assert np.linalg.norm(a - c) / scale < 1e-10


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 12), st.integers(0, 10_000), st.floats(1e-6, 1e3))
def test_ridge_shrinks_norm(M, seed, lam):
    rng = np.random.default_rng(seed)
    A, y = well_posed(rng, M + 5, M)
    ls = solve_least_squares(A, y).coefficients
    rg = solve_ridge(A, y, lam).coefficients
    assert np.linalg.norm(rg) <= np.linalg.norm(ls) * (1 + 1e-9)


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 10), st.integers(0, 10_000))
def test_least_squares_residual_orthogonal(M, seed):
    rng = np.random.default_rng(seed)
    A, y = well_posed(rng, 3 * M, M)
    fit = solve_least_squares(A, y)
    r = y - A @ fit.coefficients
    assert np.max(np.abs(A.T @ r)) < 1e-9 * max(1.0, np.linalg.norm(A) * np.linalg.norm(y))


def test_fit_json_round_trip():
    rng = np.random.default_rng(5)
    A, y = well_posed(rng, 10, 4)
    fit = solve_ridge(A, y, 0.5)
    back = DeterministicFit.from_dict(json.loads(fit.to_json()))
    assert np.array_equal(back.coefficients, fit.coefficients)
    assert back.method == "ridge" and back.lam == 0.5
    assert np.allclose(back.predict(A), A @ fit.coefficients)
