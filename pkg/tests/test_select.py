import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bspce import _backend
from bspce.bench import sobol_g
from bspce.model import LogDensityModel
from bspce.polybasis import build_basis, evaluate_design, gauss_rule, moments_analytic
from bspce.posterior import sobol_indices
from bspce.sampler import SamplerConfig, mcse_mean, sample
from bspce.select import (SelectionResult, adaptive_degree_search, lasso_entry_order, refit_sparse,
                          select_projpred, select_sobol)


def orthonormal_design(T, M, seed):
    rng = np.random.default_rng(seed)
    A = np.column_stack([np.ones(T), rng.standard_normal((T, M - 1))])
    Q, _ = np.linalg.qr(A)
    Q *= math.sqrt(T) * np.sign(Q[0, 0])
    Q[:, 0] = 1.0
    return Q


def sparse_truth(M, k, seed):
    rng = np.random.default_rng(seed)
    c = np.zeros(M)
    c[0] = rng.normal()
    support = np.sort(rng.choice(np.arange(1, M), k, replace=False))
    c[support] = rng.choice([-1, 1], k) * rng.uniform(0.5, 3.0, k)
    return c, support


def test_sobol_selection_examples():
    rep = sobol_indices(np.array([[1.0, math.sqrt(0.5), math.sqrt(0.3), math.sqrt(0.2)]]))
    sel = select_sobol(rep, 2)
    assert sel.indices.tolist() == [0, 1, 2]
    assert sel.method == "sobol-greedy" and sel.terms.tolist() == [1, 2]
    tie = select_sobol(sobol_indices(np.array([[0.0, 1, 2, 2, 1]])), 3)
    assert tie.indices.tolist() == [0, 2, 3, 1]


def test_sobol_selection_bounds():
    rep = sobol_indices(np.array([[1.0, 1, 2]]))
    with pytest.raises(ValueError):
        select_sobol(rep, 3)
    with pytest.raises(ValueError):
        select_sobol(rep, 0)


def test_sobol_selection_deterministic():
    C = np.random.default_rng(0).standard_normal((50, 12))
    a = select_sobol(sobol_indices(C), 5)
    b = select_sobol(sobol_indices(C.copy()), 5)
    assert a.to_json() == b.to_json()


def test_selection_result_checks_and_round_trip(tmp_path):
    with pytest.raises(ValueError):
        SelectionResult("projpred", 2, [1, 2, 3])
    with pytest.raises(ValueError):
        SelectionResult("projpred", 2, [0, 2, 2])
    sel = SelectionResult("projpred", 2, [0, 5, 3], np.array([[0, 0], [2, 0], [0, 1]]), {"lambda_max": 1.5})
    sel.save(tmp_path / "s.json")
    back = SelectionResult.load(tmp_path / "s.json")
    assert back.to_dict() == sel.to_dict()


def test_lasso_path_matches_brute_force_entry():
    # an orthonormal design decouples coordinates: entry order follows |X^T y|
    T, M = 50, 10
    Psi = orthonormal_design(T, M, 1)
    c, support = sparse_truth(M, 4, 2)
    order, info = lasso_entry_order(Psi[:, 1:], Psi @ c)
    expect = support[np.argsort(-np.abs(c[support]), kind="stable")] - 1
    assert order[:4].tolist() == expect.tolist()
    assert set(order[:4].tolist()) == set((support - 1).tolist())
    assert np.all(np.diff(info["entry_step"][:4]) >= 0)


@pytest.mark.parametrize("backend", _backend.available_backends())
def test_lasso_backends_agree(backend):
    rng = np.random.default_rng(3)
    X = rng.standard_normal((40, 15))
    y = X[:, [2, 7, 11]] @ [3.0, -2.0, 1.0] + 0.1 * rng.standard_normal(40)
    a, ia = lasso_entry_order(X, y, backend="python")
    b, ib = lasso_entry_order(X, y, backend=backend)
    assert a.tolist() == b.tolist()
    assert a[:3].tolist() == [2, 7, 11]


def test_lasso_constant_columns_never_enter():
    X = np.column_stack([np.ones(20), np.arange(20.0)])
    order, _ = lasso_entry_order(X, np.arange(20.0) * 2)
    assert order.tolist() == [1]


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.floats(1e-3, 1e3))
def test_projpred_order_invariant_to_positive_scaling(seed, scale):
    rng = np.random.default_rng(seed)
    Psi = np.column_stack([np.ones(30), rng.standard_normal((30, 7))])
    C = rng.standard_normal((20, 8))
    a = select_projpred(C, Psi, 4)
    b = select_projpred(C * scale, Psi, 4)
    assert a.indices.tolist() == b.indices.tolist()


@pytest.mark.parametrize("seed", range(8))
def test_both_methods_recover_true_support(seed):
    M = int(np.random.default_rng(seed).integers(5, 13))
    k = int(np.random.default_rng(seed + 100).integers(1, M))
    Psi = orthonormal_design(4 * M, M, seed)
    c, support = sparse_truth(M, k, seed)
    draws = c + 1e-3 * np.random.default_rng(seed).standard_normal((40, M))
    s = select_sobol(sobol_indices(draws), k)
    p = select_projpred(draws, Psi, k)
    assert set(s.terms.tolist()) == set(support.tolist())
    assert set(p.terms.tolist()) == set(support.tolist())


def test_projpred_full_selection_is_least_squares():
    rng = np.random.default_rng(5)
    Psi = np.column_stack([np.ones(30), rng.standard_normal((30, 5))])
    C = rng.standard_normal((25, 6))
    sel = select_projpred(C, Psi, 5)
    assert sorted(sel.indices.tolist()) == list(range(6))
    center = Psi @ C.mean(axis=0)
    ls = np.linalg.lstsq(Psi[:, sel.indices], center, rcond=None)[0]
    assert np.allclose(sel.path["projection"], ls)
    assert sel.path["projection_rmse"] < 1e-10


def test_projpred_reports_exhausted_path():
    Psi = np.column_stack([np.ones(10), np.arange(10.0), np.zeros(10), np.zeros(10)])
    C = np.tile([1.0, 2.0, 0.0, 0.0], (4, 1))
    with pytest.warns(RuntimeWarning):
        sel = select_projpred(C, Psi, 3)
    assert sel.incomplete and sel.indices.tolist() == [0, 1]


def test_projpred_validates_inputs():
    with pytest.raises(ValueError):
        select_projpred(np.ones((3, 4)), np.ones((5, 3)), 2)
    with pytest.raises(ValueError):
        select_projpred(np.ones((3, 4)), np.ones((5, 4)), 4)


def test_refit_identity_selection_matches_reference():
    rng = np.random.default_rng(6)
    Psi = np.column_stack([np.ones(40), rng.standard_normal((40, 4))])
    y = Psi @ [1.0, 2.0, 0.0, -1.0, 0.5] + 0.3 * rng.standard_normal(40)
    cfg = SamplerConfig(chains=2, iterations=2000, warmup=1000, seed=3)
    ref, _ = sample(LogDensityModel(Psi, y), cfg)
    sel = SelectionResult("projpred", 4, np.arange(5))
    refit, diag, _ = refit_sparse(sel, Psi, y, sampler_cfg=SamplerConfig(chains=2, iterations=2000, warmup=1000, seed=9))
    assert refit.names == ref.names
    for name in ref.names:
        a, b = ref[name], refit[name]
        se = math.hypot(mcse_mean(ref.by_chain(a)), mcse_mean(refit.by_chain(b)))
        assert abs(a.mean() - b.mean()) < 3 * se + 1e-12, name
    assert diag.rhat_max < 1.02


def test_refit_names_carry_basis_indices():
    rng = np.random.default_rng(7)
    Psi = np.column_stack([np.ones(25), rng.standard_normal((25, 6))])
    y = Psi[:, 4] * 2 + 0.1 * rng.standard_normal(25)
    sel = SelectionResult("sobol-greedy", 2, [0, 4, 2])
    draws, _, model = refit_sparse(sel, Psi, y, sampler_cfg=SamplerConfig(chains=1, iterations=300, warmup=150))
    assert [n for n in draws.names if n.startswith("c_")] == ["c_0", "c_4", "c_2"]
    assert model.M == 3
    with pytest.raises(ValueError):
        refit_sparse(SelectionResult("x", 1, [0, 9]), Psi, y)


def even_only(alpha):
    return float(all(a % 2 == 0 for a in alpha))


def test_adaptive_search_accepts_connected_terms():
    accepted, _ = adaptive_degree_search(lambda a: 1.0, 2, 3)
    assert len(accepted) == 9
    accepted, examined = adaptive_degree_search(lambda a: float(a[1] == 0), 2, 4)
    assert accepted == [(1, 0), (2, 0), (3, 0), (4, 0)]
    assert (0, 1) in examined and (1, 1) not in examined


def test_adaptive_search_blocked_by_missing_odd_degrees():
    # every important term of an f(w) = f(1 - w) symmetric function is even in each input,
    # so degree-one terms carry nothing and the search never reaches degree two
    accepted, examined = adaptive_degree_search(even_only, 4, 10)
    assert accepted == []
    assert examined == [(1, 0, 0, 0), (0, 1, 0, 0), (0, 0, 1, 0), (0, 0, 0, 1)]
    wanted = [a for a in itertools.product(range(0, 11, 2), repeat=4) if 0 < sum(a) <= 10]
    assert not set(wanted) & set(accepted)


def test_sobol_g_expansion_has_only_even_terms():
    # quadrature projection of a 2-D g-function onto the Legendre basis on [0, 1]^2
    d = 6
    m = moments_analytic("uniform", 24, a=0.0, b=1.0)
    nodes, weights = gauss_rule(m, 12)
    basis = build_basis([m, m], d)
    g = np.meshgrid(nodes, nodes, indexing="ij")
    W = np.outer(weights, weights).ravel()
    Z = np.column_stack([x.ravel() for x in g])
    Psi = evaluate_design(basis, Z, standardized=True)
    f = sobol_g(m.standardization.inverse(Z), a=[1.0, 2.0])
    c = Psi.T @ (W * f)
    odd = np.any(basis.multi_indices % 2 == 1, axis=1)
    assert np.max(np.abs(c[odd])) < 1e-12
    assert np.abs(c[~odd][1:]).max() > 1e-2
    pos = {tuple(a): i for i, a in enumerate(basis.multi_indices.tolist())}
    accepted, _ = adaptive_degree_search(lambda a: c[pos[a]] ** 2, 2, d, threshold=1e-20)
    assert accepted == []
