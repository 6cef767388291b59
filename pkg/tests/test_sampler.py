import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from bspce import _backend
from bspce.sampler import (CallableTarget, PosteriorDraws, SamplerConfig, SamplerError, compute_diagnostics,
                           ess_bulk, ess_mean, mcse_mean, sample, split_rhat, warmup_windows)


class GaussianLogDensity:
    def __init__(self, mean, cov):
        self.mean = np.asarray(mean, dtype=float)
        self.prec = np.linalg.inv(cov)

    def __call__(self, x):
        d = x - self.mean
        g = -self.prec @ d
        return 0.5 * float(d @ g), g


def gaussian_target(mean, cov):
    return CallableTarget(GaussianLogDensity(mean, cov), len(mean))


def test_warmup_windows_default():
    assert warmup_windows(1000) == [175, 225, 325, 900]
    assert warmup_windows(10) == []


@settings(max_examples=50, deadline=None)
@given(st.integers(150, 5000))
def test_warmup_windows_cover_slow_phase(warmup):
    ends = warmup_windows(warmup)
    assert ends, "long warmups always adapt the metric"
    assert ends[-1] == warmup - int(0.10 * warmup)
    sizes = np.diff([int(0.15 * warmup)] + ends)
    assert np.all(sizes >= 25)
    assert np.all(sizes[1:-1] == 2 * sizes[:-2]) if sizes.size > 2 else True


def test_config_validation():
    with pytest.raises(ValueError):
        SamplerConfig(warmup=10, iterations=10)
    with pytest.raises(ValueError):
        SamplerConfig(init="given")
    with pytest.raises(KeyError):
        SamplerConfig.from_dict({"chains": 2, "nope": 1})
    cfg = SamplerConfig(chains=3, seed=9)
    assert SamplerConfig.from_dict(cfg.to_dict()) == cfg


def test_correlated_gaussian_recovered():
    cov = np.array([[1.0, 0.8], [0.8, 2.0]])
    draws, diag = sample(gaussian_target([1.0, -2.0], cov),
                         SamplerConfig(chains=4, iterations=2000, warmup=1000, seed=11))
    X = draws.values
    assert X.shape == (4000, 2)
    assert np.allclose(X.mean(axis=0), [1.0, -2.0], atol=0.1)
    assert np.allclose(np.cov(X.T), cov, atol=0.15)
    assert diag.rhat_max < 1.01
    assert diag.divergences == 0
    # the averaged final step is a little smaller than the adapted iterates
    assert np.all((diag.accept_mean > 0.75) & (diag.accept_mean < 0.97))


def test_badly_scaled_gaussian_adapts_metric():
    sd = np.array([0.01, 1.0, 100.0])
    draws, diag = sample(gaussian_target(np.zeros(3), np.diag(sd ** 2)),
                         SamplerConfig(chains=2, iterations=1500, warmup=1000, seed=3))
    assert np.allclose(draws.values.std(axis=0) / sd, 1.0, atol=0.15)
    inv_metric = draws.stats["inv_metric"]
    assert np.allclose(np.sqrt(inv_metric) / sd, 1.0, atol=0.35)
    assert diag.rhat_max < 1.02


def test_deterministic_given_seed():
    t = gaussian_target(np.zeros(3), np.eye(3))
    cfg = SamplerConfig(chains=2, iterations=300, warmup=150, seed=42)
    a, _ = sample(t, cfg)
    b, _ = sample(t, cfg)
    assert np.array_equal(a.values, b.values)
    c, _ = sample(t, SamplerConfig(chains=2, iterations=300, warmup=150, seed=43))
    assert not np.array_equal(a.values, c.values)


def test_parallel_chains_match_serial():
    t = gaussian_target(np.zeros(2), np.eye(2))
    a, _ = sample(t, SamplerConfig(chains=2, iterations=200, warmup=100, seed=1))
    b, _ = sample(t, SamplerConfig(chains=2, iterations=200, warmup=100, seed=1, n_jobs=2))
    assert np.array_equal(a.values, b.values)


@pytest.mark.skipif("cython" not in _backend.available_backends(), reason="compiled core not built")
def test_backends_give_same_transitions():
    # whole chains drift apart through roundoff amplification, so compare the cores step by step
    from bspce import _core, _core_py
    from bspce.model import LogDensityModel
    rng = np.random.default_rng(0)
    Psi = rng.standard_normal((30, 6))
    Psi[:, 0] = 1
    y = Psi @ rng.standard_normal(6) + 0.2 * rng.standard_normal(30)
    py = LogDensityModel(Psi, y, backend="python").density
    cy = LogDensityModel(Psi, y, backend="cython").density
    q = rng.uniform(-2, 2, LogDensityModel(Psi, y).dim)
    inv = np.ones(q.size)
    for _ in range(40):
        lp, g = py.logp_grad(q)
        nrm, un = rng.standard_normal(q.size), rng.random(2 ** 10 + 22)
        a = _core_py.nuts_transition(py, q, lp, g, inv, 0.05, 10, nrm, un)
        b = _core.nuts_transition(cy, q, lp, g, inv, 0.05, 10, nrm, un)
        assert a[4:7] == b[4:7]
        assert np.allclose(a[0], b[0], rtol=1e-10, atol=1e-12)
        assert math.isclose(a[3], b[3], rel_tol=1e-9, abs_tol=1e-12)
        q = a[0]


def test_funnel_reports_divergences():
    def funnel(x):
        v, z = x[0], x[1:]
        s2 = math.exp(v)
        lp = -v * v / 18.0 - 0.5 * float(z @ z) / s2 - 0.5 * z.size * v
        g = np.empty_like(x)
        g[0] = -v / 9.0 + 0.5 * float(z @ z) / s2 - 0.5 * z.size
        g[1:] = -z / s2
        return lp, g
    draws, diag = sample(CallableTarget(funnel, 10), SamplerConfig(chains=2, iterations=800, warmup=400, seed=2))
    assert diag.divergences > 0
    assert draws.divergent.sum() == diag.divergences


def test_nonfinite_everywhere_raises():
    t = CallableTarget(lambda x: (-math.inf, np.zeros_like(x)), 2)
    with pytest.raises(SamplerError):
        sample(t, SamplerConfig(chains=1, iterations=20, warmup=10))


def test_given_init_checked():
    t = gaussian_target(np.zeros(2), np.eye(2))
    with pytest.raises(SamplerError):
        sample(t, SamplerConfig(chains=1, iterations=20, warmup=10, init="given", init_point=(0.0, 0.0, 0.0)))
    draws, _ = sample(t, SamplerConfig(chains=1, iterations=60, warmup=30, init="given", init_point=(3.0, 3.0)))
    assert draws.n_draws == 30


def test_draws_csv_round_trip(tmp_path):
    t = gaussian_target(np.zeros(2), np.eye(2))
    draws, diag = sample(t, SamplerConfig(chains=2, iterations=200, warmup=100, seed=0))
    draws.to_csv(tmp_path / "d.csv")
    draws.stats_to_csv(tmp_path / "s.csv")
    back = PosteriorDraws.from_csv(tmp_path / "d.csv", tmp_path / "s.csv")
    assert back.names == draws.names
    assert np.array_equal(back.values, draws.values)
    assert np.array_equal(back.lp, draws.lp)
    assert np.array_equal(back.divergent, draws.divergent)
    again = compute_diagnostics(back)
    assert np.array_equal(again.rhat, diag.rhat)
    assert again.max_depth_hits == diag.max_depth_hits


def test_split_rhat_detects_disagreement():
    rng = np.random.default_rng(0)
    good = rng.standard_normal((4, 1000))
    assert split_rhat(good) < 1.01
    bad = good + np.array([0, 0, 0, 2.0])[:, None]
    assert split_rhat(bad) > 1.1
    drift = good + np.linspace(0, 3, 1000)
    assert split_rhat(drift) > 1.1


def test_rhat_catches_scale_mismatch():
    rng = np.random.default_rng(1)
    x = rng.standard_normal((2, 2000))
    x[1] *= 3
    assert split_rhat(x) > 1.05


def test_ess_of_iid_and_ar1():
    rng = np.random.default_rng(2)
    iid = rng.standard_normal((4, 2000))
    assert 0.85 < ess_bulk(iid) / 8000 < 1.15
    rho = 0.8
    x = np.zeros((4, 4000))
    e = rng.standard_normal(x.shape)
    for t in range(1, 4000):
        x[:, t] = rho * x[:, t - 1] + math.sqrt(1 - rho ** 2) * e[:, t]
    theory = 16000 * (1 - rho) / (1 + rho)
    assert 0.8 < ess_mean(x) / theory < 1.25
    assert math.isclose(mcse_mean(x), x.std(ddof=1) / math.sqrt(ess_mean(x)))


def test_diagnostics_json_fields():
    rng = np.random.default_rng(3)
    d = compute_diagnostics(rng.standard_normal((2, 500, 3)), names=["a", "b", "c"])
    doc = d.to_dict()
    assert set(doc["parameters"]) == {"a", "b", "c"}
    assert doc["divergences"] == 0
    assert d.converged()
    with pytest.raises(ValueError):
        compute_diagnostics(rng.standard_normal((1, 3, 1)))


def test_ks_on_standard_normal():
    draws, diag = sample(gaussian_target(np.zeros(1), np.eye(1)),
                         SamplerConfig(chains=4, iterations=6000, warmup=1000, seed=8))
    assert stats.kstest(draws.values[:, 0], "norm").statistic < 0.02


def test_quantile_indicators_calibrated():
    # coverage of the MCSE-based interval for P(x < q), over independent runs
    qs = np.array([-1.5, 0.0, 1.0])
    z = []
    for seed in range(12):
        draws, _ = sample(gaussian_target(np.zeros(1), np.eye(1)),
                          SamplerConfig(chains=1, iterations=2000, warmup=1000, seed=seed))
        x = draws.values[:, 0]
        for q in qs:
            ind = (x < q).astype(float)
            z.append((ind.mean() - stats.norm.cdf(q)) / mcse_mean(ind[None, :]))
    z = np.abs(np.array(z))
    assert np.mean(z < 2) > 0.85
    assert np.max(z) < 4.5
