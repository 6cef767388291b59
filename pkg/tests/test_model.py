import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats
from scipy.special import expit

from bspce import _backend
from bspce.model import (LogDensityModel, R2D2Config, beta_log_density, beta_moments,
                         default_sigma_scale, dirichlet_log_density, dirichlet_moments,
                         inverse_stick_breaking, stick_breaking)
from bspce.sampler import SamplerConfig, sample


def problem(T, M, seed=0):
    rng = np.random.default_rng(seed)
    Psi = rng.standard_normal((T, M))
    Psi[:, 0] = 1.0
    y = Psi @ rng.standard_normal(M) + 0.3 * rng.standard_normal(T)
    return Psi, y


def oracle_logp(model, u):
    """Unnormalized log posterior in unconstrained space from scipy densities."""
    K = model.K
    par = model.constrain(u)
    c = np.concatenate([[par["c0"]], par["c"]])
    sigma = par["sigma"]
    lp = stats.norm.logpdf(model.y, model.Psi @ c, sigma).sum()
    lp += stats.norm.logpdf(par["c0"], model.c0_mean, model.c0_sd)
    lp += stats.halfnorm.logpdf(sigma, scale=model.sigma_scale)
    if model.prior == "r2d2":
        a1, a2 = model.config.shapes
        lp += stats.norm.logpdf(u[1:K + 1]).sum()
        lp += stats.beta.logpdf(par["R2"], a1, a2)
        if K > 1:
            lp += stats.dirichlet.logpdf(par["phi"], model.theta)
    return lp + model.log_jacobian(u)


@pytest.mark.parametrize("prior", ["r2d2", "flat"])
@pytest.mark.parametrize("M", [2, 5, 12])
def test_log_density_matches_oracle_up_to_constant(prior, M):
    Psi, y = problem(20, M)
    model = LogDensityModel(Psi, y, prior, R2D2Config(theta=0.7))
    rng = np.random.default_rng(1)
    pts = rng.standard_normal((6, model.dim)) * 0.7
    ours = np.array([model.log_posterior(u) for u in pts])
    ref = np.array([oracle_logp(model, u) for u in pts])
    assert np.allclose(ours - ours[0], ref - ref[0], atol=1e-8)


def fd_gradient(f, u, h=1e-6):
    g = np.empty_like(u)
    for i in range(u.size):
        e = np.zeros_like(u)
        e[i] = h
        g[i] = (f(u + e) - f(u - e)) / (2 * h)
    return g


@pytest.mark.parametrize("prior", ["r2d2", "flat"])
@pytest.mark.parametrize("M", [5, 50])
def test_gradient_against_finite_differences(prior, M):
    Psi, y = problem(30, M, seed=M)
    model = LogDensityModel(Psi, y, prior)
    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(100):
        u = rng.standard_normal(model.dim) * 0.5
        g = model.grad_log_posterior(u)
        fd = fd_gradient(model.log_posterior, u)
        worst = max(worst, np.linalg.norm(g - fd) / max(np.linalg.norm(fd), 1.0))
    assert worst < 1e-5


@pytest.mark.parametrize("backend", _backend.available_backends())
def test_backends_agree(backend):
    Psi, y = problem(25, 9)
    ref = LogDensityModel(Psi, y, "r2d2", backend="python")
    other = ref.with_backend(backend)
    u = np.random.default_rng(0).standard_normal(ref.dim)
    lp0, g0 = ref.logp_grad(u)
    lp1, g1 = other.logp_grad(u)
    assert math.isclose(lp0, lp1, rel_tol=1e-12)
    assert np.allclose(g0, g1, rtol=1e-12, atol=1e-12)


@pytest.mark.parametrize("prior", ["r2d2", "flat"])
def test_log_jacobian_matches_numerical_determinant(prior):
    Psi, y = problem(15, 6)
    model = LogDensityModel(Psi, y, prior)
    rng = np.random.default_rng(2)
    for _ in range(5):
        u = rng.standard_normal(model.dim)
        J = np.column_stack([fd_gradient(lambda v, i=i: model.transform(v)[i], u) for i in range(model.dim)]).T
        assert math.isclose(np.linalg.slogdet(J)[1], model.log_jacobian(u), abs_tol=1e-6)


@settings(max_examples=50, deadline=None)
@given(st.integers(2, 9), st.integers(0, 10_000))
def test_unconstrain_round_trip(M, seed):
    Psi, y = problem(12, M, seed=seed)
    model = LogDensityModel(Psi, y, "r2d2")
    u = np.random.default_rng(seed).standard_normal(model.dim)
    p = model.constrain(u)
    back = model.unconstrain(p["c0"], p["c"], p["sigma"], p["R2"], p["phi"])
    assert np.allclose(back, u, atol=1e-8)


@settings(max_examples=50, deadline=None)
@given(st.integers(2, 30), st.integers(0, 10_000))
def test_stick_breaking_simplex_and_inverse(K, seed):
    ys = np.random.default_rng(seed).standard_normal(K - 1) * 2
    phi, _ = stick_breaking(ys)
    assert phi.shape == (K,)
    assert np.all(phi > 0) and math.isclose(phi.sum(), 1.0, rel_tol=1e-12)
    assert np.allclose(inverse_stick_breaking(phi), ys, atol=1e-8)


def test_stick_breaking_origin_is_uniform():
    phi, _ = stick_breaking(np.zeros(6))
    assert np.allclose(phi, 1 / 7)


def test_stick_breaking_jacobian():
    ys = np.array([0.3, -1.2, 0.8])
    J = np.column_stack([fd_gradient(lambda v, i=i: stick_breaking(v)[0][i], ys) for i in range(3)]).T
    assert math.isclose(np.linalg.slogdet(J)[1], stick_breaking(ys)[1], abs_tol=1e-7)


def test_param_names_and_dims():
    Psi, y = problem(10, 4)
    r = LogDensityModel(Psi, y, "r2d2", basis_indices=(0, 3, 7, 9))
    assert r.dim == 8
    assert r.param_names == ["c_0", "c_3", "c_7", "c_9", "sigma", "R2", "phi_3", "phi_7", "phi_9"]
    f = LogDensityModel(Psi, y, "flat")
    assert f.dim == 5
    assert f.param_names == ["c_0", "c_1", "c_2", "c_3", "sigma"]


def test_constant_column_required():
    Psi, y = problem(10, 3)
    Psi[:, 0] = 2.0
    with pytest.raises(ValueError, match="constant"):
        LogDensityModel(Psi, y)


def test_intercept_prior_defaults():
    Psi, y = problem(10, 3)
    m = LogDensityModel(Psi, y)
    assert math.isclose(m.c0_mean, y.mean())
    assert math.isclose(m.c0_sd, y.std(ddof=1))
    assert math.isclose(m.sigma_scale, default_sigma_scale(y, 0.5))
    assert math.isclose(m.sigma_scale, y.std(ddof=1) * math.sqrt(0.5))


def test_beta_and_dirichlet_helpers():
    assert beta_moments(0.5, 2.0) == (0.5, 0.25 / 3)
    x = np.linspace(0.05, 0.95, 7)
    assert np.allclose(beta_log_density(x, 0.3, 4.0), stats.beta.logpdf(x, 1.2, 2.8))
    phi = np.array([0.2, 0.5, 0.3])
    th = np.array([0.5, 1.0, 2.0])
    assert math.isclose(dirichlet_log_density(phi, th), stats.dirichlet.logpdf(phi, th))
    m, v = dirichlet_moments(th, 2)
    assert math.isclose(m, 2 / 3.5) and math.isclose(v, m * (1 - m) / 4.5)
    with pytest.raises(ValueError):
        beta_log_density(1.0, 0.5, 2.0)


def test_config_round_trip():
    cfg = R2D2Config(zeta=0.9, nu=10.0, theta=0.5, sigma_scale=2.0)
    assert R2D2Config.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(KeyError):
        R2D2Config.from_dict({"zeta": 0.5, "bogus": 1})
    with pytest.raises(ValueError):
        R2D2Config(zeta=1.5)


def test_flat_mode_is_least_squares_at_mode():
    Psi, y = problem(40, 6)
    model = LogDensityModel(Psi, y, "flat")
    u = model.mle_point()
    c_ls, *_ = np.linalg.lstsq(Psi, y, rcond=None)
    assert np.allclose(model.constrain(u)["c"], c_ls[1:])
    # the likelihood part of the gradient vanishes at the least-squares point
    g = model.grad_log_posterior(u)
    assert np.max(np.abs(g[1:model.K + 1])) < 1e-8


def test_mle_point_needs_overdetermined():
    Psi, y = problem(5, 6)
    with pytest.raises(ValueError):
        LogDensityModel(Psi, y, "r2d2").mle_point()


def test_prior_is_recovered_without_information():
    # zero non-constant columns leave z, R2 and phi at their prior
    rng = np.random.default_rng(0)
    T, M = 30, 4
    Psi = np.zeros((T, M))
    Psi[:, 0] = 1.0
    y = rng.standard_normal(T)
    cfg = R2D2Config(zeta=0.3, nu=4.0, theta=1.0)
    model = LogDensityModel(Psi, y, "r2d2", cfg)
    draws, diag = sample(model, SamplerConfig(chains=2, iterations=3000, warmup=1000, seed=5))
    a1, a2 = cfg.shapes
    assert stats.kstest(draws["R2"], stats.beta(a1, a2).cdf).statistic < 0.05
    mean_phi = np.mean([draws[f"phi_{i}"] for i in range(1, M)], axis=1)
    assert np.allclose(mean_phi, 1 / 3, atol=0.03)
    Z = draws.unconstrained[:, 1:M]
    assert abs(Z.mean()) < 0.1 and abs(Z.std() - 1) < 0.1
    # prior variance phi_i tau2 sigma2 splits the explained variance: the ratio below is
    # sum_i phi_i z_i^2, whose mean is exactly one
    tau2 = draws["R2"] / (1 - draws["R2"])
    ratio = np.sum(draws.coefficients()[:, 1:] ** 2, axis=1) / (draws["sigma"] ** 2 * tau2)
    assert abs(ratio.mean() - 1) < 0.1
    assert diag.divergences < 20


def test_model_pickles():
    import pickle
    Psi, y = problem(10, 4)
    m = LogDensityModel(Psi, y)
    u = np.zeros(m.dim)
    back = pickle.loads(pickle.dumps(m))
    assert back.log_posterior(u) == m.log_posterior(u)


def test_transform_values():
    Psi, y = problem(10, 3)
    m = LogDensityModel(Psi, y, "r2d2")
    u = np.arange(m.dim, dtype=float) * 0.1
    t = m.transform(u)
    assert math.isclose(t[m.K + 2], expit(u[m.K + 2]))
