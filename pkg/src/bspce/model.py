"""
Bayesian PCE regression model: Gaussian likelihood with an R2D2 or flat prior.

The posterior is sampled in an unconstrained space. With ``K = M - 1``
non-constant basis terms the R2D2 layout is::

    u = [z0, z_1..z_K, log sigma, logit R2, y_1..y_{K-1}]        (2M entries)

and the flat layout is ``[z0, c_1..c_K, log sigma]`` (M + 1 entries). The
coefficients are non-centered: ``c_i = z_i * sqrt(phi_i * tau2) * sigma`` with
``tau2 = R2 / (1 - R2)``, and the simplex ``phi`` comes from stick-breaking
with logistic offsets ``log(K - k)`` so that ``y = 0`` maps to the uniform
simplex.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from scipy.special import expit, gammaln, logit

from . import _backend

__all__ = [
    "R2D2Config",
    "LogDensityModel",
    "default_sigma_scale",
    "beta_log_density",
    "beta_moments",
    "dirichlet_log_density",
    "dirichlet_moments",
    "stick_breaking",
    "inverse_stick_breaking",
]


def beta_log_density(x, zeta: float, nu: float):
    """Log density of the Beta distribution in mean-precision form.

    Shapes are ``a1 = zeta * nu`` and ``a2 = (1 - zeta) * nu``.
    """
    a1, a2 = _beta_shapes(zeta, nu)
    x = np.asarray(x, dtype=float)
    if np.any((x <= 0) | (x >= 1)):
        raise ValueError("Beta density needs x in (0, 1)")
    out = (a1 - 1) * np.log(x) + (a2 - 1) * np.log1p(-x) - (gammaln(a1) + gammaln(a2) - gammaln(a1 + a2))
    return float(out) if out.ndim == 0 else out


def beta_moments(zeta: float, nu: float):
    """Mean and variance ``(zeta, zeta (1 - zeta) / (1 + nu))``."""
    _beta_shapes(zeta, nu)
    return zeta, zeta * (1 - zeta) / (1 + nu)


def _beta_shapes(zeta, nu):
    if not (0 < zeta < 1) or not nu > 0:
        raise ValueError(f"need 0 < zeta < 1 and nu > 0, got zeta={zeta}, nu={nu}")
    return zeta * nu, (1 - zeta) * nu


def dirichlet_log_density(x, theta) -> float:
    """Log Dirichlet density of a point on the simplex."""
    x = np.asarray(x, dtype=float)
    theta = np.broadcast_to(np.asarray(theta, dtype=float), x.shape)
    if np.any(theta <= 0):
        raise ValueError("Dirichlet concentration must be positive")
    if np.any(x < 0) or abs(x.sum() - 1) > 1e-10:
        raise ValueError("point is not on the simplex")
    log_b = float(np.sum(gammaln(theta)) - gammaln(theta.sum()))
    with np.errstate(divide="ignore"):
        terms = np.where(theta == 1.0, 0.0, (theta - 1) * np.log(x))
    return float(np.sum(terms) - log_b)


def dirichlet_moments(theta, i: int):
    """Mean and variance of component ``i``."""
    theta = np.asarray(theta, dtype=float)
    if np.any(theta <= 0):
        raise ValueError("Dirichlet concentration must be positive")
    t0 = theta.sum()
    m = theta[i] / t0
    return m, m * (1 - m) / (1 + t0)


def default_sigma_scale(y, zeta: float) -> float:
    """Half-normal scale for sigma: ``sd(y) * sqrt(1 - zeta)``."""
    y = np.asarray(y, dtype=float)
    if y.size < 2:
        raise ValueError("need at least 2 responses")
    sd = float(np.std(y, ddof=1))
    if not sd > 0:
        raise ValueError("responses have zero variance")
    return sd * math.sqrt(1.0 - zeta)


def stick_breaking(ystick):
    """Map ``(..., K-1)`` unconstrained values to ``(..., K)`` simplex points.

    Returns ``(phi, log_jacobian)``; the Jacobian is that of the first
    ``K - 1`` simplex coordinates with respect to ``ystick``.
    """
    ystick = np.asarray(ystick, dtype=float)
    km1 = ystick.shape[-1]
    K = km1 + 1
    offsets = np.log(K - np.arange(1, K))
    x = ystick - offsets
    log_z = -np.logaddexp(0.0, -x)
    log_1mz = -np.logaddexp(0.0, x)
    zeros = np.zeros(ystick.shape[:-1] + (1,))
    remaining = np.concatenate([zeros, np.cumsum(log_1mz, axis=-1)], axis=-1)
    logphi = np.concatenate([remaining[..., :-1] + log_z, remaining[..., -1:]], axis=-1)
    log_jac = np.sum(remaining[..., :-1] + log_z + log_1mz, axis=-1)
    return np.exp(logphi), log_jac


def inverse_stick_breaking(phi):
    """Inverse of :func:`stick_breaking` for points strictly inside the simplex."""
    phi = np.asarray(phi, dtype=float)
    K = phi.shape[-1]
    remaining = 1.0 - np.concatenate([np.zeros(phi.shape[:-1] + (1,)),
                                      np.cumsum(phi[..., :-2], axis=-1)], axis=-1)
    z = phi[..., :-1] / remaining
    return logit(z) + np.log(K - np.arange(1, K))


@dataclass(frozen=True)
class R2D2Config:
    """Hyperparameters of the R2D2 prior and the intercept/noise priors.

    ``c0_mean``/``c0_sd`` default to the empirical mean and standard
    deviation of the responses; ``sigma_scale="auto"`` uses
    :func:`default_sigma_scale`.
    """

    zeta: float = 0.5
    nu: float = 2.0
    theta: float | Sequence[float] = 1.0
    c0_mean: float | None = None
    c0_sd: float | None = None
    sigma_scale: float | str = "auto"

    def __post_init__(self):
        _beta_shapes(self.zeta, self.nu)
        th = np.asarray(self.theta, dtype=float)
        if np.any(th <= 0):
            raise ValueError("Dirichlet concentration must be positive")
        if self.c0_sd is not None and not self.c0_sd > 0:
            raise ValueError("c0_sd must be positive")
        if self.sigma_scale != "auto" and not float(self.sigma_scale) > 0:
            raise ValueError("sigma_scale must be positive or 'auto'")

    @property
    def shapes(self):
        return _beta_shapes(self.zeta, self.nu)

    def theta_vector(self, K: int) -> np.ndarray:
        th = np.asarray(self.theta, dtype=float)
        if th.ndim == 0:
            return np.full(K, float(th))
        if th.shape != (K,):
            raise ValueError(f"theta has length {th.size}, expected {K}")
        return th.copy()

    def to_dict(self) -> dict:
        th = np.asarray(self.theta, dtype=float)
        out = {"zeta": self.zeta, "nu": self.nu,
               "sigma_scale": self.sigma_scale, "c0_mean": self.c0_mean, "c0_sd": self.c0_sd}
        if th.ndim == 0:
            out["theta_scalar"] = float(th)
        else:
            out["theta"] = th.tolist()
        return out

    @classmethod
    def from_dict(cls, doc: dict) -> "R2D2Config":
        known = {"zeta", "nu", "theta_scalar", "theta", "sigma_scale", "c0_mean", "c0_sd", "prior_mode"}
        unknown = set(doc) - known
        if unknown:
            raise KeyError(f"unknown prior keys: {sorted(unknown)}")
        theta = doc.get("theta", doc.get("theta_scalar", 1.0))
        ss = doc.get("sigma_scale", "auto")
        return cls(zeta=float(doc.get("zeta", 0.5)), nu=float(doc.get("nu", 2.0)), theta=theta,
                   c0_mean=doc.get("c0_mean"), c0_sd=doc.get("c0_sd"),
                   sigma_scale=ss if ss == "auto" else float(ss))


@dataclass
class LogDensityModel:
    """Unnormalized log posterior of a Bayesian PCE on a fixed design.

    Parameters
    ----------
    Psi : ndarray, shape (T, M)
        Design matrix whose column 0 is the constant polynomial.
    y : ndarray, shape (T,)
    prior : {"r2d2", "flat"}
    config : R2D2Config
    backend : str, optional
        Kernel backend name; defaults to the active one.
    basis_indices : sequence of int, optional
        Basis index of each design column, used to name parameters; the
        default is ``0..M-1``. The first entry must be 0.
    """

    Psi: np.ndarray
    y: np.ndarray
    prior: str = "r2d2"
    config: R2D2Config = field(default_factory=R2D2Config)
    backend: str | None = None
    basis_indices: tuple | None = None

    def __post_init__(self):
        self.Psi = np.ascontiguousarray(self.Psi, dtype=float)
        self.y = np.ascontiguousarray(self.y, dtype=float).ravel()
        if self.Psi.ndim != 2 or self.Psi.shape[0] != self.y.size:
            raise ValueError(f"design {self.Psi.shape} does not match {self.y.size} responses")
        if self.prior not in ("r2d2", "flat"):
            raise ValueError(f"unknown prior mode {self.prior!r}")
        if not np.allclose(self.Psi[:, 0], 1.0):
            raise ValueError("column 0 of the design must be the constant polynomial")
        self.M = self.Psi.shape[1]
        self.K = self.M - 1
        bi = tuple(range(self.M)) if self.basis_indices is None else tuple(int(i) for i in self.basis_indices)
        if len(bi) != self.M or bi[0] != 0 or len(set(bi)) != self.M:
            raise ValueError("basis_indices must be unique, start with 0 and match the design columns")
        self.basis_indices = bi
        if self.prior == "r2d2" and self.K < 1:
            raise ValueError("the R2D2 prior needs at least one non-constant term")
        cfg = self.config
        y_sd = float(np.std(self.y, ddof=1)) if self.y.size > 1 else 0.0
        self.c0_mean = float(np.mean(self.y)) if cfg.c0_mean is None else float(cfg.c0_mean)
        self.c0_sd = y_sd if cfg.c0_sd is None else float(cfg.c0_sd)
        if not self.c0_sd > 0:
            raise ValueError("responses have zero variance; set c0_sd explicitly")
        self.sigma_scale = (default_sigma_scale(self.y, cfg.zeta) if cfg.sigma_scale == "auto"
                            else float(cfg.sigma_scale))
        self.theta = cfg.theta_vector(self.K) if self.K > 0 else np.zeros(0)
        self.density = self._make_density(_backend.get_core(self.backend))

    def _make_density(self, core):
        Psi1 = np.ascontiguousarray(self.Psi[:, 1:])
        if self.prior == "r2d2":
            a1, a2 = self.config.shapes
            return core.R2D2Density(Psi1, self.y, self.c0_mean, self.c0_sd,
                                    self.sigma_scale, a1, a2, self.theta)
        return core.FlatDensity(Psi1, self.y, self.c0_mean, self.c0_sd, self.sigma_scale)

    def __getstate__(self):
        state = dict(self.__dict__)
        state.pop("density", None)
        return state

    def __setstate__(self, state):
        self.__dict__.update(state)
        self.density = self._make_density(_backend.get_core(self.backend))

    def with_backend(self, name: str) -> "LogDensityModel":
        return replace(self, backend=name)

    @property
    def dim(self) -> int:
        return 2 * self.M if self.prior == "r2d2" else self.M + 1

    @property
    def param_names(self) -> list:
        names = [f"c_{i}" for i in self.basis_indices] + ["sigma"]
        if self.prior == "r2d2":
            names += ["R2"] + [f"phi_{i}" for i in self.basis_indices[1:]]
        return names

    # -- density ---------------------------------------------------------
    def _check(self, u):
        u = np.asarray(u, dtype=float)
        if u.shape != (self.dim,):
            raise ValueError(f"expected unconstrained vector of length {self.dim}, got {u.shape}")
        if not np.all(np.isfinite(u)):
            raise ValueError("unconstrained vector must be finite")
        return u

    def logp_grad(self, u):
        u = self._check(u)
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            lp, g = self.density.logp_grad(u)
        if not math.isfinite(lp):
            return -math.inf, np.asarray(g)
        return lp, np.asarray(g)

    def log_posterior(self, u) -> float:
        return self.logp_grad(u)[0]

    def grad_log_posterior(self, u) -> np.ndarray:
        return self.logp_grad(u)[1]

    # -- transforms ------------------------------------------------------
    def constrain(self, u) -> dict:
        """Constrained parameters at one unconstrained point."""
        u = self._check(u)
        row = self.constrain_draws(u[None, :])[0]
        K = self.K
        out = {"c0": row[0], "c": row[1:self.M], "sigma": row[self.M]}
        if self.prior == "r2d2":
            out["R2"] = row[self.M + 1]
            out["phi"] = row[self.M + 2:self.M + 2 + K]
        return out

    def constrain_draws(self, U) -> np.ndarray:
        """Rows of unconstrained draws to rows ordered like :attr:`param_names`."""
        U = np.atleast_2d(np.asarray(U, dtype=float))
        K = self.K
        c0 = self.c0_mean + self.c0_sd * U[:, 0]
        log_sigma = U[:, K + 1]
        sigma = np.exp(log_sigma)
        if self.prior == "flat":
            return np.column_stack([c0, U[:, 1:K + 1], sigma])
        logit_r2 = U[:, K + 2]
        if K > 1:
            phi, _ = stick_breaking(U[:, K + 3:])
        else:
            phi = np.ones((U.shape[0], 1))
        with np.errstate(divide="ignore"):
            scale = np.exp(0.5 * (np.log(phi) + logit_r2[:, None]) + log_sigma[:, None])
        c = U[:, 1:K + 1] * scale
        return np.column_stack([c0, c, sigma, expit(logit_r2), phi])

    def unconstrain(self, c0, c, sigma, R2=None, phi=None) -> np.ndarray:
        """Unconstrained point for the given constrained values."""
        K = self.K
        c = np.asarray(c, dtype=float)
        u = np.empty(self.dim)
        u[0] = (c0 - self.c0_mean) / self.c0_sd
        u[K + 1] = math.log(sigma)
        if self.prior == "flat":
            u[1:K + 1] = c
            return u
        phi = np.asarray(phi, dtype=float)
        u[K + 2] = float(logit(R2))
        u[1:K + 1] = c / (np.sqrt(phi * R2 / (1 - R2)) * sigma)
        if K > 1:
            u[K + 3:] = inverse_stick_breaking(phi)
        return u

    def transform(self, u) -> np.ndarray:
        """Square map ``u -> (c0, z, sigma, R2, phi_1..phi_{K-1})`` used for Jacobian checks."""
        u = self._check(u)
        K = self.K
        c0 = self.c0_mean + self.c0_sd * u[0]
        sigma = math.exp(u[K + 1])
        if self.prior == "flat":
            return np.concatenate([[c0], u[1:K + 1], [sigma]])
        r2 = float(expit(u[K + 2]))
        phi = stick_breaking(u[K + 3:])[0][:-1] if K > 1 else np.zeros(0)
        return np.concatenate([[c0], u[1:K + 1], [sigma, r2], phi])

    def log_jacobian(self, u) -> float:
        """``log |det d transform(u) / du|``."""
        u = self._check(u)
        K = self.K
        out = math.log(self.c0_sd) + u[K + 1]
        if self.prior == "flat":
            return out
        lr = u[K + 2]
        out += -np.logaddexp(0.0, -lr) - np.logaddexp(0.0, lr)
        if K > 1:
            out += float(stick_breaking(u[K + 3:])[1])
        return float(out)

    # -- initialization --------------------------------------------------
    def mle_point(self) -> np.ndarray:
        """Unconstrained point at the least-squares fit (needs ``T > M``)."""
        T, M = self.Psi.shape
        if T <= M:
            raise ValueError("maximum-likelihood initialization needs more training points than terms")
        c, *_ = np.linalg.lstsq(self.Psi, self.y, rcond=None)
        resid = self.y - self.Psi @ c
        sigma = max(float(np.sqrt(resid @ resid / (T - M))), 1e-8 * max(self.c0_sd, 1.0))
        if self.prior == "flat":
            return self.unconstrain(c[0], c[1:], sigma)
        var_mu = float(c[1:] @ c[1:])
        r2 = float(np.clip(var_mu / (var_mu + sigma ** 2), 1e-6, 1 - 1e-6))
        w = c[1:] ** 2 + 1e-12 * max(var_mu, 1e-300)
        phi = w / w.sum()
        return self.unconstrain(c[0], c[1:], sigma, r2, phi)
