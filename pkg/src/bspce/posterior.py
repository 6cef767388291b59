"""Posterior analytics for Bayesian PCEs: Sobol indices, moments, prediction, error metrics."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .polybasis import MultiIndexBasis, evaluate_design
from .sampler import PosteriorDraws

__all__ = [
    "SobolReport",
    "PCEMoments",
    "PredictiveSample",
    "coefficient_draws",
    "sobol_indices",
    "pce_moments",
    "predict",
    "rmse",
    "location_norms",
]


def coefficient_draws(draws):
    """``(C, basis_indices)`` from PosteriorDraws or a plain ``S x M`` array.

    Coefficient columns are named ``c_<basis index>``; the first one must be
    the constant term.
    """
    if isinstance(draws, PosteriorDraws):
        cols = [(i, n) for i, n in enumerate(draws.names) if n.startswith("c_")]
        C = draws.values[:, [i for i, _ in cols]]
        idx = np.array([int(n[2:]) for _, n in cols])
    else:
        C = np.atleast_2d(np.asarray(draws, dtype=float))
        idx = np.arange(C.shape[1])
    if idx.size == 0 or idx[0] != 0:
        raise ValueError("the first coefficient must be the constant term c_0")
    return C, idx


def _interval(x, level, axis=0):
    a = (1.0 - level) / 2.0
    return np.quantile(x, [a, 1.0 - a], axis=axis)


@dataclass
class SobolReport:
    """Per-term Sobol indices summarized over posterior draws.

    Arrays are aligned with ``basis_indices`` (non-constant terms only).
    ``ranking`` lists basis indices by decreasing posterior mean.
    """

    basis_indices: np.ndarray
    multi_indices: np.ndarray | None
    per_draw: np.ndarray
    mean: np.ndarray
    ci95: np.ndarray
    ci99: np.ndarray
    ranking: np.ndarray
    cumulative: np.ndarray
    n_excluded: int

    def top(self, k: int) -> np.ndarray:
        return self.ranking[:k]

    def rows(self):
        pos = {b: i for i, b in enumerate(self.basis_indices)}
        for b in self.ranking:
            i = pos[b]
            deg = list(self.multi_indices[i]) if self.multi_indices is not None else []
            yield b, deg, self.mean[i], self.ci95[0, i], self.ci95[1, i], self.ci99[0, i], self.ci99[1, i]

    def to_csv(self, path) -> None:
        N = self.multi_indices.shape[1] if self.multi_indices is not None else 0
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["index"] + [f"deg_{j + 1}" for j in range(N)]
                       + ["mean", "ci95_low", "ci95_high", "ci99_low", "ci99_high"])
            for b, deg, m, lo, hi, lo99, hi99 in self.rows():
                w.writerow([int(b)] + [int(v) for v in deg] + [repr(float(v)) for v in (m, lo, hi, lo99, hi99)])


def sobol_indices(draws, basis: MultiIndexBasis | None = None) -> SobolReport:
    """Squared-coefficient share of surrogate variance for every non-constant term.

    Draws whose non-constant coefficients are all zero are dropped and counted
    in ``n_excluded``. Ranking ties go to the lower basis index.
    """
    C, idx = coefficient_draws(draws)
    sq = C[:, 1:] ** 2
    total = sq.sum(axis=1)
    keep = total > 0
    n_excluded = int((~keep).sum())
    if not keep.any():
        raise ValueError("every draw has all non-constant coefficients equal to zero")
    S = sq[keep] / total[keep, None]
    mean = S.mean(axis=0)
    b_idx = idx[1:]
    order = np.lexsort((b_idx, -mean))
    mi = basis.multi_indices[b_idx] if basis is not None else None
    return SobolReport(
        basis_indices=b_idx, multi_indices=mi, per_draw=S, mean=mean,
        ci95=_interval(S, 0.95), ci99=_interval(S, 0.99),
        ranking=b_idx[order], cumulative=np.cumsum(mean[order]), n_excluded=n_excluded,
    )


@dataclass
class PCEMoments:
    mean: float
    mean_ci95: tuple
    sd: float
    sd_ci95: tuple
    mean_draws: np.ndarray
    sd_draws: np.ndarray


def pce_moments(draws) -> PCEMoments:
    """Posterior mean and SD of the surrogate output, using orthonormality."""
    C, _ = coefficient_draws(draws)
    if C.shape[0] == 0:
        raise ValueError("no draws")
    m = C[:, 0]
    sd = np.sqrt(np.sum(C[:, 1:] ** 2, axis=1))
    return PCEMoments(float(m.mean()), tuple(_interval(m, 0.95)), float(sd.mean()),
                      tuple(_interval(sd, 0.95)), m, sd)


@dataclass
class PredictiveSample:
    """``mu[s, k]`` is draw ``s`` of the surrogate at test point ``k``."""

    mu: np.ndarray
    noisy: np.ndarray | None = None

    @property
    def mean(self) -> np.ndarray:
        return self.mu.mean(axis=0)

    def interval(self, level: float = 0.95, noisy: bool = False) -> np.ndarray:
        src = self.noisy if noisy else self.mu
        if src is None:
            raise ValueError("no noise-inclusive draws")
        return _interval(src, level)


def predict(draws, basis: MultiIndexBasis, inputs, *, standardized: bool = False,
            noise: bool = False, seed=None) -> PredictiveSample:
    """Surrogate draws at ``inputs`` (raw units unless ``standardized``)."""
    C, idx = coefficient_draws(draws)
    if idx.max() >= basis.M:
        raise ValueError("draws reference basis terms beyond the given basis")
    Psi = evaluate_design(basis.subset(idx), inputs, standardized=standardized)
    mu = C @ Psi.T
    noisy = None
    if noise:
        if not isinstance(draws, PosteriorDraws):
            raise ValueError("noise-inclusive prediction needs sigma draws")
        rng = np.random.default_rng(seed)
        noisy = mu + rng.standard_normal(mu.shape) * draws["sigma"][:, None]
    return PredictiveSample(mu, noisy)


def rmse(predictive, y_test) -> float:
    """Average over draws of the per-draw root-mean-square error."""
    mu = predictive.mu if isinstance(predictive, PredictiveSample) else np.atleast_2d(predictive)
    y = np.asarray(y_test, dtype=float).ravel()
    if y.size == 0:
        raise ValueError("empty test set")
    if mu.shape[1] != y.size:
        raise ValueError(f"{mu.shape[1]} predictions for {y.size} test responses")
    return float(np.mean(np.sqrt(np.mean((mu - y) ** 2, axis=1))))


def location_norms(mean_err, sd_err):
    """``||v||_2 / L`` for the mean and SD error vectors over ``L`` locations."""
    a = np.asarray(mean_err, dtype=float).ravel()
    b = np.asarray(sd_err, dtype=float).ravel()
    if a.size < 1 or a.size != b.size:
        raise ValueError("need two error vectors of equal, nonzero length")
    return float(np.linalg.norm(a) / a.size), float(np.linalg.norm(b) / b.size)
