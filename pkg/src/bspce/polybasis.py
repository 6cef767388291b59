"""
Data-driven orthonormal polynomial bases (arbitrary polynomial chaos).

Univariate polynomials are built from raw moments by solving the Hankel
moment system for monic polynomials and normalizing them with the
moment-based inner product. Multivariate bases are total-degree tensor
products of the univariate sets.

All moment work happens on standardized variables: bounded inputs are mapped
affinely onto [-1, 1], unbounded ones to zero mean and unit variance. The raw
high-order moments of unscaled data make the Hankel matrix hopeless to
factor.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import mpmath
import numpy as np

from . import _backend

__all__ = [
    "BasisError",
    "Standardization",
    "MomentSequence",
    "UnivariatePolySet",
    "MultiIndexBasis",
    "moments_from_samples",
    "moments_analytic",
    "build_univariate",
    "enumerate_multi_indices",
    "basis_size",
    "build_basis",
    "evaluate_design",
    "gauss_nodes",
    "gauss_rule",
]

#: Hankel matrices with a larger 2-norm condition number are refused.
MAX_HANKEL_CONDITION = 1e14

# working precision (decimal digits) of the Hankel solves
_MP_DPS = 50


class BasisError(ValueError):
    """Raised when an orthonormal basis cannot be constructed."""


@dataclass(frozen=True)
class Standardization:
    """Affine map ``x_std = (x - shift) / scale`` from raw to standardized inputs."""

    shift: float = 0.0
    scale: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "shift", float(self.shift))
        object.__setattr__(self, "scale", float(self.scale))
        if not self.scale > 0:
            raise BasisError("standardization scale must be positive")

    def forward(self, x):
        return (np.asarray(x, dtype=float) - self.shift) / self.scale

    def inverse(self, x_std):
        return np.asarray(x_std, dtype=float) * self.scale + self.shift


@dataclass(frozen=True)
class MomentSequence:
    """Raw moments ``mu_0 .. mu_{2d}`` of one standardized input variable.

    Parameters
    ----------
    moments : tuple of float
        Raw moments, ``moments[k] = E[x^k]`` on the standardized variable.
    source : str
        ``"analytic:<family>"`` or ``"empirical"``.
    standardization : Standardization
        Map from the raw input to the variable the moments describe.
    dim : int
        Dimension index this sequence belongs to (informational).
    """

    moments: tuple
    source: str = "empirical"
    standardization: Standardization = field(default_factory=Standardization)
    dim: int = 0

    def __post_init__(self):
        mu = tuple(float(m) for m in self.moments)
        if len(mu) < 1 or abs(mu[0] - 1.0) > 1e-12:
            raise BasisError("moment sequence must start with mu_0 = 1")
        object.__setattr__(self, "moments", mu)

    @property
    def max_degree(self) -> int:
        """Largest polynomial degree the sequence supports."""
        return (len(self.moments) - 1) // 2

    def hankel(self, d: int) -> np.ndarray:
        """The ``(d+1) x (d+1)`` Hankel matrix ``H[p, q] = mu_{p+q}``."""
        if 2 * d >= len(self.moments):
            raise BasisError(f"need moments up to order {2 * d}, have {len(self.moments) - 1}")
        mu = np.asarray(self.moments)
        idx = np.add.outer(np.arange(d + 1), np.arange(d + 1))
        return mu[idx]

    def hankel_condition(self, d: int) -> float:
        return float(np.linalg.cond(self.hankel(d)))


def _accurate_mean(values: np.ndarray) -> float:
    # fsum is exactly rounded, which is at least as good as compensated summation
    return math.fsum(values.tolist()) / values.size


def moments_from_samples(samples, max_degree: int, dim: int = 0) -> MomentSequence:
    """Empirical raw moments of samples rescaled to [-1, 1].

    Parameters
    ----------
    samples : array_like
        One-dimensional sample of the input variable.
    max_degree : int
        Highest polynomial degree the moments must support; moments up to
        order ``2 * max_degree`` are computed.

    Returns
    -------
    MomentSequence
        With ``standardization`` set to the min/max rescaling that was applied.
    """
    x = np.asarray(samples, dtype=float).ravel()
    if x.size == 0:
        raise BasisError("samples must be nonempty")
    if max_degree < 1:
        raise BasisError("max_degree must be >= 1")
    if not np.all(np.isfinite(x)):
        raise BasisError("samples contain non-finite values")
    lo, hi = float(x.min()), float(x.max())
    if hi - lo <= 0.0 or np.var(x) == 0.0:
        raise BasisError("degenerate input distribution")
    std = Standardization(shift=0.5 * (lo + hi), scale=0.5 * (hi - lo))
    xs = std.forward(x)
    mu = []
    power = np.ones_like(xs)
    for k in range(2 * max_degree + 1):
        mu.append(1.0 if k == 0 else _accurate_mean(power))
        power = power * xs
    return MomentSequence(tuple(mu), source="empirical", standardization=std, dim=dim)


def _double_factorial_odd(k: int) -> int:
    out = 1
    for j in range(1, k, 2):
        out *= j
    return out


def moments_analytic(family: str, max_degree: int, *, a: float = -1.0, b: float = 1.0,
                     mean: float = 0.0, sd: float = 1.0, dim: int = 0) -> MomentSequence:
    """Exact raw moments of a standardized parametric family.

    ``uniform`` on ``[a, b]`` is standardized to [-1, 1]; ``gaussian`` with
    ``mean`` and ``sd`` is standardized to zero mean and unit variance.
    """
    if max_degree < 0:
        raise BasisError("max_degree must be >= 0")
    n = 2 * max_degree + 1
    if family == "uniform":
        if not b > a:
            raise BasisError(f"uniform family needs b > a, got [{a}, {b}]")
        mu = [0.0 if k % 2 else 1.0 / (k + 1) for k in range(n)]
        std = Standardization(shift=0.5 * (a + b), scale=0.5 * (b - a))
    elif family in ("gaussian", "normal"):
        if not sd > 0:
            raise BasisError(f"gaussian family needs sd > 0, got {sd}")
        mu = [0.0 if k % 2 else float(_double_factorial_odd(k)) for k in range(n)]
        std = Standardization(shift=mean, scale=sd)
        family = "gaussian"
    else:
        raise BasisError(f"unknown family {family!r}")
    return MomentSequence(tuple(mu), source=f"analytic:{family}", standardization=std, dim=dim)


@dataclass(frozen=True)
class UnivariatePolySet:
    """Orthonormal polynomials ``phi^(0) .. phi^(d)`` in monomial form.

    ``coeffs[alpha, i]`` is the coefficient of ``x**i`` in ``phi^(alpha)``;
    the matrix is lower triangular. ``norms[alpha]`` is the squared norm of
    the monic polynomial before normalization.
    """

    coeffs: np.ndarray
    norms: np.ndarray
    moments: MomentSequence
    condition: float = 1.0

    @property
    def degree(self) -> int:
        return self.coeffs.shape[0] - 1

    def __call__(self, x, alpha: int | None = None):
        """Evaluate ``phi^(alpha)`` (or all of them) at standardized points by Horner."""
        x = np.asarray(x, dtype=float)
        if alpha is not None:
            return _horner(self.coeffs[alpha, : alpha + 1], x)
        return np.stack([_horner(self.coeffs[k, : k + 1], x) for k in range(self.degree + 1)], axis=-1)

    def vandermonde(self, x) -> np.ndarray:
        """All polynomials at ``x`` via the monomial table: shape ``x.shape + (d+1,)``."""
        x = np.asarray(x, dtype=float)
        powers = x[..., None] ** np.arange(self.degree + 1)
        return powers @ self.coeffs.T

    def gram(self) -> np.ndarray:
        """Moment-based Gram matrix ``<phi^(p), phi^(q)>``; the identity in exact arithmetic."""
        d = self.degree
        H = self.moments.hankel(d)
        return self.coeffs @ H @ self.coeffs.T


def _horner(c: np.ndarray, x: np.ndarray) -> np.ndarray:
    out = np.full(np.shape(x), c[-1], dtype=float)
    for ci in c[-2::-1]:
        out = out * x + ci
    return out


def build_univariate(moments: MomentSequence, d: int) -> UnivariatePolySet:
    """Orthonormal polynomials up to degree ``d`` from raw moments.

    For each degree ``alpha`` the monic polynomial is the solution of the
    Hankel system whose first ``alpha`` rows enforce orthogonality to all
    lower monomials and whose last row fixes the leading coefficient to one.
    The solves run in extended precision and the result is rounded once.

    Raises
    ------
    BasisError
        If some leading Hankel block is not positive definite, if the Hankel
        matrix is too ill-conditioned, or if a norm comes out non-positive.
    """
    if d < 0:
        raise BasisError("degree must be >= 0")
    if d > moments.max_degree:
        raise BasisError(f"degree {d} needs moments up to order {2 * d}")
    cond = moments.hankel_condition(d) if d > 0 else 1.0
    if not np.isfinite(cond) or cond > MAX_HANKEL_CONDITION:
        raise BasisError(f"Hankel condition number {cond:.3e} exceeds {MAX_HANKEL_CONDITION:.0e}")
    coeffs = np.zeros((d + 1, d + 1))
    norms = np.zeros(d + 1)
    with mpmath.workdps(_MP_DPS):
        mu = [mpmath.mpf(m) for m in moments.moments]
        for alpha in range(d + 1):
            if alpha == 0:
                monic = [mpmath.mpf(1)]
            else:
                H = mpmath.matrix(alpha, alpha)
                rhs = mpmath.matrix(alpha, 1)
                for p in range(alpha):
                    rhs[p] = -mu[p + alpha]
                    for q in range(alpha):
                        H[p, q] = mu[p + q]
                try:
                    mpmath.cholesky(H)
                except ValueError:
                    raise BasisError(f"Hankel matrix not positive definite at order {alpha - 1}") from None
                sol = mpmath.cholesky_solve(H, rhs)
                monic = [sol[i] for i in range(alpha)] + [mpmath.mpf(1)]
            kappa = mpmath.fsum(monic[i] * monic[j] * mu[i + j]
                                for i in range(alpha + 1) for j in range(alpha + 1))
            if kappa <= 0:
                raise BasisError("moment matrix numerically singular")
            root = mpmath.sqrt(kappa)
            coeffs[alpha, : alpha + 1] = [float(m / root) for m in monic]
            norms[alpha] = float(kappa)
    return UnivariatePolySet(coeffs=coeffs, norms=norms, moments=moments, condition=cond)


def basis_size(N: int, d: int) -> int:
    """Number of total-degree multi-indices, ``(N + d)! / (N! d!)``."""
    if N < 1 or d < 0:
        raise BasisError("need N >= 1 and d >= 0")
    return math.comb(N + d, d)


def enumerate_multi_indices(N: int, d: int, max_terms: int = 10_000_000) -> np.ndarray:
    """All ``alpha`` in N^N with ``sum(alpha) <= d`` in graded lexicographic order.

    Within one total degree the indices are sorted lexicographically
    descending on ``(alpha_1, ..., alpha_N)``, so ``(1, 0, 0)`` precedes
    ``(0, 1, 0)``. Row 0 is all zeros.
    """
    M = basis_size(N, d)
    if M > max_terms:
        raise BasisError(f"basis with {M} terms exceeds the limit of {max_terms}")
    out = np.zeros((M, N), dtype=np.int64)
    row = 1
    for total in range(1, d + 1):
        for alpha in _compositions(total, N):
            out[row] = alpha
            row += 1
    return out


def _compositions(total: int, parts: int):
    # lexicographically descending compositions of `total` into `parts` nonnegative ints
    if parts == 1:
        yield (total,)
        return
    for first in range(total, -1, -1):
        for rest in _compositions(total - first, parts - 1):
            yield (first,) + rest


@dataclass(frozen=True)
class MultiIndexBasis:
    """Total-degree tensor-product orthonormal basis.

    Attributes
    ----------
    univariate : tuple of UnivariatePolySet
        One orthonormal set per input dimension, each of degree ``degree``.
    multi_indices : ndarray of int, shape (M, N)
        Degrees per dimension for each basis polynomial, zero row first.
    """

    univariate: tuple
    multi_indices: np.ndarray
    degree: int

    @property
    def N(self) -> int:
        return len(self.univariate)

    @property
    def M(self) -> int:
        return self.multi_indices.shape[0]

    def __len__(self) -> int:
        return self.M

    def standardize(self, inputs) -> np.ndarray:
        X = np.atleast_2d(np.asarray(inputs, dtype=float))
        if X.shape[1] != self.N:
            raise ValueError(f"inputs have {X.shape[1]} columns, basis has {self.N} dimensions")
        return np.column_stack([u.moments.standardization.forward(X[:, j])
                                for j, u in enumerate(self.univariate)])

    def subset(self, indices) -> "MultiIndexBasis":
        """Basis restricted to the given rows of ``multi_indices``."""
        idx = np.asarray(indices, dtype=int)
        return MultiIndexBasis(self.univariate, self.multi_indices[idx].copy(), self.degree)

    def to_dict(self) -> dict:
        dims = []
        for u in self.univariate:
            st = u.moments.standardization
            dims.append({
                "source": u.moments.source,
                "moments": [float.hex(m) for m in u.moments.moments],
                "shift": float.hex(st.shift),
                "scale": float.hex(st.scale),
                "coefficients": [[float.hex(v) for v in row] for row in u.coeffs],
                "norms": [float.hex(v) for v in u.norms],
                "hankel_condition": u.condition,
            })
        return {
            "format": "bspce-basis/1",
            "N": self.N,
            "degree": self.degree,
            "M": self.M,
            "dimensions": dims,
            "multi_indices": self.multi_indices.tolist(),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "MultiIndexBasis":
        if doc.get("format") != "bspce-basis/1":
            raise BasisError(f"unsupported basis format {doc.get('format')!r}")
        uni = []
        for j, dd in enumerate(doc["dimensions"]):
            std = Standardization(float.fromhex(dd["shift"]), float.fromhex(dd["scale"]))
            ms = MomentSequence(tuple(float.fromhex(m) for m in dd["moments"]),
                                source=dd["source"], standardization=std, dim=j)
            coeffs = np.array([[float.fromhex(v) for v in row] for row in dd["coefficients"]])
            norms = np.array([float.fromhex(v) for v in dd["norms"]])
            uni.append(UnivariatePolySet(coeffs, norms, ms, float(dd.get("hankel_condition", 1.0))))
        mi = np.asarray(doc["multi_indices"], dtype=np.int64).reshape(-1, len(uni))
        if mi.shape[0] != doc["M"]:
            raise BasisError("multi-index count does not match M")
        return cls(tuple(uni), mi, int(doc["degree"]))

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1)

    @classmethod
    def load(cls, path) -> "MultiIndexBasis":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def build_basis(moments: Sequence[MomentSequence], d: int) -> MultiIndexBasis:
    """Total-degree-``d`` basis over the given per-dimension moment sequences."""
    uni = tuple(build_univariate(m, d) for m in moments)
    return MultiIndexBasis(uni, enumerate_multi_indices(len(uni), d), d)


def evaluate_design(basis: MultiIndexBasis, inputs, standardized: bool = False) -> np.ndarray:
    """Design matrix ``Psi[k, i] = prod_j phi_j^(alpha_ij)(omega_kj)``.

    Parameters
    ----------
    inputs : array_like, shape (T, N)
        Raw inputs, mapped through each dimension's standardization unless
        ``standardized`` is true.
    """
    X = np.atleast_2d(np.asarray(inputs, dtype=float))
    if X.shape[1] != basis.N:
        raise ValueError(f"inputs have {X.shape[1]} columns, basis has {basis.N} dimensions")
    Xs = X if standardized else basis.standardize(X)
    tables = np.stack([u.vandermonde(Xs[:, j]) for j, u in enumerate(basis.univariate)], axis=0)
    return _backend.core.design_product(np.ascontiguousarray(tables),
                                        np.ascontiguousarray(basis.multi_indices))


def _recurrence(polys: UnivariatePolySet, n: int):
    # three-term recurrence coefficients from moment inner products of the orthonormal set
    with mpmath.workdps(_MP_DPS):
        mu = [mpmath.mpf(m) for m in polys.moments.moments]
        C = [[mpmath.mpf(v) for v in row] for row in polys.coeffs]

        def inner_x(p, q):
            # <x phi_p, phi_q>
            return mpmath.fsum(C[p][i] * C[q][j] * mu[i + j + 1]
                               for i in range(p + 1) for j in range(q + 1))

        a = [float(inner_x(k, k)) for k in range(n)]
        b = [float(inner_x(k, k - 1)) for k in range(1, n)]
    return np.array(a), np.array(b)


def gauss_rule(moments: MomentSequence, n: int):
    """Gauss nodes and probability weights for ``n`` points (Golub-Welsch).

    Returns nodes sorted ascending (standardized variable) and weights summing
    to one.
    """
    if n < 1:
        raise BasisError("need n >= 1 nodes")
    if 2 * n > len(moments.moments) - 1:
        raise BasisError(f"{n} nodes need moments up to order {2 * n}")
    try:
        polys = build_univariate(moments, n)
    except BasisError as exc:
        raise BasisError(f"quadrature construction failed: {exc}") from exc
    a, b = _recurrence(polys, n)
    if np.any(b <= 0):
        raise BasisError("quadrature construction failed: non-positive recurrence coefficient")
    J = np.diag(a) + np.diag(b, 1) + np.diag(b, -1)
    nodes, vecs = np.linalg.eigh(J)
    weights = vecs[0] ** 2
    order = np.argsort(nodes)
    nodes, weights = nodes[order], weights[order]
    resid = np.abs(polys(nodes, alpha=n))
    scale = np.abs(polys.coeffs[n]).sum()
    if np.any(resid > 1e-8 * scale) or (n > 1 and np.min(np.diff(nodes)) < 1e-12):
        raise BasisError("quadrature construction failed: roots not simple and real")
    return nodes, weights / weights.sum()


def gauss_nodes(moments: MomentSequence, n: int) -> np.ndarray:
    """The ``n`` roots of ``phi^(n)``, ascending, on the standardized variable."""
    return gauss_rule(moments, n)[0]
