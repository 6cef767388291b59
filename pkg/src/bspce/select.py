"""
Variable selection for sparse PCEs and refitting of the chosen subsets.

Two selectors work from a fitted reference model. Greedy Sobol selection keeps
the terms with the largest posterior-mean Sobol indices. Projective selection
projects the reference model's mean prediction at the training inputs onto
sub-models, ordering terms by their entry along an l1 path. The constant term
is always kept and is not counted in ``M_sel``.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import _backend
from .model import LogDensityModel, R2D2Config
from .posterior import SobolReport, coefficient_draws
from .sampler import SamplerConfig, sample

__all__ = [
    "SelectionResult",
    "select_sobol",
    "select_projpred",
    "lasso_entry_order",
    "refit_sparse",
    "adaptive_degree_search",
]


@dataclass
class SelectionResult:
    """Selected basis indices in selection order, constant term first."""

    method: str
    M_sel: int
    indices: np.ndarray
    multi_indices: np.ndarray | None = None
    path: dict = field(default_factory=dict)
    incomplete: bool = False

    def __post_init__(self):
        self.indices = np.asarray(self.indices, dtype=np.int64)
        if self.indices[0] != 0 or len(set(self.indices.tolist())) != self.indices.size:
            raise ValueError("selection must be unique and start with the constant term")

    @property
    def terms(self) -> np.ndarray:
        """Selected non-constant basis indices."""
        return self.indices[1:]

    def to_dict(self) -> dict:
        def plain(v):
            if isinstance(v, np.ndarray):
                return v.tolist()
            if isinstance(v, (np.integer, np.floating)):
                return v.item()
            return v
        return {
            "method": self.method,
            "M_sel": self.M_sel,
            "indices": self.indices.tolist(),
            "degrees": None if self.multi_indices is None else self.multi_indices.tolist(),
            "incomplete": self.incomplete,
            "path": {k: plain(v) for k, v in self.path.items()},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1)

    def save(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.to_json())

    @classmethod
    def from_dict(cls, doc: dict) -> "SelectionResult":
        mi = doc.get("degrees")
        return cls(doc["method"], int(doc["M_sel"]), np.asarray(doc["indices"]),
                   None if mi is None else np.asarray(mi, dtype=np.int64),
                   doc.get("path", {}), bool(doc.get("incomplete", False)))

    @classmethod
    def load(cls, path) -> "SelectionResult":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def select_sobol(report: SobolReport, M_sel: int) -> SelectionResult:
    """Top ``M_sel`` terms by posterior-mean Sobol index, plus the constant."""
    M = report.basis_indices.size + 1
    if not 1 <= M_sel < M:
        raise ValueError(f"M_sel must satisfy 1 <= M_sel < M = {M}, got {M_sel}")
    chosen = report.ranking[:M_sel]
    pos = {b: i for i, b in enumerate(report.basis_indices)}
    mi = None
    if report.multi_indices is not None:
        N = report.multi_indices.shape[1]
        mi = np.vstack([np.zeros((1, N), dtype=np.int64)] + [report.multi_indices[pos[b]][None] for b in chosen])
    return SelectionResult("sobol-greedy", M_sel, np.concatenate([[0], chosen]), mi,
                           {"mean_index": [float(report.mean[pos[b]]) for b in chosen]})


def lasso_entry_order(X, target, n_lambdas: int = 100, ratio: float = 1e-4,
                      stop_after: int | None = None, backend: str | None = None):
    """Order in which columns of ``X`` enter a decreasing-lambda l1 path.

    Columns are centered and scaled to unit mean square and the target is
    centered. Entrants at the same grid point are ordered by decreasing
    coefficient magnitude, then by column. Constant columns never enter.

    Returns
    -------
    order : ndarray of int
        Column indices in entry order.
    info : dict
        ``lambdas``, ``entry_step`` per ordered column and ``lambda_max``.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(target, dtype=float).ravel()
    T, K = X.shape
    sd = X.std(axis=0)
    live = sd > 1e-12 * max(1.0, float(np.abs(X).max(initial=0.0)))
    Z = np.zeros_like(X)
    Z[:, live] = (X[:, live] - X[:, live].mean(axis=0)) / sd[live]
    yc = y - y.mean()
    lam_max = float(np.max(np.abs(Z.T @ yc))) / T if K else 0.0
    if lam_max <= 0:
        return np.zeros(0, dtype=np.int64), {"lambdas": [], "entry_step": [], "lambda_max": 0.0}
    lambdas = lam_max * np.logspace(0.0, np.log10(ratio), n_lambdas)
    core = _backend.get_core(backend)
    coefs, first = core.lasso_path(Z, yc, lambdas, 1e-7, 1000, -1 if stop_after is None else int(stop_after))
    entered = np.flatnonzero(first >= 0)
    mag = np.array([abs(coefs[first[j], j]) for j in entered])
    order = entered[np.lexsort((entered, -mag, first[entered]))]
    return order, {"lambdas": lambdas[:coefs.shape[0]], "entry_step": first[order], "lambda_max": lam_max}


def select_projpred(draws, Psi, M_sel: int, *, basis_multi_indices=None, n_lambdas: int = 100,
                    ratio: float = 1e-4, backend: str | None = None) -> SelectionResult:
    """Projective selection with a single cluster at the reference mean prediction.

    ``Psi`` is the training design of the reference model (column 0 constant).
    """
    C, idx = coefficient_draws(draws)
    Psi = np.asarray(Psi, dtype=float)
    if Psi.shape[1] != idx.size:
        raise ValueError(f"design has {Psi.shape[1]} columns, draws have {idx.size} coefficients")
    M = idx.size
    if not 1 <= M_sel < M:
        raise ValueError(f"M_sel must satisfy 1 <= M_sel < M = {M}, got {M_sel}")
    center = Psi @ C.mean(axis=0)
    order, info = lasso_entry_order(Psi[:, 1:], center, n_lambdas, ratio, stop_after=M_sel, backend=backend)
    incomplete = order.size < M_sel
    if incomplete:
        warnings.warn(f"l1 path produced only {order.size} of {M_sel} requested terms", RuntimeWarning)
    chosen_cols = np.concatenate([[0], order[:M_sel] + 1])
    sub = Psi[:, chosen_cols]
    proj, *_ = np.linalg.lstsq(sub, center, rcond=None)
    resid = center - sub @ proj
    indices = idx[chosen_cols]
    mi = None if basis_multi_indices is None else np.asarray(basis_multi_indices)[indices]
    path = {"lambdas": info["lambdas"], "entry_step": info["entry_step"][:M_sel],
            "lambda_max": info["lambda_max"], "projection": proj,
            "projection_rmse": float(np.sqrt(np.mean(resid ** 2)))}
    return SelectionResult("projpred", M_sel, indices, mi, path, incomplete)


def refit_sparse(selection: SelectionResult, Psi_full, y, prior: R2D2Config | None = None,
                 sampler_cfg: SamplerConfig | None = None, prior_mode: str = "r2d2"):
    """Fit the Bayesian model on the selected columns only.

    ``Psi_full`` holds all basis columns (column ``i`` is basis index ``i``).
    Returns ``(draws, diagnostics, model)``; coefficient names carry basis indices.
    """
    Psi_full = np.asarray(Psi_full, dtype=float)
    if selection.indices.max() >= Psi_full.shape[1]:
        raise ValueError("selection references columns beyond the design")
    model = LogDensityModel(Psi_full[:, selection.indices], y, prior_mode, prior or R2D2Config(),
                            basis_indices=tuple(selection.indices.tolist()))
    draws, diag = sample(model, sampler_cfg or SamplerConfig())
    return draws, diag, model


def adaptive_degree_search(importance, N: int, max_degree: int, threshold: float = 0.0):
    """Greedy forward search over multi-indices that grows only from accepted terms.

    Starting from the constant term, a candidate ``alpha + e_j`` is examined
    once all its backward neighbours have been accepted, and it is accepted
    when ``importance(alpha) > threshold``. The search stops at the first
    round with no accepted candidate, so a degree level whose terms carry no
    importance blocks everything above it.

    Returns ``(accepted, examined)`` as lists of multi-index tuples.
    """
    zero = (0,) * N
    accepted = {zero}
    examined = []
    frontier = [zero]
    while frontier:
        candidates = set()
        for a in frontier:
            for j in range(N):
                b = list(a)
                b[j] += 1
                b = tuple(b)
                if sum(b) > max_degree or b in accepted:
                    continue
                back = [tuple(b[i] - (i == k) for i in range(N)) for k in range(N) if b[k] > 0]
                if all(x in accepted for x in back):
                    candidates.add(b)
        frontier = []
        for b in sorted(candidates, key=lambda t: (sum(t), tuple(-v for v in t))):
            examined.append(b)
            if importance(b) > threshold:
                accepted.add(b)
                frontier.append(b)
    return sorted(accepted - {zero}, key=lambda t: (sum(t), tuple(-v for v in t))), examined
