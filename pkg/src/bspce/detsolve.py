"""Deterministic PCE coefficients: exact interpolation, least squares and ridge."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

__all__ = ["DeterministicFit", "SolveError", "solve_exact", "solve_least_squares", "solve_ridge"]

RANK_TOL = 1e-12


class SolveError(ValueError):
    pass


@dataclass(frozen=True)
class DeterministicFit:
    coefficients: np.ndarray
    method: str
    lam: float | None
    residual_norm: float
    condition: float

    @property
    def M(self) -> int:
        return self.coefficients.size

    def predict(self, Psi) -> np.ndarray:
        return np.asarray(Psi, dtype=float) @ self.coefficients

    def to_dict(self) -> dict:
        return {"method": self.method, "lambda": self.lam,
                "coefficients": [float(c) for c in self.coefficients],
                "residual_norm": self.residual_norm, "condition": self.condition}

    def to_json(self) -> str:
        # repr of a float round-trips exactly
        return json.dumps(self.to_dict(), indent=1)

    @classmethod
    def from_dict(cls, doc: dict) -> "DeterministicFit":
        return cls(np.asarray(doc["coefficients"], dtype=float), doc["method"], doc.get("lambda"),
                   float(doc["residual_norm"]), float(doc.get("condition", np.nan)))


def _inputs(Psi, y):
    Psi = np.asarray(Psi, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    if Psi.ndim != 2 or Psi.shape[0] != y.size:
        raise SolveError(f"design {Psi.shape} does not match {y.size} responses")
    if not (np.all(np.isfinite(Psi)) and np.all(np.isfinite(y))):
        raise SolveError("non-finite values in design or responses")
    return Psi, y


def _condition(sv):
    return float(sv[0] / sv[-1]) if sv[-1] > 0 else float("inf")


def solve_exact(Psi, y) -> DeterministicFit:
    """Solve the square system ``Psi c = y``."""
    Psi, y = _inputs(Psi, y)
    T, M = Psi.shape
    if T != M:
        raise SolveError(f"exact solve needs T == M, got T={T}, M={M}")
    sv = np.linalg.svd(Psi, compute_uv=False)
    cond = _condition(sv)
    if sv[-1] < RANK_TOL * sv[0]:
        raise SolveError(f"design matrix is singular (condition estimate {cond:.3e})")
    c = sla.solve(Psi, y)
    return DeterministicFit(c, "exact", None, float(np.linalg.norm(y - Psi @ c)), cond)


def solve_least_squares(Psi, y) -> DeterministicFit:
    """Minimize ``||y - Psi c||`` by Householder QR."""
    Psi, y = _inputs(Psi, y)
    T, M = Psi.shape
    if T < M:
        raise SolveError(f"least squares needs T >= M, got T={T}, M={M}; use ridge")
    Q, R = sla.qr(Psi, mode="economic")
    sv = np.linalg.svd(R, compute_uv=False)
    cond = _condition(sv)
    if sv[-1] < RANK_TOL * sv[0]:
        raise SolveError(f"design matrix is rank deficient (condition estimate {cond:.3e}); use ridge")
    c = sla.solve_triangular(R, Q.T @ y)
    return DeterministicFit(c, "least-squares", None, float(np.linalg.norm(y - Psi @ c)), cond)


def solve_ridge(Psi, y, lam: float, refine_steps: int = 2) -> DeterministicFit:
    """Solve ``(Psi^T Psi + lam I) c = Psi^T y`` by Cholesky.

    A few steps of iterative refinement, with residuals formed from ``Psi``
    itself, recover the accuracy lost to squaring the condition number.
    """
    Psi, y = _inputs(Psi, y)
    lam = float(lam)
    if not lam >= 0:
        raise SolveError("ridge parameter must be non-negative")
    M = Psi.shape[1]
    G = Psi.T @ Psi
    sv = np.linalg.svd(Psi, compute_uv=False)
    sv2 = np.zeros(M)
    sv2[:sv.size] = sv ** 2
    sv2 = np.sort(sv2 + lam)[::-1]
    cond = _condition(sv2)
    if lam == 0 and (sv.size < M or sv[-1] < RANK_TOL * sv[0]):
        raise SolveError(f"Psi^T Psi is singular (condition estimate {cond:.3e}); use lam > 0")
    A = G + lam * np.eye(M)
    try:
        cf = sla.cho_factor(A, lower=False, check_finite=False)
    except np.linalg.LinAlgError as exc:
        raise SolveError(f"ridge system not positive definite: {exc}") from exc
    c = sla.cho_solve(cf, Psi.T @ y)
    for _ in range(refine_steps):
        resid = Psi.T @ (y - Psi @ c) - lam * c
        c = c + sla.cho_solve(cf, resid)
    return DeterministicFit(c, "ridge", lam, float(np.linalg.norm(y - Psi @ c)), cond)
