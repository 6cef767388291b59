"""
Benchmark problems, training designs and the experiment pipeline.

Problems: Ishigami on [-pi, pi]^3, the Sobol g-function on [0, 1]^N, the
sign function on [-1, 1], and tabular data read from CSV. An experiment
builds the basis, fits a full reference model, selects sparse subsets, refits
them and scores everything against analytic truths and fresh test points.
"""

from __future__ import annotations

import csv
import json
import math
import time
from functools import partial
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import detsolve
from .model import LogDensityModel, R2D2Config
from .polybasis import (MomentSequence, build_basis, evaluate_design, gauss_nodes,
                        moments_analytic, moments_from_samples)
from .posterior import pce_moments, rmse, sobol_indices
from .sampler import SamplerConfig, sample
from .select import refit_sparse, select_projpred, select_sobol

__all__ = [
    "ishigami", "sobol_g", "signum", "sobol_sequence", "add_noise",
    "BenchmarkProblem", "DesignSpec", "ExperimentReport",
    "ishigami_problem", "sobol_g_problem", "signum_problem", "tabular_problem", "get_problem",
    "make_design", "run_experiment", "ishigami_moments", "sobol_g_moments",
    "SOBOL_G_A", "T_TEST",
]

T_TEST = 500
SOBOL_G_A = (1.0, 2.0, 5.0, 10.0, 20.0, 50.0, 100.0, 500.0)


# -- test functions --------------------------------------------------------

def ishigami(omega, a: float = 7.0, b: float = 0.1):
    """``sin w1 + a sin^2 w2 + b w3^4 sin w1``; rows of ``omega`` are points."""
    w = np.asarray(omega, dtype=float)
    x1, x2, x3 = w[..., 0], w[..., 1], w[..., 2]
    return np.sin(x1) + a * np.sin(x2) ** 2 + b * x3 ** 4 * np.sin(x1)


def ishigami_moments(a: float = 7.0, b: float = 0.1):
    """Exact mean and variance under independent uniform inputs on [-pi, pi]."""
    pi = math.pi
    return a / 2.0, a * a / 8.0 + b * pi ** 4 / 5.0 + b * b * pi ** 8 / 18.0 + 0.5


def sobol_g(omega, a: Sequence[float] = SOBOL_G_A):
    """``prod_j (|4 w_j - 2| + a_j) / (1 + a_j)`` on the unit cube."""
    w = np.asarray(omega, dtype=float)
    a = np.asarray(a, dtype=float)
    if w.shape[-1] != a.size:
        raise ValueError(f"input has {w.shape[-1]} dimensions, a has {a.size}")
    if np.any((w < 0) | (w > 1)):
        raise ValueError("sobol_g is defined on [0, 1]^N")
    return np.prod((np.abs(4.0 * w - 2.0) + a) / (1.0 + a), axis=-1)


def sobol_g_moments(a: Sequence[float] = SOBOL_G_A):
    a = np.asarray(a, dtype=float)
    return 1.0, float(np.prod(1.0 + 1.0 / (3.0 * (1.0 + a) ** 2)) - 1.0)


def signum(omega):
    return np.sign(np.asarray(omega, dtype=float))


def _signum_first_column(X):
    return signum(X[:, 0])


# -- Sobol sequence ----------------------------------------------------------
# primitive-polynomial degree, coefficient bits and initial direction integers
# for dimensions 2..10; dimension 1 is the van der Corput sequence
_SOBOL_TABLE = (
    (1, 0, (1,)),
    (2, 1, (1, 3)),
    (3, 1, (1, 3, 1)),
    (3, 2, (1, 1, 1)),
    (4, 1, (1, 1, 3, 3)),
    (4, 4, (1, 3, 5, 13)),
    (5, 2, (1, 1, 5, 5, 17)),
    (5, 4, (1, 1, 5, 5, 5)),
    (5, 7, (1, 1, 7, 11, 19)),
)
_BITS = 32


def _direction_numbers(N: int) -> np.ndarray:
    V = np.zeros((N, _BITS), dtype=np.uint64)
    V[0] = [1 << (_BITS - 1 - i) for i in range(_BITS)]
    for j in range(1, N):
        s, a, m = _SOBOL_TABLE[j - 1]
        v = [0] * _BITS
        for i in range(s):
            v[i] = m[i] << (_BITS - 1 - i)
        for i in range(s, _BITS):
            x = v[i - s] ^ (v[i - s] >> s)
            for k in range(1, s):
                if (a >> (s - 1 - k)) & 1:
                    x ^= v[i - k]
            v[i] = x
        V[j] = v
    return V


def sobol_sequence(N: int, T: int, skip: int = 1) -> np.ndarray:
    """Points ``skip .. skip + T - 1`` of the unscrambled Sobol sequence in Gray-code order.

    The default ``skip=1`` drops the all-zeros point.
    """
    if not 1 <= N <= len(_SOBOL_TABLE) + 1:
        raise ValueError(f"Sobol table supports 1..{len(_SOBOL_TABLE) + 1} dimensions, got {N}")
    if T < 0 or skip < 0 or skip + T > 2 ** _BITS:
        raise ValueError("requested points exceed the 32-bit sequence")
    V = _direction_numbers(N)
    i = np.arange(skip, skip + T, dtype=np.uint64)
    gray = i ^ (i >> np.uint64(1))
    out = np.zeros((T, N), dtype=np.uint64)
    for b in range(_BITS):
        bit = ((gray >> np.uint64(b)) & np.uint64(1)).astype(bool)
        if bit.any():
            out[bit] ^= V[:, b]
    return out.astype(float) / 2.0 ** _BITS


def add_noise(y, sigma_noise: float, seed=None) -> np.ndarray:
    """``y`` plus i.i.d. normal noise with standard deviation ``sigma_noise``."""
    y = np.asarray(y, dtype=float)
    if not sigma_noise >= 0:
        raise ValueError("noise level must be non-negative")
    if sigma_noise == 0:
        return y.copy()
    return y + np.random.default_rng(seed).normal(0.0, sigma_noise, size=y.shape)


# -- problems ---------------------------------------------------------------

@dataclass(frozen=True)
class BenchmarkProblem:
    """A target function with its input measure.

    ``bounds`` gives the uniform box for closed-form problems; tabular
    problems carry their data instead and use empirical moments.
    """

    name: str
    N: int
    evaluator: Callable | None
    bounds: tuple | None = None
    truth_mean: float | None = None
    truth_sd: float | None = None
    data_X: np.ndarray | None = None
    data_y: np.ndarray | None = None

    def evaluate(self, X) -> np.ndarray:
        if self.evaluator is None:
            raise ValueError(f"problem {self.name!r} has no evaluator; use its data")
        return np.asarray(self.evaluator(np.atleast_2d(X)), dtype=float).ravel()

    def from_unit(self, U) -> np.ndarray:
        U = np.atleast_2d(U)
        lo = np.array([b[0] for b in self.bounds])
        hi = np.array([b[1] for b in self.bounds])
        return lo + (hi - lo) * U

    def sample(self, n: int, seed=None) -> np.ndarray:
        return self.from_unit(np.random.default_rng(seed).random((n, self.N)))

    def moments(self, max_degree: int) -> list:
        if self.data_X is not None:
            return [moments_from_samples(self.data_X[:, j], max_degree, dim=j) for j in range(self.N)]
        return [_uniform_moments(lo, hi, max_degree, j) for j, (lo, hi) in enumerate(self.bounds)]


def _uniform_moments(lo, hi, d, j):
    m = moments_analytic("uniform", d, a=lo, b=hi)
    return MomentSequence(m.moments, m.source, m.standardization, j)


def ishigami_problem(a: float = 7.0, b: float = 0.1) -> BenchmarkProblem:
    mean, var = ishigami_moments(a, b)
    return BenchmarkProblem("ishigami", 3, partial(ishigami, a=a, b=b),
                            ((-math.pi, math.pi),) * 3, mean, math.sqrt(var))


def sobol_g_problem(N: int = 8, a: Sequence[float] | None = None) -> BenchmarkProblem:
    a = tuple(SOBOL_G_A[:N]) if a is None else tuple(a)
    if len(a) != N:
        raise ValueError("need one control parameter per dimension")
    mean, var = sobol_g_moments(a)
    return BenchmarkProblem("sobol-g", N, partial(sobol_g, a=a), ((0.0, 1.0),) * N,
                            mean, math.sqrt(var))


def signum_problem() -> BenchmarkProblem:
    return BenchmarkProblem("signum", 1, _signum_first_column, ((-1.0, 1.0),), 0.0, 1.0)


def tabular_problem(path, name: str = "tabular") -> BenchmarkProblem:
    """CSV with a header row, input columns first and the response last."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if len(rows) < 3:
        raise ValueError(f"{path}: need a header and at least two data rows")
    width = len(rows[0])
    if width < 2 or any(len(r) != width for r in rows[1:]):
        raise ValueError(f"{path}: ragged or too narrow table")
    data = np.array([[float(v) for v in r] for r in rows[1:]])
    X, y = data[:, :-1], data[:, -1]
    bounds = tuple((float(c.min()), float(c.max())) for c in X.T)
    return BenchmarkProblem(name, X.shape[1], None, bounds, data_X=X, data_y=y)


def get_problem(name: str, **kw) -> BenchmarkProblem:
    makers = {"ishigami": ishigami_problem, "sobol-g": sobol_g_problem,
              "signum": signum_problem, "tabular": tabular_problem}
    if name not in makers:
        raise ValueError(f"unknown problem {name!r}; choose from {sorted(makers)}")
    return makers[name](**kw)


# -- designs ----------------------------------------------------------------

@dataclass(frozen=True)
class DesignSpec:
    """Training design: ``sobol-sequence``, ``gauss-quadrature-grid``,
    ``equidistant-grid``, ``random`` or ``file`` (first ``T`` rows of the
    problem's data)."""

    kind: str
    T: int
    seed: int = 0
    skip: int = 1

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def _grid_side(T, N):
    n = int(round(T ** (1.0 / N)))
    if n ** N != T:
        raise ValueError(f"T={T} is not a full tensor grid in {N} dimensions")
    return n


def make_design(problem: BenchmarkProblem, spec: DesignSpec) -> np.ndarray:
    kind, T, N = spec.kind, spec.T, problem.N
    if T < 1:
        raise ValueError("need T >= 1")
    if kind == "sobol-sequence":
        return problem.from_unit(sobol_sequence(N, T, spec.skip))
    if kind == "random":
        return problem.sample(T, spec.seed)
    if kind == "file":
        if problem.data_X is None or T > problem.data_X.shape[0]:
            raise ValueError("file design needs at least T data rows")
        return problem.data_X[:T].copy()
    n = _grid_side(T, N)
    if kind == "gauss-quadrature-grid":
        axes = []
        for m in problem.moments(n):
            axes.append(m.standardization.inverse(gauss_nodes(m, n)))
    elif kind == "equidistant-grid":
        axes = [np.linspace(lo, hi, n) for lo, hi in problem.bounds]
    else:
        raise ValueError(f"unknown design kind {kind!r}")
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.column_stack([g.ravel() for g in mesh])


# -- experiments ------------------------------------------------------------

@dataclass
class ExperimentReport:
    problem: str
    N: int
    degree: int
    T: int
    M: int
    design: dict
    noise_sd: float
    rows: list = field(default_factory=list)
    selections: dict = field(default_factory=dict)
    reference_ranking: list = field(default_factory=list)
    flagged: bool = False
    notes: list = field(default_factory=list)
    draws: dict = field(default_factory=dict, repr=False)

    CSV_FIELDS = ("problem", "T", "M", "method", "mean_bias", "sd_bias", "rmse",
                  "fit_seconds", "rhat_max", "divergences")

    def row(self, method: str) -> dict:
        for r in self.rows:
            if r["method"] == method:
                return r
        raise KeyError(method)

    def to_dict(self, timings: bool = True) -> dict:
        rows = [dict(r) for r in self.rows]
        if not timings:
            for r in rows:
                r.pop("fit_seconds", None)
        return {"problem": self.problem, "N": self.N, "degree": self.degree, "T": self.T,
                "M": self.M, "design": self.design, "noise_sd": self.noise_sd,
                "flagged": self.flagged, "rows": rows, "selections": self.selections,
                "reference_ranking": self.reference_ranking, "notes": self.notes}

    def to_json(self, timings: bool = True) -> str:
        return json.dumps(self.to_dict(timings), indent=1)

    def csv_rows(self) -> list:
        head = {"problem": self.problem, "T": self.T}
        return [{k: head[k] if k in head else r.get(k) for k in self.CSV_FIELDS} for r in self.rows]

    def long_rows(self) -> list:
        out = []
        for r in self.rows:
            for k in ("mean_bias", "sd_bias", "rmse", "fit_seconds", "rhat_max", "divergences"):
                out.append({"problem": self.problem, "T": self.T, "degree": self.degree,
                            "design": self.design.get("kind"), "noise_sd": self.noise_sd,
                            "method": r["method"], "metric": k, "value": r.get(k)})
        return out


def write_csv(path, rows: list) -> None:
    if not rows:
        raise ValueError("no rows to write")
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
        w.writeheader()
        for r in rows:
            w.writerow({k: ("" if v is None else (repr(v) if isinstance(v, float) else v))
                        for k, v in r.items()})


def _metrics(problem, method, C, basis, X_test, y_test, seconds, diag=None, extra=None):
    # ``basis`` must have exactly the columns of ``C``
    row = {"method": method, "M": int(C.shape[1])}
    mom = pce_moments(C)
    row["mean"] = mom.mean
    row["sd"] = mom.sd
    row["mean_bias"] = None if problem.truth_mean is None else mom.mean - problem.truth_mean
    row["sd_bias"] = None if problem.truth_sd is None else mom.sd - problem.truth_sd
    if X_test is not None:
        row["rmse"] = rmse(C @ evaluate_design(basis, X_test).T, y_test)
    else:
        row["rmse"] = None
    row["fit_seconds"] = seconds
    row["rhat_max"] = None if diag is None else diag.rhat_max
    row["divergences"] = None if diag is None else int(diag.divergences)
    if extra:
        row.update(extra)
    return row


def run_experiment(problem: BenchmarkProblem, design: DesignSpec, degree: int, *,
                   prior: R2D2Config | None = None, sampler_cfg: SamplerConfig | None = None,
                   methods: Sequence[str] = ("reference", "sobol", "projpred"), M_sel: int = 25,
                   noise_sd: float = 0.0, noise_seed: int = 12345, n_test: int = T_TEST,
                   test_seed: int = 2024, ridge_lambda: float = 1e-6, rhat_gate: float = 1.01,
                   flat_prior: R2D2Config | None = None, keep_draws: bool = False) -> ExperimentReport:
    """Basis, reference fit, selection, refits and metrics for one experiment cell.

    ``methods`` may contain ``reference`` (full R2D2 fit), ``flat`` (full
    flat-prior fit), ``sobol`` and ``projpred`` (sparse R2D2 refits, which
    need ``reference``), and the deterministic ``exact``, ``least-squares``
    and ``ridge``. Any Bayesian fit with R-hat above ``rhat_gate`` flags the
    report without stopping it. With ``keep_draws`` the posterior draws of every
    Bayesian fit are kept in ``report.draws`` (never serialized).
    """
    prior = prior or R2D2Config()
    sampler_cfg = sampler_cfg or SamplerConfig()
    methods = list(methods)
    if ("sobol" in methods or "projpred" in methods) and "reference" not in methods:
        raise ValueError("sparse methods need the reference fit")

    X = make_design(problem, design)
    y = problem.data_y[:design.T].copy() if design.kind == "file" else problem.evaluate(X)
    y = add_noise(y, noise_sd, noise_seed)
    basis = build_basis(problem.moments(degree), degree)
    Psi = evaluate_design(basis, X)

    if problem.data_X is not None:
        rest = problem.data_X[design.T:design.T + n_test] if design.kind == "file" else None
        X_test = rest if rest is not None and rest.shape[0] else None
        y_test = problem.data_y[design.T:design.T + n_test] if X_test is not None else None
    else:
        X_test = problem.sample(n_test, test_seed)
        y_test = problem.evaluate(X_test)

    report = ExperimentReport(problem.name, problem.N, degree, design.T, basis.M,
                              design.to_dict(), noise_sd)
    if X_test is None:
        report.notes.append("no held-out test data: rmse unavailable")
    if problem.truth_mean is None:
        report.notes.append("no analytic truth: mean/sd bias unavailable")

    def det(name, fn):
        t0 = time.perf_counter()
        try:
            fit = fn()
        except detsolve.SolveError as exc:
            report.notes.append(f"{name}: {exc}")
            return
        report.rows.append(_metrics(problem, name, fit.coefficients[None, :], basis, X_test, y_test,
                                    time.perf_counter() - t0, extra={"residual_norm": fit.residual_norm}))

    for name in methods:
        if name == "exact":
            det(name, lambda: detsolve.solve_exact(Psi, y))
        elif name == "least-squares":
            det(name, lambda: detsolve.solve_least_squares(Psi, y))
        elif name == "ridge":
            det(name, lambda: detsolve.solve_ridge(Psi, y, ridge_lambda))

    def bayes(name, model):
        t0 = time.perf_counter()
        draws, diag = sample(model, sampler_cfg)
        secs = time.perf_counter() - t0
        if diag.rhat_max > rhat_gate:
            report.flagged = True
        C = draws.coefficients()
        if C.shape[1] == basis.M:
            row = _metrics(problem, name, C, basis, X_test, y_test, secs, diag)
        else:
            row = _sparse_metrics(problem, name, draws, basis, X_test, y_test, secs, diag)
        train_mu = C.mean(axis=0) @ (Psi[:, _draw_columns(draws)]).T
        row["train_rmse"] = float(np.sqrt(np.mean((train_mu - y) ** 2)))
        report.rows.append(row)
        if keep_draws:
            report.draws[name] = draws
        return draws, diag

    ref_draws = None
    if "flat" in methods:
        bayes("flat", LogDensityModel(Psi, y, "flat", flat_prior or prior))
    if "reference" in methods:
        ref_draws, _ = bayes("reference", LogDensityModel(Psi, y, "r2d2", prior))
        rep = sobol_indices(ref_draws, basis)
        report.reference_ranking = [int(b) for b in rep.ranking[:max(M_sel, 10)]]
        if "sobol" in methods:
            sel = select_sobol(rep, M_sel)
            report.selections["sobol"] = sel.to_dict()
            t0 = time.perf_counter()
            dr, dg, _ = refit_sparse(sel, Psi, y, prior, sampler_cfg)
            _append_refit(report, problem, "sobol", dr, dg, basis, X_test, y_test,
                          time.perf_counter() - t0, rhat_gate, Psi, y)
            if keep_draws:
                report.draws["sobol"] = dr
        if "projpred" in methods:
            sel = select_projpred(ref_draws, Psi, M_sel, basis_multi_indices=basis.multi_indices)
            report.selections["projpred"] = sel.to_dict()
            t0 = time.perf_counter()
            dr, dg, _ = refit_sparse(sel, Psi, y, prior, sampler_cfg)
            _append_refit(report, problem, "projpred", dr, dg, basis, X_test, y_test,
                          time.perf_counter() - t0, rhat_gate, Psi, y)
            if keep_draws:
                report.draws["projpred"] = dr
    return report


def _draw_columns(draws):
    return [int(n[2:]) for n in draws.names if n.startswith("c_")]


def _sparse_metrics(problem, name, draws, basis, X_test, y_test, secs, diag):
    return _metrics(problem, name, draws.coefficients(), basis.subset(_draw_columns(draws)),
                    X_test, y_test, secs, diag)


def _append_refit(report, problem, name, draws, diag, basis, X_test, y_test, secs, gate, Psi, y):
    if diag.rhat_max > gate:
        report.flagged = True
    row = _sparse_metrics(problem, name, draws, basis, X_test, y_test, secs, diag)
    cols = _draw_columns(draws)
    train_mu = draws.coefficients().mean(axis=0) @ Psi[:, cols].T
    row["train_rmse"] = float(np.sqrt(np.mean((train_mu - y) ** 2)))
    report.rows.append(row)
