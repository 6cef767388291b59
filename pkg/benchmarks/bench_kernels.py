"""Time the hot kernels under the compiled and the pure-Python backends.

    python benchmarks/bench_kernels.py [--repeat 5] [--json out.json]

Each kernel runs on identical inputs in both backends; the table reports the
best-of-repeat time per call and the speedup of the compiled core.
"""

import argparse
import json
import sys
import timeit

import numpy as np

from bspce import _backend
from bspce.bench import ishigami, ishigami_problem, sobol_sequence
from bspce.model import LogDensityModel
from bspce.polybasis import build_basis, evaluate_design


def ishigami_case(T, degree):
    problem = ishigami_problem()
    X = problem.from_unit(sobol_sequence(3, T))
    basis = build_basis(problem.moments(degree), degree)
    return basis, X, evaluate_design(basis, X), ishigami(X)


def kernels(backend, basis, X, Psi, y, rng_seed=0):
    core = _backend.get_core(backend)
    model = LogDensityModel(Psi, y, "r2d2", backend=backend)
    dens = model.density
    rng = np.random.default_rng(rng_seed)
    u = 0.1 * rng.standard_normal(model.dim)
    lp, g = dens.logp_grad(u)
    inv = np.ones(model.dim)
    p = rng.standard_normal(model.dim)
    normals = rng.standard_normal(model.dim)
    uniforms = rng.random(2 ** 6 + 12)
    Z = basis.standardize(X)
    tables = np.stack([basis.univariate[j].vandermonde(Z[:, j]) for j in range(basis.N)])
    tables = np.ascontiguousarray(tables)
    alphas = np.ascontiguousarray(basis.multi_indices, dtype=np.int64)
    Xc = Psi[:, 1:] - Psi[:, 1:].mean(axis=0)
    Xc /= Xc.std(axis=0)
    yc = y - y.mean()
    lam_max = float(np.max(np.abs(Xc.T @ yc))) / len(y)
    lambdas = lam_max * np.logspace(0, -4, 100)
    return {
        "design_product": lambda: core.design_product(tables, alphas),
        "logp_grad": lambda: dens.logp_grad(u),
        "leapfrog_x32": lambda: core.leapfrog(dens, u, p, g, inv, 1e-3, 32),
        "nuts_depth6": lambda: core.nuts_transition(dens, u, lp, g, inv, 1e-3, 6, normals, uniforms),
        "lasso_path_25": lambda: core.lasso_path(Xc, yc, lambdas, 1e-7, 1000, 25),
    }


def best_time(fn, repeat):
    n, _ = timeit.Timer(fn).autorange()
    return min(timeit.repeat(fn, number=n, repeat=repeat)) / n


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--T", type=int, default=100)
    ap.add_argument("--degree", type=int, default=10)
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--json", help="write results to this file")
    args = ap.parse_args(argv)

    backends = _backend.available_backends()
    if "cython" not in backends:
        print("compiled core not built; timing the Python backend only", file=sys.stderr)
    basis, X, Psi, y = ishigami_case(args.T, args.degree)
    results = {}
    for b in backends:
        for name, fn in kernels(b, basis, X, Psi, y).items():
            results.setdefault(name, {})[b] = best_time(fn, args.repeat)

    print(f"Ishigami T={args.T} d={args.degree} M={basis.M}")
    print(f"{'kernel':<16}" + "".join(f"{b + ' [ms]':>14}" for b in backends) + f"{'speedup':>10}")
    for name, t in results.items():
        speed = t["python"] / t["cython"] if "cython" in t else float("nan")
        print(f"{name:<16}" + "".join(f"{1e3 * t[b]:>14.4f}" for b in backends) + f"{speed:>10.1f}")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump({"T": args.T, "degree": args.degree, "M": basis.M, "seconds": results}, fh, indent=1)


if __name__ == "__main__":
    main()
