"""Command-line front end: ``bspce <command> --config run.json [overrides]``.

One JSON document configures a whole run; ``--set block.key=value`` and the
per-command flags override single keys. Outputs go to the configured output
directory; wall-clock information is confined to ``run.log`` and
``timings.csv`` so every other file is reproducible byte for byte.

Exit codes: 0 success, 1 configuration error, 2 basis error, 3 sampler error,
4 shape or compatibility error.
"""

from __future__ import annotations

import argparse
import copy
import csv
import itertools
import json
import logging
import multiprocessing
import os
import sys
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import bench
from .model import LogDensityModel, R2D2Config
from .polybasis import (BasisError, MomentSequence, MultiIndexBasis, build_basis, evaluate_design,
                        moments_analytic, moments_from_samples)
from .posterior import predict, sobol_indices
from .sampler import PosteriorDraws, SamplerConfig, SamplerError, compute_diagnostics, sample
from .select import SelectionResult, select_projpred, select_sobol

EXIT_OK, EXIT_CONFIG, EXIT_BASIS, EXIT_SAMPLER, EXIT_SHAPE = 0, 1, 2, 3, 4

log = logging.getLogger("bspce")


class ConfigError(Exception):
    pass


class ShapeError(Exception):
    pass


# -- configuration ----------------------------------------------------------

SCHEMA = {
    "problem": {"name", "a", "b", "N", "control", "path"},
    "design": {"kind", "T", "seed", "skip"},
    "basis": {"degree", "inputs", "samples", "file"},
    "prior": {"mode", "zeta", "nu", "theta", "sigma_scale", "c0_mean", "c0_sd"},
    "sampler": set(SamplerConfig.__dataclass_fields__),
    "selection": {"method", "M_sel"},
    "noise": {"sd", "seed"},
    "test": {"n", "seed"},
    "benchmark": {"preset", "T", "degrees", "designs", "methods", "noise_sd", "replicates",
                  "M_sel", "ridge_lambda"},
    "output": None,
    "verbosity": None,
}

DEFAULTS = {
    "problem": {"name": "ishigami"},
    "design": {"kind": "sobol-sequence", "T": 100, "seed": 0, "skip": 1},
    "basis": {"degree": 10},
    "prior": {"mode": "r2d2"},
    "sampler": {},
    "selection": {"method": "projpred", "M_sel": 25},
    "noise": {"sd": 0.0, "seed": 12345},
    "test": {"n": bench.T_TEST, "seed": 2024},
    "benchmark": {},
    "output": "bspce-out",
    "verbosity": 0,
}

PRESETS = {
    "ishigami": {"problem": {"name": "ishigami"},
                 "benchmark": {"T": [10, 25, 50, 100, 200, 286, 400, 800], "degrees": [10],
                               "designs": ["sobol-sequence"],
                               "methods": ["reference", "sobol", "projpred"]}},
    "ishigami-noise": {"problem": {"name": "ishigami"},
                       "benchmark": {"T": [10, 25, 50, 100, 200, 286, 400, 800], "degrees": [10],
                                     "designs": ["sobol-sequence"], "noise_sd": [0.1, 0.3, 0.5],
                                     "replicates": 10, "methods": ["reference", "sobol", "projpred"]}},
    "sobol-g": {"problem": {"name": "sobol-g", "N": 8},
                "benchmark": {"T": [100, 300, 900, 1001, 2700, 3003, 8100], "degrees": [6],
                              "designs": ["sobol-sequence"],
                              "methods": ["reference", "sobol", "projpred"]}},
    "sobol-g-4": {"problem": {"name": "sobol-g", "N": 4},
                  "benchmark": {"T": [100, 300, 900, 1001, 2700, 3003, 8100], "degrees": [10],
                                "designs": ["sobol-sequence"],
                                "methods": ["reference", "sobol", "projpred"]}},
    "signum": {"problem": {"name": "signum"},
               "benchmark": {"T": "degree+1", "degrees": list(range(1, 11)),
                             "designs": ["gauss-quadrature-grid", "sobol-sequence"],
                             "methods": ["reference", "flat", "exact"]}},
}


def _check_keys(doc: dict, where: str = "config") -> None:
    if not isinstance(doc, dict):
        raise ConfigError(f"{where} must be a JSON object")
    for key, val in doc.items():
        if key not in SCHEMA:
            raise ConfigError(f"unknown key {key!r} in {where}")
        allowed = SCHEMA[key]
        if allowed is None:
            continue
        if not isinstance(val, dict):
            raise ConfigError(f"block {key!r} must be an object")
        bad = sorted(set(val) - allowed)
        if bad:
            raise ConfigError(f"unknown key '{key}.{bad[0]}'")


def _merge(base: dict, extra: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in extra.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k].update(copy.deepcopy(v))
        else:
            out[k] = copy.deepcopy(v)
    return out


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _apply_override(cfg: dict, assignment: str) -> None:
    if "=" not in assignment:
        raise ConfigError(f"override {assignment!r} is not of the form key=value")
    path, text = assignment.split("=", 1)
    parts = path.strip().split(".")
    if len(parts) == 1:
        if parts[0] not in SCHEMA or SCHEMA[parts[0]] is not None:
            raise ConfigError(f"unknown key {parts[0]!r} in overrides (blocks need block.key)")
        cfg[parts[0]] = _parse_value(text)
        return
    if len(parts) != 2:
        raise ConfigError(f"override key {path!r} must be block.key")
    _check_keys({parts[0]: {parts[1]: None}}, "overrides")
    cfg.setdefault(parts[0], {})[parts[1]] = _parse_value(text)


def load_config(path=None, overrides=(), preset=None) -> dict:
    """Defaults, then the preset, then the file, then overrides; unknown keys are errors."""
    doc = {}
    if path is not None:
        if not os.path.exists(path):
            raise ConfigError(f"config file not found: {path}")
        try:
            with open(path) as fh:
                doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
        _check_keys(doc)
    cfg = copy.deepcopy(DEFAULTS)
    preset = preset or doc.get("benchmark", {}).get("preset")
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
        cfg = _merge(cfg, PRESETS[preset])
    cfg = _merge(cfg, doc)
    for a in overrides:
        _apply_override(cfg, a)
    _check_keys(cfg)
    for block in ("problem", "basis"):
        for key in ("path", "samples", "file"):
            p = cfg[block].get(key)
            if p is not None and not os.path.exists(p):
                raise ConfigError(f"{block}.{key}: file not found: {p}")
    return cfg


def _problem(cfg):
    p = dict(cfg["problem"])
    name = p.pop("name", None)
    try:
        if name == "ishigami":
            return bench.ishigami_problem(**{k: float(p[k]) for k in ("a", "b") if k in p})
        if name == "sobol-g":
            return bench.sobol_g_problem(int(p.get("N", 8)), p.get("control"))
        if name == "signum":
            return bench.signum_problem()
        if name == "tabular":
            if "path" not in p:
                raise ConfigError("problem.path is required for tabular problems")
            return bench.tabular_problem(p["path"])
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"problem: {exc}") from exc
    raise ConfigError(f"unknown problem name {name!r}")


def _design(cfg):
    d = cfg["design"]
    try:
        return bench.DesignSpec(str(d["kind"]), int(d["T"]), int(d.get("seed", 0)), int(d.get("skip", 1)))
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"design: {exc}") from exc


def _sampler(cfg, seed_offset=0):
    try:
        sc = SamplerConfig.from_dict(cfg["sampler"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"sampler: {exc}") from exc
    if seed_offset:
        sc = SamplerConfig.from_dict({**sc.to_dict(), "seed": sc.seed + seed_offset})
    return sc


def _prior(cfg):
    p = dict(cfg["prior"])
    mode = p.pop("mode", "r2d2")
    if mode not in ("r2d2", "flat"):
        raise ConfigError(f"prior.mode must be 'r2d2' or 'flat', got {mode!r}")
    try:
        return mode, R2D2Config.from_dict(p)
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"prior: {exc}") from exc


def _degree(cfg):
    d = cfg["basis"].get("degree")
    if not isinstance(d, int) or d < 0:
        raise ConfigError("basis.degree must be a non-negative integer")
    return d


def _moments_from_spec(spec, degree, dim):
    if not isinstance(spec, dict) or "family" not in spec:
        raise ConfigError("basis.inputs entries need a 'family'")
    bad = sorted(set(spec) - {"family", "a", "b", "mean", "sd"})
    if bad:
        raise ConfigError(f"unknown key basis.inputs[{dim}].{bad[0]!r}")
    kw = {k: float(v) for k, v in spec.items() if k != "family"}
    try:
        m = moments_analytic(spec["family"], degree, **kw)
    except TypeError as exc:
        raise ConfigError(f"basis.inputs[{dim}]: {exc}") from exc
    return MomentSequence(m.moments, m.source, m.standardization, dim)


def _read_table(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if len(rows) < 2:
        raise ConfigError(f"{path}: need a header and at least one data row")
    try:
        data = np.array([[float(v) for v in r] for r in rows[1:]])
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    if data.ndim != 2 or data.shape[1] != len(rows[0]):
        raise ShapeError(f"{path}: ragged table")
    return rows[0], data


def make_basis(cfg, problem=None) -> MultiIndexBasis:
    b = cfg["basis"]
    if b.get("file"):
        return MultiIndexBasis.load(b["file"])
    degree = _degree(cfg)
    if b.get("samples"):
        _, data = _read_table(b["samples"])
        moments = [moments_from_samples(data[:, j], max(degree, 1), dim=j) for j in range(data.shape[1])]
    elif b.get("inputs"):
        moments = [_moments_from_spec(s, max(degree, 1), j) for j, s in enumerate(b["inputs"])]
    else:
        moments = (problem or _problem(cfg)).moments(max(degree, 1))
    return build_basis(moments, degree)


def _training_data(cfg, problem, basis):
    design = _design(cfg)
    try:
        X = bench.make_design(problem, design)
    except ValueError as exc:
        raise ConfigError(f"design: {exc}") from exc
    y = problem.data_y[:design.T].copy() if design.kind == "file" else problem.evaluate(X)
    y = bench.add_noise(y, float(cfg["noise"].get("sd", 0.0)), cfg["noise"].get("seed"))
    if X.shape[1] != basis.N:
        raise ShapeError(f"design has {X.shape[1]} inputs, basis has {basis.N}")
    return X, y, evaluate_design(basis, X)


# -- output helpers ---------------------------------------------------------

def _outdir(cfg) -> str:
    out = str(cfg["output"])
    os.makedirs(out, exist_ok=True)
    return out


def _setup_logging(cfg, out):
    log.handlers.clear()
    log.setLevel(logging.DEBUG)
    log.propagate = False
    err = logging.StreamHandler(sys.stderr)
    err.setLevel(logging.WARNING - 10 * min(int(cfg.get("verbosity", 0)), 2))
    err.setFormatter(logging.Formatter("%(levelname)s: %(message)s"))
    log.addHandler(err)
    side = logging.FileHandler(os.path.join(out, "run.log"))
    side.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(message)s"))
    log.addHandler(side)


def _write_json(path, doc):
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")


def _write_config(out, cfg, name="config.json"):
    _write_json(os.path.join(out, name), cfg)


def _write_draws(out, prefix, draws, diag):
    draws.to_csv(os.path.join(out, f"{prefix}draws.csv"))
    draws.stats_to_csv(os.path.join(out, f"{prefix}sampler_stats.csv"))
    diag.save(os.path.join(out, f"{prefix}diagnostics.json"))
    log.info("chain seconds: %s", [round(float(s), 3) for s in draws.stats.get("seconds", [])])


def _load_draws(path):
    if not os.path.exists(path):
        raise ConfigError(f"draws file not found: {path}")
    stats = path.replace("draws.csv", "sampler_stats.csv") if path.endswith("draws.csv") else None
    try:
        return PosteriorDraws.from_csv(path, stats if stats and os.path.exists(stats) else None)
    except ValueError as exc:
        raise ShapeError(str(exc)) from exc


def _run_sampler(model, sc, out, prefix):
    try:
        draws, diag = sample(model, sc)
    except SamplerError as exc:
        _write_json(os.path.join(out, f"{prefix}diagnostics.json"),
                    {"error": str(exc), "rhat_max": None, "divergences": None})
        raise
    _write_draws(out, prefix, draws, diag)
    if not diag.converged():
        log.warning("R-hat %.4f exceeds 1.01", diag.rhat_max)
    return draws, diag


# -- commands ----------------------------------------------------------------

def cmd_basis(cfg, args):
    out = _outdir(cfg)
    basis = make_basis(cfg)
    path = args.output_file or os.path.join(out, "basis.json")
    basis.save(path)
    log.info("basis with M=%d written to %s", basis.M, path)
    return EXIT_OK


def cmd_fit(cfg, args):
    out = _outdir(cfg)
    problem = _problem(cfg)
    if args.basis:
        cfg["basis"]["file"] = args.basis
    basis = make_basis(cfg, problem)
    basis.save(os.path.join(out, "basis.json"))
    _, y, Psi = _training_data(cfg, problem, basis)
    mode, prior = _prior(cfg)
    try:
        model = LogDensityModel(Psi, y, mode, prior)
    except ValueError as exc:
        raise ShapeError(str(exc)) from exc
    _write_config(out, cfg)
    _run_sampler(model, _sampler(cfg), out, "")
    return EXIT_OK


def _reference_design(cfg, args):
    problem = _problem(cfg)
    basis_path = args.basis or cfg["basis"].get("file")
    if basis_path:
        if not os.path.exists(basis_path):
            raise ConfigError(f"basis file not found: {basis_path}")
        cfg["basis"]["file"] = basis_path
    basis = make_basis(cfg, problem)
    _, y, Psi = _training_data(cfg, problem, basis)
    return basis, y, Psi


def cmd_select(cfg, args):
    out = _outdir(cfg)
    method = cfg["selection"].get("method", "projpred")
    M_sel = cfg["selection"].get("M_sel", 25)
    if not isinstance(M_sel, int):
        raise ConfigError("selection.M_sel must be an integer")
    draws = _load_draws(args.draws or os.path.join(out, "draws.csv"))
    basis, _, Psi = _reference_design(cfg, args)
    n_coef = sum(n.startswith("c_") for n in draws.names)
    if n_coef != basis.M:
        raise ShapeError(f"draws have {n_coef} coefficients, basis has M={basis.M}")
    try:
        if method == "sobol":
            sel = select_sobol(sobol_indices(draws, basis), M_sel)
        elif method == "projpred":
            sel = select_projpred(draws, Psi, M_sel, basis_multi_indices=basis.multi_indices)
        else:
            raise ConfigError(f"selection.method must be 'sobol' or 'projpred', got {method!r}")
    except ValueError as exc:
        raise ConfigError(f"selection: {exc}") from exc
    sel.save(args.output_file or os.path.join(out, "selection.json"))
    return EXIT_OK


def cmd_refit(cfg, args):
    out = _outdir(cfg)
    path = args.selection or os.path.join(out, "selection.json")
    if not os.path.exists(path):
        raise ConfigError(f"selection file not found: {path}")
    try:
        sel = SelectionResult.load(path)
    except (KeyError, ValueError, json.JSONDecodeError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    basis, y, Psi = _reference_design(cfg, args)
    if sel.indices.max() >= basis.M:
        raise ShapeError(f"selection references index {sel.indices.max()} but basis has M={basis.M}")
    mode, prior = _prior(cfg)
    sc = _sampler(cfg)
    try:
        model = LogDensityModel(Psi[:, sel.indices], y, mode, prior,
                                basis_indices=tuple(sel.indices.tolist()))
    except ValueError as exc:
        raise ShapeError(str(exc)) from exc
    _run_sampler(model, sc, out, "refit_")
    return EXIT_OK


def cmd_predict(cfg, args):
    out = _outdir(cfg)
    draws = _load_draws(args.draws or os.path.join(out, "draws.csv"))
    basis_path = args.basis or cfg["basis"].get("file") or os.path.join(out, "basis.json")
    if not os.path.exists(basis_path):
        raise ConfigError(f"basis file not found: {basis_path}")
    basis = MultiIndexBasis.load(basis_path)
    if not args.inputs or not os.path.exists(args.inputs):
        raise ConfigError(f"inputs file not found: {args.inputs}")
    _, X = _read_table(args.inputs)
    if X.shape[1] != basis.N:
        raise ShapeError(f"inputs have {X.shape[1]} columns, basis has N={basis.N}")
    idx = [int(n[2:]) for n in draws.names if n.startswith("c_")]
    if not idx or max(idx) >= basis.M:
        raise ShapeError(f"draws reference basis index {max(idx, default=-1)}, basis has M={basis.M}")
    ps = predict(draws, basis, X, noise=args.noise, seed=cfg["noise"].get("seed"))
    lo, hi = ps.interval(0.95, noisy=args.noise)
    with open(args.output_file or os.path.join(out, "predictions.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["point", "mean", "q2.5", "q97.5"])
        for k in range(X.shape[0]):
            w.writerow([k, repr(float(ps.mean[k])), repr(float(lo[k])), repr(float(hi[k]))])
    return EXIT_OK


def cmd_diagnose(cfg, args):
    out = _outdir(cfg)
    path = args.draws or os.path.join(out, "draws.csv")
    draws = _load_draws(path)
    try:
        diag = compute_diagnostics(draws)
    except ValueError as exc:
        raise ShapeError(str(exc)) from exc
    doc = diag.to_dict()
    doc["converged"] = diag.converged()
    _write_json(args.output_file or os.path.join(out, "diagnose.json"), doc)
    print(f"draws={draws.n_draws} chains={draws.n_chains} rhat_max={diag.rhat_max:.4f} "
          f"divergences={diag.divergences} converged={diag.converged()}")
    return EXIT_OK


# benchmark ---------------------------------------------------------------

def benchmark_cells(cfg) -> list:
    """Experiment cells in a fixed order; each is a plain dict safe to pickle."""
    b = cfg["benchmark"]
    degrees = b.get("degrees", [cfg["basis"].get("degree", 10)])
    Ts = b.get("T", [cfg["design"]["T"]])
    designs = b.get("designs", [cfg["design"]["kind"]])
    noise = b.get("noise_sd", [float(cfg["noise"].get("sd", 0.0))])
    reps = int(b.get("replicates", 1))
    if Ts != "degree+1" and not isinstance(Ts, list):
        raise ConfigError("benchmark.T must be a list or 'degree+1'")
    cells = []
    for kind, d in itertools.product(designs, degrees):
        for T in ([d + 1] if Ts == "degree+1" else Ts):
            for sd, r in itertools.product(noise, range(reps)):
                cells.append({"design": {**cfg["design"], "kind": kind, "T": int(T)}, "degree": int(d),
                              "noise_sd": float(sd), "replicate": r})
    return cells


def _run_cell(cfg, cell):
    problem = _problem(cfg)
    b = cfg["benchmark"]
    mode, prior = _prior(cfg)
    sc = _sampler(cfg, seed_offset=cell["replicate"])
    methods = list(b.get("methods", ["reference", "sobol", "projpred"]))
    if mode == "flat" and "reference" in methods:
        raise ConfigError("benchmark reference fits use the R2D2 prior; list 'flat' as a method instead")
    spec = bench.DesignSpec(cell["design"]["kind"], cell["design"]["T"],
                            int(cell["design"].get("seed", 0)), int(cell["design"].get("skip", 1)))
    rep = bench.run_experiment(problem, spec, cell["degree"], prior=prior, sampler_cfg=sc,
                               methods=methods, M_sel=int(b.get("M_sel", cfg["selection"]["M_sel"])),
                               noise_sd=cell["noise_sd"],
                               noise_seed=int(cfg["noise"].get("seed", 12345)) + cell["replicate"],
                               n_test=int(cfg["test"]["n"]), test_seed=int(cfg["test"]["seed"]),
                               ridge_lambda=float(b.get("ridge_lambda", 1e-6)))
    return rep


def _cell_entry(cfg, cell):
    try:
        return ("ok", _run_cell(cfg, cell))
    except SamplerError as exc:
        return ("sampler", str(exc))
    except BasisError as exc:
        return ("basis", str(exc))


def cmd_benchmark(cfg, args):
    out = _outdir(cfg)
    cells = benchmark_cells(cfg)
    workers = max(1, int(args.workers or 1))
    log.info("benchmark: %d cells on %d workers", len(cells), workers)
    if workers > 1 and len(cells) > 1:
        ctx = multiprocessing.get_context("fork")
        with ProcessPoolExecutor(max_workers=workers, mp_context=ctx) as pool:
            results = list(pool.map(_cell_entry, [cfg] * len(cells), cells))
    else:
        results = [_cell_entry(cfg, c) for c in cells]
    reports, rows, long_rows, timing = [], [], [], []
    failures = []
    for cell, (status, rep) in zip(cells, results):
        tag = {"design": cell["design"]["kind"], "degree": cell["degree"],
               "noise_sd": cell["noise_sd"], "replicate": cell["replicate"]}
        if status != "ok":
            failures.append((status, rep))
            log.error("cell %s failed: %s", tag, rep)
            reports.append({**tag, "T": cell["design"]["T"], "error": rep})
            continue
        doc = rep.to_dict(timings=False)
        doc["replicate"] = cell["replicate"]
        reports.append(doc)
        for r, base in zip(rep.rows, rep.csv_rows()):
            base.pop("fit_seconds")
            rows.append({**base, "degree": rep.degree, "design": tag["design"],
                         "noise_sd": rep.noise_sd, "replicate": cell["replicate"]})
            timing.append({"problem": rep.problem, "T": rep.T, "degree": rep.degree,
                           "design": tag["design"], "noise_sd": rep.noise_sd,
                           "replicate": cell["replicate"], "method": r["method"],
                           "fit_seconds": r.get("fit_seconds")})
        long_rows.extend({**lr, "replicate": cell["replicate"]} for lr in rep.long_rows()
                         if lr["metric"] != "fit_seconds")
    _write_config(out, cfg)
    _write_json(os.path.join(out, "benchmark.json"), reports)
    if rows:
        bench.write_csv(os.path.join(out, "benchmark.csv"), rows)
        bench.write_csv(os.path.join(out, "benchmark_long.csv"), long_rows)
        bench.write_csv(os.path.join(out, "timings.csv"), timing)
    if failures:
        kind = failures[0][0]
        return EXIT_SAMPLER if kind == "sampler" else EXIT_BASIS
    return EXIT_OK


COMMANDS = {
    "basis": cmd_basis,
    "fit": cmd_fit,
    "select": cmd_select,
    "refit": cmd_refit,
    "predict": cmd_predict,
    "benchmark": cmd_benchmark,
    "diagnose": cmd_diagnose,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bspce", description="Bayesian sparse polynomial chaos expansions")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", "-c", help="JSON configuration document")
        p.add_argument("--set", action="append", default=[], metavar="BLOCK.KEY=VALUE",
                       help="override one configuration key (value parsed as JSON when possible)")
        p.add_argument("--out", help="output directory")
        p.add_argument("--seed", type=int, help="sampler seed")
        p.add_argument("-v", "--verbose", action="count", default=0)
        p.add_argument("-o", "--output-file", help="primary output path")
        if name in ("fit", "select", "refit", "predict"):
            p.add_argument("--basis", help="basis JSON file")
        if name in ("select", "predict", "diagnose"):
            p.add_argument("--draws", help="draws CSV")
        if name == "select":
            p.add_argument("--method", choices=["sobol", "projpred"])
            p.add_argument("--M-sel", dest="M_sel", type=int)
        if name == "refit":
            p.add_argument("--selection", help="selection JSON")
        if name == "predict":
            p.add_argument("--inputs", help="CSV of input points (header row, one column per input)")
            p.add_argument("--noise", action="store_true", help="intervals include observation noise")
        if name == "benchmark":
            p.add_argument("--preset", choices=sorted(PRESETS))
            p.add_argument("--workers", type=int, default=1, help="worker processes for experiment cells")
    return parser


def _flag_overrides(args) -> list:
    extra = []
    if args.out:
        extra.append(f"output={json.dumps(args.out)}")
    if args.seed is not None:
        extra.append(f"sampler.seed={args.seed}")
    if args.verbose:
        extra.append(f"verbosity={args.verbose}")
    if getattr(args, "method", None):
        extra.append(f"selection.method={json.dumps(args.method)}")
    if getattr(args, "M_sel", None) is not None:
        extra.append(f"selection.M_sel={args.M_sel}")
    return extra


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config, list(args.set) + _flag_overrides(args), getattr(args, "preset", None))
        _setup_logging(cfg, _outdir(cfg))
        log.info("command %s", args.command)
        code = COMMANDS[args.command](cfg, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except BasisError as exc:
        print(f"basis error: {exc}", file=sys.stderr)
        return EXIT_BASIS
    except SamplerError as exc:
        print(f"sampler error: {exc}", file=sys.stderr)
        return EXIT_SAMPLER
    except ShapeError as exc:
        print(f"shape error: {exc}", file=sys.stderr)
        return EXIT_SHAPE
    finally:
        for h in list(log.handlers):
            h.close()
            log.removeHandler(h)
    return code


if __name__ == "__main__":
    sys.exit(main())
