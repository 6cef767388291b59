"""
Adaptive NUTS sampling with multi-chain execution and convergence diagnostics.

Warmup follows the usual three-phase layout: a fast interval where only the
step size adapts, a sequence of doubling slow windows that estimate a diagonal
inverse metric, and a final fast interval. The step size is tuned by dual
averaging toward ``target_accept``.

Every chain owns a Philox stream spawned from one seed, so results depend
only on the seed and configuration, not on scheduling.
"""

from __future__ import annotations

import csv
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
import multiprocessing

import numpy as np
from scipy.special import ndtri
from scipy.stats import rankdata

from . import _backend

__all__ = [
    "SamplerConfig",
    "SamplerError",
    "PosteriorDraws",
    "Diagnostics",
    "CallableTarget",
    "sample",
    "compute_diagnostics",
    "split_rhat",
    "ess_bulk",
    "ess_tail",
    "ess_mean",
    "mcse_mean",
]

INIT_RETRIES = 100


class SamplerError(RuntimeError):
    pass


@dataclass(frozen=True)
class SamplerConfig:
    """Sampler settings.

    ``init`` is one of ``"random"`` (uniform on ``(-init_radius, init_radius)``
    in unconstrained space), ``"given"`` (``init_point``) or ``"mle"``.
    """

    chains: int = 2
    iterations: int = 2000
    warmup: int = 1000
    target_accept: float = 0.8
    max_depth: int = 10
    seed: int = 0
    init: str = "random"
    init_radius: float = 2.0
    init_point: tuple | None = None
    n_jobs: int = 1
    backend: str | None = None

    def __post_init__(self):
        if self.chains < 1:
            raise ValueError("chains must be >= 1")
        if not 0 <= self.warmup < self.iterations:
            raise ValueError("need 0 <= warmup < iterations")
        if not 0 < self.target_accept < 1:
            raise ValueError("target_accept must lie in (0, 1)")
        if self.max_depth < 1:
            raise ValueError("max_depth must be >= 1")
        if self.init not in ("random", "given", "mle"):
            raise ValueError(f"unknown init mode {self.init!r}")
        if self.init == "given" and self.init_point is None:
            raise ValueError("init='given' needs init_point")

    @property
    def draws_per_chain(self) -> int:
        return self.iterations - self.warmup

    def to_dict(self) -> dict:
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in self.__dict__.items()}

    @classmethod
    def from_dict(cls, doc: dict) -> "SamplerConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(doc) - known
        if unknown:
            raise KeyError(f"unknown sampler keys: {sorted(unknown)}")
        doc = dict(doc)
        if doc.get("init_point") is not None:
            doc["init_point"] = tuple(float(v) for v in doc["init_point"])
        return cls(**doc)


class CallableTarget:
    """Wraps ``logp_grad(u) -> (logp, grad)`` as a sampler target with identity constraints."""

    def __init__(self, logp_grad, dim: int, names=None):
        self.logp_grad_fn = logp_grad
        self.dim = int(dim)
        self.param_names = list(names) if names is not None else [f"x_{i}" for i in range(self.dim)]
        self.density = _backend.core.PyDensity(logp_grad, self.dim)

    def constrain_draws(self, U):
        return np.atleast_2d(U)


# -- warmup machinery ----------------------------------------------------

class _DualAveraging:
    def __init__(self, step_size, target, gamma=0.05, t0=10.0, kappa=0.75):
        self.target, self.gamma, self.t0, self.kappa = target, gamma, t0, kappa
        self.restart(step_size)

    def restart(self, step_size):
        self.mu = math.log(10.0 * step_size)
        self.s_bar = 0.0
        self.x_bar = 0.0
        self.counter = 0

    def update(self, accept_stat):
        self.counter += 1
        accept_stat = min(1.0, accept_stat)
        eta = 1.0 / (self.counter + self.t0)
        self.s_bar = (1.0 - eta) * self.s_bar + eta * (self.target - accept_stat)
        x = self.mu - self.s_bar * math.sqrt(self.counter) / self.gamma
        w = self.counter ** (-self.kappa)
        self.x_bar = (1.0 - w) * self.x_bar + w * x
        return math.exp(x)

    def final(self):
        return math.exp(self.x_bar)


def warmup_windows(warmup: int, init_frac=0.15, term_frac=0.10, base_window=25):
    """Ends (exclusive) of the slow metric windows, as iteration indices.

    Returns an empty list if the warmup is too short for metric adaptation.
    """
    init_buf = int(init_frac * warmup)
    term_buf = int(term_frac * warmup)
    slow = warmup - init_buf - term_buf
    if warmup < 20 or slow < base_window:
        return []
    ends = []
    start, size = init_buf, base_window
    while True:
        end = start + size
        # stretch the last window when the next one would not fit
        if end + 2 * size > init_buf + slow:
            ends.append(init_buf + slow)
            break
        ends.append(end)
        start, size = end, 2 * size
    return ends


class _Welford:
    def __init__(self, dim):
        self.n = 0
        self.mean = np.zeros(dim)
        self.m2 = np.zeros(dim)

    def add(self, x):
        self.n += 1
        d = x - self.mean
        self.mean += d / self.n
        self.m2 += d * (x - self.mean)

    def regularized_variance(self):
        n = self.n
        var = self.m2 / (n - 1)
        return (n / (n + 5.0)) * var + 1e-3 * (5.0 / (n + 5.0))


def _find_initial_step(core, density, q, lp, g, inv_metric, rng, step=1.0):
    # double or halve until the one-step acceptance crosses 0.8
    p = rng.standard_normal(q.size) / np.sqrt(inv_metric)
    H0 = -lp + 0.5 * float(p @ (inv_metric * p))
    _, p1, lp1, _ = core.leapfrog(density, q, p, g, inv_metric, step, 1)
    h = -lp1 + 0.5 * float(p1 @ (inv_metric * p1))
    delta = H0 - h if math.isfinite(h) else -math.inf
    direction = 1 if delta > math.log(0.8) else -1
    for _ in range(100):
        p = rng.standard_normal(q.size) / np.sqrt(inv_metric)
        H0 = -lp + 0.5 * float(p @ (inv_metric * p))
        _, p1, lp1, _ = core.leapfrog(density, q, p, g, inv_metric, step, 1)
        h = -lp1 + 0.5 * float(p1 @ (inv_metric * p1))
        delta = H0 - h if math.isfinite(h) else -math.inf
        if direction == 1 and not delta > math.log(0.8):
            break
        if direction == -1 and not delta < math.log(0.8):
            break
        step = step * 2.0 if direction == 1 else step * 0.5
        if step > 1e7 or step < 1e-12:
            break
    return step


def _evaluate(density, q):
    try:
        with np.errstate(all="ignore"):
            lp, g = density.logp_grad(q)
    except (FloatingPointError, OverflowError, ValueError, ZeroDivisionError):
        return -math.inf, None
    g = np.asarray(g, dtype=float)
    if not (math.isfinite(lp) and np.all(np.isfinite(g))):
        return -math.inf, None
    return float(lp), g


def _initial_point(model, cfg, rng):
    density = model.density
    if cfg.init in ("given", "mle"):
        q = np.asarray(cfg.init_point if cfg.init == "given" else model.mle_point(), dtype=float)
        if q.shape != (model.dim,):
            raise SamplerError(f"initial point has length {q.size}, expected {model.dim}")
        lp, g = _evaluate(density, q)
        if g is None:
            raise SamplerError("log density is not finite at the initial point")
        return q, lp, g
    for _ in range(INIT_RETRIES):
        q = rng.uniform(-cfg.init_radius, cfg.init_radius, model.dim)
        lp, g = _evaluate(density, q)
        if g is not None:
            return q, lp, g
    raise SamplerError(f"log density not finite at {INIT_RETRIES} random initializations")


def _run_chain(model, cfg: SamplerConfig, chain: int, seed_seq):
    with np.errstate(all="ignore"):
        return _run_chain_inner(model, cfg, chain, seed_seq)


def _run_chain_inner(model, cfg, chain, seed_seq):
    core = _backend.get_core(cfg.backend)
    rng = np.random.Generator(np.random.Philox(seed_seq))
    dim = model.dim
    density = model.density
    n_unif = 2 ** cfg.max_depth + 2 * cfg.max_depth + 2
    t_start = time.perf_counter()

    q, lp, g = _initial_point(model, cfg, rng)
    inv_metric = np.ones(dim)
    step = _find_initial_step(core, density, q, lp, g, inv_metric, rng)
    da = _DualAveraging(step, cfg.target_accept)
    windows = warmup_windows(cfg.warmup)
    win_start = int(0.15 * cfg.warmup)
    welford = _Welford(dim)
    warm_divergent = 0

    n_keep = cfg.draws_per_chain
    U = np.empty((n_keep, dim))
    stats = {k: np.empty(n_keep) for k in ("lp", "accept_stat", "n_leapfrog", "depth", "energy")}
    divergent = np.zeros(n_keep, dtype=bool)

    for it in range(cfg.iterations):
        normals = rng.standard_normal(dim)
        uniforms = rng.random(n_unif)
        q, lp, g, acc, nl, depth, div, energy = core.nuts_transition(
            density, q, lp, g, inv_metric, step, cfg.max_depth, normals, uniforms)
        if it < cfg.warmup:
            warm_divergent += bool(div)
            step = da.update(acc)
            if windows and win_start <= it < windows[-1]:
                welford.add(q)
                if it + 1 in windows:
                    inv_metric = welford.regularized_variance()
                    welford = _Welford(dim)
                    step = _find_initial_step(core, density, q, lp, g, inv_metric, rng, step)
                    da.restart(step)
            if it + 1 == cfg.warmup:
                step = da.final()
                if warm_divergent == cfg.warmup:
                    raise SamplerError("sampler failed to adapt: every warmup transition diverged")
        else:
            k = it - cfg.warmup
            U[k] = q
            stats["lp"][k] = lp
            stats["accept_stat"][k] = acc
            stats["n_leapfrog"][k] = nl
            stats["depth"][k] = depth
            stats["energy"][k] = energy
            divergent[k] = div
    return {
        "chain": chain, "U": U, "stats": stats, "divergent": divergent,
        "step_size": step, "inv_metric": inv_metric, "seconds": time.perf_counter() - t_start,
    }


@dataclass
class PosteriorDraws:
    """Post-warmup draws in constrained space.

    ``values`` has one row per draw and one column per entry of ``names``;
    rows are grouped by chain in chain order.
    """

    names: list
    values: np.ndarray
    chain: np.ndarray
    iteration: np.ndarray
    divergent: np.ndarray
    lp: np.ndarray
    stats: dict = field(default_factory=dict)
    unconstrained: np.ndarray | None = None

    @property
    def n_draws(self) -> int:
        return self.values.shape[0]

    @property
    def n_chains(self) -> int:
        return int(np.unique(self.chain).size)

    def __getitem__(self, name):
        return self.values[:, self.names.index(name)]

    def coefficients(self) -> np.ndarray:
        """``S x M`` matrix of coefficient draws ``c_0..c_{M-1}``."""
        idx = [i for i, n in enumerate(self.names) if n.startswith("c_")]
        if not idx:
            raise KeyError("draws contain no coefficient columns")
        return self.values[:, idx]

    def by_chain(self, values=None) -> np.ndarray:
        """Reshape ``(S, ...)`` values to ``(chains, draws_per_chain, ...)``."""
        values = self.values if values is None else values
        chains = np.unique(self.chain)
        parts = [values[self.chain == c] for c in chains]
        n = min(len(p) for p in parts)
        return np.stack([p[:n] for p in parts])

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["chain", "iteration"] + list(self.names) + ["lp__"])
            for k in range(self.n_draws):
                w.writerow([int(self.chain[k]), int(self.iteration[k])]
                           + [repr(float(v)) for v in self.values[k]] + [repr(float(self.lp[k]))])

    STAT_FIELDS = ("accept_stat", "n_leapfrog", "depth", "energy")

    def stats_to_csv(self, path) -> None:
        """Per-draw sampler statistics, row-aligned with :meth:`to_csv`."""
        fields = [k for k in self.STAT_FIELDS if k in self.stats]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["chain", "iteration", "divergent"] + fields + ["max_depth"])
            depth_cap = int(self.stats.get("max_depth", -1))
            for k in range(self.n_draws):
                w.writerow([int(self.chain[k]), int(self.iteration[k]), int(self.divergent[k])]
                           + [repr(float(self.stats[f][k])) for f in fields] + [depth_cap])

    @classmethod
    def from_csv(cls, path, stats_path=None) -> "PosteriorDraws":
        """Read :meth:`to_csv` output, plus the statistics file when given."""
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        if not rows:
            raise ValueError(f"{path}: empty draws file")
        header, body = rows[0], rows[1:]
        if header[:2] != ["chain", "iteration"] or header[-1] != "lp__":
            raise ValueError(f"{path}: not a draws file")
        if any(len(r) != len(header) for r in body):
            raise ValueError(f"{path}: ragged rows")
        arr = np.array([[float(v) for v in r] for r in body]).reshape(len(body), len(header))
        draws = cls(names=header[2:-1], values=arr[:, 2:-1], chain=arr[:, 0].astype(int),
                    iteration=arr[:, 1].astype(int), divergent=np.zeros(len(body), dtype=bool),
                    lp=arr[:, -1])
        if stats_path is not None:
            with open(stats_path, newline="") as fh:
                srows = list(csv.reader(fh))
            sh, sb = srows[0], srows[1:]
            if sh[:3] != ["chain", "iteration", "divergent"] or len(sb) != len(body):
                raise ValueError(f"{stats_path}: statistics do not match the draws")
            sarr = np.array([[float(v) for v in r] for r in sb]).reshape(len(sb), len(sh))
            if not (np.array_equal(sarr[:, 0], arr[:, 0]) and np.array_equal(sarr[:, 1], arr[:, 1])):
                raise ValueError(f"{stats_path}: chain/iteration columns differ from the draws")
            draws.divergent = sarr[:, 2].astype(bool)
            for j, name in enumerate(sh[3:-1], start=3):
                draws.stats[name] = sarr[:, j]
            if sb:
                draws.stats["max_depth"] = int(sarr[0, -1])
        return draws


def sample(model, cfg: SamplerConfig | None = None):
    """Run ``cfg.chains`` NUTS chains on ``model``; returns ``(PosteriorDraws, Diagnostics)``.

    ``model`` needs ``density``, ``dim``, ``param_names`` and
    ``constrain_draws``; ``mle_point`` is used by ``init="mle"``.
    """
    cfg = cfg or SamplerConfig()
    seeds = np.random.SeedSequence(cfg.seed).spawn(cfg.chains)
    if cfg.n_jobs > 1 and cfg.chains > 1:
        ctx = multiprocessing.get_context("fork")
        with ProcessPoolExecutor(max_workers=min(cfg.n_jobs, cfg.chains), mp_context=ctx) as pool:
            futures = [pool.submit(_run_chain, model, cfg, c, seeds[c]) for c in range(cfg.chains)]
            results = [f.result() for f in futures]
    else:
        results = [_run_chain(model, cfg, c, seeds[c]) for c in range(cfg.chains)]
    results.sort(key=lambda r: r["chain"])

    U = np.concatenate([r["U"] for r in results])
    values = model.constrain_draws(U)
    n = cfg.draws_per_chain
    chain = np.repeat(np.arange(cfg.chains), n)
    iteration = np.tile(np.arange(cfg.warmup, cfg.iterations), cfg.chains)
    stat_names = results[0]["stats"].keys()
    stats = {k: np.concatenate([r["stats"][k] for r in results]) for k in stat_names}
    stats["step_size"] = np.array([r["step_size"] for r in results])
    stats["inv_metric"] = np.stack([r["inv_metric"] for r in results])
    stats["seconds"] = np.array([r["seconds"] for r in results])
    stats["max_depth"] = cfg.max_depth
    draws = PosteriorDraws(names=list(model.param_names), values=values, chain=chain,
                           iteration=iteration,
                           divergent=np.concatenate([r["divergent"] for r in results]),
                           lp=stats.pop("lp"), stats=stats, unconstrained=U)
    return draws, compute_diagnostics(draws)


# -- diagnostics ----------------------------------------------------------

def _split_chains(x):
    # x: (chains, n) -> (2 * chains, n // 2)
    x = np.atleast_2d(np.asarray(x, dtype=float))
    n = x.shape[1] // 2
    return np.concatenate([x[:, :n], x[:, x.shape[1] - n:]], axis=0)


def _rank_normalize(x):
    r = rankdata(x, method="average").reshape(x.shape)
    return ndtri((r - 0.375) / (x.size + 0.25))


def _rhat_basic(x):
    m, n = x.shape
    means = x.mean(axis=1)
    W = x.var(axis=1, ddof=1).mean()
    B = n * means.var(ddof=1)
    if W == 0:
        return np.inf if B > 0 else np.nan
    var_plus = (n - 1) / n * W + B / n
    return float(np.sqrt(var_plus / W))


def split_rhat(x) -> float:
    """Rank-normalized split R-hat, the larger of the bulk and folded versions.

    ``x`` has shape ``(chains, draws)``.
    """
    s = _split_chains(x)
    if np.all(s == s.flat[0]):
        return np.nan
    bulk = _rhat_basic(_rank_normalize(s))
    folded = _rhat_basic(_rank_normalize(np.abs(s - np.median(s))))
    return float(np.nanmax([bulk, folded]))


def _autocov(x):
    # biased autocovariance along axis 1 via FFT
    m, n = x.shape
    xc = x - x.mean(axis=1, keepdims=True)
    size = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(xc, size, axis=1)
    return np.fft.irfft(f * np.conj(f), size, axis=1)[:, :n] / n


def _ess_raw(x) -> float:
    # Geyer initial monotone sequence over the chain-combined autocorrelation
    m, n = x.shape
    if n < 4:
        return np.nan
    acov = _autocov(x)
    mean_var = acov[:, 0].mean() * n / (n - 1.0)
    var_plus = mean_var * (n - 1.0) / n
    if m > 1:
        var_plus += x.mean(axis=1).var(ddof=1)
    if var_plus <= 0:
        return np.nan
    rho = np.zeros(n)
    even, odd = 1.0, 1.0 - (mean_var - acov[:, 1].mean()) / var_plus
    rho[0], rho[1] = even, odd
    t = 1
    while t < n - 3 and even + odd > 0.0:
        even = 1.0 - (mean_var - acov[:, t + 1].mean()) / var_plus
        odd = 1.0 - (mean_var - acov[:, t + 2].mean()) / var_plus
        if even + odd >= 0:
            rho[t + 1], rho[t + 2] = even, odd
        t += 2
    max_t = t - 2
    if even > 0:
        rho[max_t + 1] = even
    t = 1
    while t <= max_t - 2:
        if rho[t + 1] + rho[t + 2] > rho[t - 1] + rho[t]:
            rho[t + 1] = rho[t + 2] = 0.5 * (rho[t - 1] + rho[t])
        t += 2
    total = m * n
    tau = -1.0 + 2.0 * rho[:max_t + 1].sum() + rho[max_t + 1:max_t + 2].sum()
    tau = max(tau, 1.0 / math.log10(total))
    return float(total / tau)


def ess_bulk(x) -> float:
    s = _split_chains(x)
    if np.all(s == s.flat[0]):
        return np.nan
    return _ess_raw(_rank_normalize(s))


def ess_tail(x) -> float:
    s = _split_chains(x)
    if np.all(s == s.flat[0]):
        return np.nan
    q05, q95 = np.quantile(s, [0.05, 0.95])
    lo = _ess_raw((s <= q05).astype(float))
    hi = _ess_raw((s <= q95).astype(float))
    return float(np.nanmin([lo, hi]))


def ess_mean(x) -> float:
    s = _split_chains(x)
    if np.all(s == s.flat[0]):
        return np.nan
    return _ess_raw(s)


def mcse_mean(x) -> float:
    """Monte Carlo standard error of the posterior mean, ``sd / sqrt(ESS)``."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    e = ess_mean(x)
    if not np.isfinite(e):
        return 0.0
    return float(x.std(ddof=1) / math.sqrt(e))


@dataclass
class Diagnostics:
    names: list
    rhat: np.ndarray
    ess_bulk: np.ndarray
    ess_tail: np.ndarray
    ess_mean: np.ndarray
    mcse_mean: np.ndarray
    divergences: int
    accept_mean: np.ndarray
    step_size: np.ndarray
    max_depth_hits: int = 0

    @property
    def rhat_max(self) -> float:
        finite = self.rhat[~np.isnan(self.rhat)]
        return float(finite.max()) if finite.size else 1.0

    def converged(self, threshold: float = 1.01) -> bool:
        return self.rhat_max <= threshold

    def to_dict(self) -> dict:
        def clean(a):
            return [None if not np.isfinite(v) else float(v) for v in np.asarray(a, dtype=float)]
        return {
            "rhat_max": self.rhat_max,
            "divergences": int(self.divergences),
            "max_depth_hits": int(self.max_depth_hits),
            "accept_mean": clean(self.accept_mean),
            "step_size": clean(self.step_size),
            "parameters": {n: {"rhat": r, "ess_bulk": b, "ess_tail": t, "ess_mean": e, "mcse_mean": s}
                           for n, r, b, t, e, s in zip(self.names, clean(self.rhat), clean(self.ess_bulk),
                                                       clean(self.ess_tail), clean(self.ess_mean),
                                                       clean(self.mcse_mean))},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1)

    def save(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.to_json())


def compute_diagnostics(draws, names=None) -> Diagnostics:
    """Convergence diagnostics for :class:`PosteriorDraws` or a ``(chains, n, P)`` array."""
    if isinstance(draws, PosteriorDraws):
        arr = draws.by_chain()
        names = draws.names
        divergences = int(draws.divergent.sum())
        st = draws.stats
        acc = (draws.by_chain(st["accept_stat"]).mean(axis=1) if "accept_stat" in st
               else np.full(arr.shape[0], np.nan))
        step = np.asarray(st.get("step_size", np.full(arr.shape[0], np.nan)), dtype=float)
        hits = int(np.sum(st["depth"] >= st["max_depth"])) if "depth" in st else 0
    else:
        arr = np.asarray(draws, dtype=float)
        if arr.ndim == 2:
            arr = arr[:, :, None]
        names = list(names) if names is not None else [f"x_{i}" for i in range(arr.shape[2])]
        divergences, hits = 0, 0
        acc = np.full(arr.shape[0], np.nan)
        step = np.full(arr.shape[0], np.nan)
    m, n, P = arr.shape
    if n < 4:
        raise ValueError("diagnostics need at least 4 draws per chain")
    cols = [arr[:, :, j] for j in range(P)]
    return Diagnostics(
        names=list(names),
        rhat=np.array([split_rhat(c) for c in cols]),
        ess_bulk=np.array([ess_bulk(c) for c in cols]),
        ess_tail=np.array([ess_tail(c) for c in cols]),
        ess_mean=np.array([ess_mean(c) for c in cols]),
        mcse_mean=np.array([mcse_mean(c) for c in cols]),
        divergences=divergences, accept_mean=np.asarray(acc), step_size=step, max_depth_hits=hits,
    )
