"""
Pure-Python/numpy implementations of the numerical kernels.

This module mirrors the compiled ``_core`` extension function for function.
It is used when the extension is not built or when ``BSPCE_PURE_PYTHON`` is
set, and it is the reference the compiled kernels are tested against.

Random numbers are never drawn here. Callers pass standard-normal momenta and
a buffer of uniforms that the NUTS transition consumes in a fixed order, so
both backends walk the same trajectory for the same inputs.
"""

import math

import numpy as np

BACKEND = "python"

_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)
_LOG2 = math.log(2.0)


def design_product(tables, alphas):
    """Tensor-product design matrix.

    Parameters
    ----------
    tables : ndarray, shape (N, T, d+1)
        ``tables[j, k, a]`` is the degree-``a`` univariate polynomial of
        dimension ``j`` at sample ``k``.
    alphas : ndarray of int, shape (M, N)

    Returns
    -------
    ndarray, shape (T, M)
    """
    N, T, _ = tables.shape
    out = np.ones((T, alphas.shape[0]))
    for j in range(N):
        out *= tables[j][:, alphas[:, j]]
    return out


def _softplus(x):
    return np.logaddexp(0.0, x)


class R2D2Density:
    """Log posterior of the Gaussian PCE regression with an R2D2 prior.

    Unconstrained layout (``K`` non-constant terms, dimension ``2K + 2``)::

        [z0, z_1..z_K, log sigma, logit R2, y_1..y_{K-1}]

    with ``c0 = c0_mean + c0_sd * z0``, ``c_i = z_i * sqrt(phi_i * tau2) * sigma``,
    ``tau2 = R2 / (1 - R2)`` and ``phi`` from stick-breaking of ``y``.
    """

    def __init__(self, Psi1, y, c0_mean, c0_sd, sigma_scale, a1, a2, theta):
        self.Psi1 = np.ascontiguousarray(Psi1, dtype=float)
        self.y = np.ascontiguousarray(y, dtype=float)
        self.T, self.K = self.Psi1.shape
        self.c0_mean = float(c0_mean)
        self.c0_sd = float(c0_sd)
        self.sigma_scale = float(sigma_scale)
        self.a1 = float(a1)
        self.a2 = float(a2)
        self.theta = np.ascontiguousarray(theta, dtype=float)
        self.dim = 2 * self.K + 2
        K = self.K
        self._offsets = np.log(K - np.arange(1, K)) if K > 1 else np.zeros(0)
        self._const = (
            -self.T * _HALF_LOG_2PI
            - (K + 1) * _HALF_LOG_2PI
            + _LOG2 - _HALF_LOG_2PI - math.log(self.sigma_scale)
            + math.lgamma(self.a1 + self.a2) - math.lgamma(self.a1) - math.lgamma(self.a2)
            + math.lgamma(float(self.theta.sum())) - float(sum(math.lgamma(t) for t in self.theta))
        )

    def log_phi(self, ystick):
        """Log simplex weights and the stick-breaking pieces used by the gradient."""
        K = self.K
        if K == 1:
            return np.zeros(1), np.zeros(0), 0.0
        logphi = np.empty(K)
        x = ystick - self._offsets
        log_z = -_softplus(-x)
        log_1mz = -_softplus(x)
        remaining = np.concatenate(([0.0], np.cumsum(log_1mz)))
        logphi[:-1] = remaining[:-1] + log_z
        logphi[-1] = remaining[-1]
        zk = np.exp(log_z)
        logjac = float(np.sum(remaining[:-1] + log_z + log_1mz))
        return logphi, zk, logjac

    def logp_grad(self, u):
        u = np.asarray(u, dtype=float)
        K, T = self.K, self.T
        z0 = u[0]
        z = u[1:K + 1]
        log_sigma = u[K + 1]
        logit_r2 = u[K + 2]
        ystick = u[K + 3:]
        logphi, zk, logjac = self.log_phi(ystick)
        sigma = math.exp(log_sigma)
        scale = np.exp(0.5 * (logphi + logit_r2) + log_sigma)
        c = z * scale
        c0 = self.c0_mean + self.c0_sd * z0
        r = self.y - c0 - self.Psi1 @ c
        inv_s2 = 1.0 / (sigma * sigma)
        rss = float(r @ r)
        gc = (self.Psi1.T @ r) * inv_s2
        log_r2 = -_softplus(-logit_r2)
        log_1mr2 = -_softplus(logit_r2)
        r2 = math.exp(log_r2)

        lp = (
            self._const
            - T * log_sigma - 0.5 * rss * inv_s2
            - 0.5 * z0 * z0 - 0.5 * float(z @ z)
            - 0.5 * sigma * sigma / (self.sigma_scale ** 2) + log_sigma
            + self.a1 * log_r2 + self.a2 * log_1mr2
            + float((self.theta - 1.0) @ logphi) + logjac
        )

        grad = np.empty(self.dim)
        grad[0] = self.c0_sd * float(r.sum()) * inv_s2 - z0
        grad[1:K + 1] = gc * scale - z
        gcc = float(gc @ c)
        grad[K + 1] = -T + rss * inv_s2 + gcc - sigma * sigma / (self.sigma_scale ** 2) + 1.0
        grad[K + 2] = 0.5 * gcc + self.a1 * (1.0 - r2) - self.a2 * r2
        if K > 1:
            h = 0.5 * gc * c + self.theta - 1.0
            suffix = np.cumsum(h[::-1])[::-1]
            kk = np.arange(1, K)
            grad[K + 3:] = (h[:-1] * (1.0 - zk) - zk * suffix[1:]
                            + 1.0 - zk * (K + 1 - kk))
        return lp, grad


class FlatDensity:
    """Log posterior with a flat prior on the non-constant coefficients.

    Layout ``[z0, c_1..c_K, log sigma]``; ``c0`` keeps its normal prior and
    ``sigma`` its half-normal prior.
    """

    def __init__(self, Psi1, y, c0_mean, c0_sd, sigma_scale):
        self.Psi1 = np.ascontiguousarray(Psi1, dtype=float)
        self.y = np.ascontiguousarray(y, dtype=float)
        self.T, self.K = self.Psi1.shape
        self.c0_mean = float(c0_mean)
        self.c0_sd = float(c0_sd)
        self.sigma_scale = float(sigma_scale)
        self.dim = self.K + 2
        self._const = (-self.T * _HALF_LOG_2PI - _HALF_LOG_2PI
                       + _LOG2 - _HALF_LOG_2PI - math.log(self.sigma_scale))

    def logp_grad(self, u):
        u = np.asarray(u, dtype=float)
        K, T = self.K, self.T
        z0 = u[0]
        c = u[1:K + 1]
        log_sigma = u[K + 1]
        sigma = math.exp(log_sigma)
        c0 = self.c0_mean + self.c0_sd * z0
        r = self.y - c0 - self.Psi1 @ c
        inv_s2 = 1.0 / (sigma * sigma)
        rss = float(r @ r)
        lp = (self._const - T * log_sigma - 0.5 * rss * inv_s2 - 0.5 * z0 * z0
              - 0.5 * sigma * sigma / (self.sigma_scale ** 2) + log_sigma)
        grad = np.empty(self.dim)
        grad[0] = self.c0_sd * float(r.sum()) * inv_s2 - z0
        grad[1:K + 1] = (self.Psi1.T @ r) * inv_s2
        grad[K + 1] = -T + rss * inv_s2 - sigma * sigma / (self.sigma_scale ** 2) + 1.0
        return lp, grad


class PyDensity:
    """Adapter for a Python callable ``f(u) -> (logp, grad)``."""

    def __init__(self, fn, dim):
        self.fn = fn
        self.dim = int(dim)

    def logp_grad(self, u):
        lp, g = self.fn(np.asarray(u, dtype=float))
        return float(lp), np.asarray(g, dtype=float)


def _safe_logp_grad(density, q):
    try:
        lp, g = density.logp_grad(q)
    except (FloatingPointError, OverflowError, ValueError, ZeroDivisionError):
        return -math.inf, np.zeros_like(q)
    if not math.isfinite(lp) or not np.all(np.isfinite(g)):
        return -math.inf, np.zeros_like(q)
    return lp, g


def leapfrog(density, q, p, grad, inv_metric, step_size, n_steps):
    """``n_steps`` leapfrog steps; returns ``(q, p, logp, grad)``."""
    q = np.array(q, dtype=float)
    p = np.array(p, dtype=float)
    g = np.array(grad, dtype=float)
    lp = -math.inf
    for _ in range(n_steps):
        p += 0.5 * step_size * g
        q += step_size * inv_metric * p
        lp, g = _safe_logp_grad(density, q)
        p += 0.5 * step_size * g
    return q, p, lp, g


def _uturn_free(psharp_a, psharp_b, rho):
    return float(psharp_a @ rho) > 0.0 and float(psharp_b @ rho) > 0.0


class _Trajectory:
    __slots__ = ("density", "inv_metric", "eps", "H0", "uniforms", "cursor",
                 "n_leapfrog", "sum_metro", "divergent", "max_delta_h")


class _Subtree:
    __slots__ = ("q", "p", "g", "lp",                      # far end state
                 "p_beg", "p_end", "ps_beg", "ps_end",
                 "rho", "log_w", "prop_q", "prop_lp", "prop_g")


def _build_tree(tr, depth, q, p, g, lp, direction):
    """Grow a subtree of ``2**depth`` leapfrog steps from ``(q, p)``.

    Returns ``(valid, subtree)``.
    """
    if depth == 0:
        eps = direction * tr.eps
        p1 = p + 0.5 * eps * g
        q1 = q + eps * tr.inv_metric * p1
        lp1, g1 = _safe_logp_grad(tr.density, q1)
        p1 = p1 + 0.5 * eps * g1
        tr.n_leapfrog += 1
        h = -lp1 + 0.5 * float(p1 @ (tr.inv_metric * p1))
        if not math.isfinite(h):
            h = math.inf
        if h - tr.H0 > tr.max_delta_h:
            tr.divergent = True
        st = _Subtree()
        st.q, st.p, st.g, st.lp = q1, p1, g1, lp1
        st.log_w = tr.H0 - h
        tr.sum_metro += 1.0 if tr.H0 - h > 0 else math.exp(tr.H0 - h)
        st.prop_q, st.prop_lp, st.prop_g = q1, lp1, g1
        st.p_beg = st.p_end = p1
        st.ps_beg = st.ps_end = tr.inv_metric * p1
        st.rho = p1.copy()
        return not tr.divergent, st

    ok, left = _build_tree(tr, depth - 1, q, p, g, lp, direction)
    if not ok:
        return False, left
    ok, right = _build_tree(tr, depth - 1, left.q, left.p, left.g, left.lp, direction)
    if not ok:
        return False, right

    log_w = np.logaddexp(left.log_w, right.log_w)
    accept = math.exp(right.log_w - log_w)
    u = tr.uniforms[tr.cursor]
    tr.cursor += 1
    st = _Subtree()
    if u < accept:
        st.prop_q, st.prop_lp, st.prop_g = right.prop_q, right.prop_lp, right.prop_g
    else:
        st.prop_q, st.prop_lp, st.prop_g = left.prop_q, left.prop_lp, left.prop_g
    st.q, st.p, st.g, st.lp = right.q, right.p, right.g, right.lp
    st.log_w = log_w
    st.rho = left.rho + right.rho
    st.p_beg, st.ps_beg = left.p_beg, left.ps_beg
    st.p_end, st.ps_end = right.p_end, right.ps_end
    persist = (_uturn_free(st.ps_beg, st.ps_end, st.rho)
               and _uturn_free(left.ps_beg, right.ps_beg, left.rho + right.p_beg)
               and _uturn_free(left.ps_end, right.ps_end, right.rho + left.p_end))
    return persist, st


def nuts_transition(density, q0, lp0, grad0, inv_metric, step_size, max_depth,
                    normals, uniforms, max_delta_h=1000.0):
    """One multinomial NUTS transition with the generalized U-turn criterion.

    Parameters
    ----------
    normals : ndarray
        Standard normal draws, turned into the momentum ``normals / sqrt(inv_metric)``.
    uniforms : ndarray
        At least ``2**max_depth + 2*max_depth`` uniforms on [0, 1).

    Returns
    -------
    tuple
        ``(q, logp, grad, accept_stat, n_leapfrog, depth, divergent, energy)``.
    """
    inv_metric = np.asarray(inv_metric, dtype=float)
    q0 = np.asarray(q0, dtype=float)
    p0 = np.asarray(normals, dtype=float) / np.sqrt(inv_metric)
    H0 = -lp0 + 0.5 * float(p0 @ (inv_metric * p0))

    tr = _Trajectory()
    tr.density, tr.inv_metric, tr.eps, tr.H0 = density, inv_metric, float(step_size), H0
    tr.uniforms, tr.cursor = uniforms, 0
    tr.n_leapfrog, tr.sum_metro, tr.divergent = 0, 0.0, False
    tr.max_delta_h = max_delta_h

    ps0 = inv_metric * p0
    # backward (L) and forward (R) ends of the whole trajectory
    qL, pL, gL, lpL = q0, p0, grad0, lp0
    qR, pR, gR, lpR = q0, p0, grad0, lp0
    psL = psR = ps0
    rho = p0.copy()
    sample = (q0, lp0, grad0)
    log_w = 0.0
    depth = 0
    while depth < max_depth:
        u = uniforms[tr.cursor]
        tr.cursor += 1
        if u > 0.5:
            ok, st = _build_tree(tr, depth, qR, pR, gR, lpR, 1.0)
        else:
            ok, st = _build_tree(tr, depth, qL, pL, gL, lpL, -1.0)
        if not ok:
            break
        depth += 1
        if st.log_w > log_w:
            sample = (st.prop_q, st.prop_lp, st.prop_g)
        else:
            v = uniforms[tr.cursor]
            tr.cursor += 1
            if v < math.exp(st.log_w - log_w):
                sample = (st.prop_q, st.prop_lp, st.prop_g)
        log_w = np.logaddexp(log_w, st.log_w)
        rho_old = rho
        rho = rho_old + st.rho
        if u > 0.5:
            # old tree spans L..R, new subtree continues beyond R
            persist = (_uturn_free(psL, st.ps_end, rho)
                       and _uturn_free(psL, st.ps_beg, rho_old + st.p_beg)
                       and _uturn_free(psR, st.ps_end, st.rho + pR))
            qR, pR, gR, lpR, psR = st.q, st.p, st.g, st.lp, st.ps_end
        else:
            persist = (_uturn_free(st.ps_end, psR, rho)
                       and _uturn_free(st.ps_beg, psR, rho_old + st.p_beg)
                       and _uturn_free(st.ps_end, psL, st.rho + pL))
            qL, pL, gL, lpL, psL = st.q, st.p, st.g, st.lp, st.ps_end
        if not persist:
            break

    q, lp, g = sample
    n = max(tr.n_leapfrog, 1)
    return (np.array(q, dtype=float), float(lp), np.array(g, dtype=float),
            tr.sum_metro / n, tr.n_leapfrog, depth, tr.divergent, float(H0))


def _soft(x, t):
    if x > t:
        return x - t
    if x < -t:
        return x + t
    return 0.0


def lasso_path(X, y, lambdas, tol=1e-7, max_sweeps=1000, stop_after=-1):
    """Cyclic coordinate descent along a decreasing ``lambdas`` grid.

    Minimizes ``||y - X b||^2 / (2T) + lam * ||b||_1`` with warm starts.
    Columns of ``X`` should be standardized (``||x_j||^2 = T``) and ``y``
    centered.

    Returns
    -------
    coefs : ndarray, shape (n_lambdas_done, K)
    first_entry : ndarray of int, shape (K,)
        Grid index at which each column first became nonzero, ``-1`` if never.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    T, K = X.shape
    col_sq = np.einsum("ij,ij->j", X, X) / T
    b = np.zeros(K)
    r = y.copy()
    first = np.full(K, -1, dtype=np.int64)
    path = []
    n_entered = 0
    for li, lam in enumerate(lambdas):
        for _ in range(max_sweeps):
            max_delta = 0.0
            for j in range(K):
                if col_sq[j] == 0.0:
                    continue
                xj = X[:, j]
                bj = b[j]
                rho = float(xj @ r) / T + col_sq[j] * bj
                new = _soft(rho, lam) / col_sq[j]
                if new != bj:
                    r -= (new - bj) * xj
                    b[j] = new
                    delta = abs(new - bj) * math.sqrt(col_sq[j])
                    if delta > max_delta:
                        max_delta = delta
            if max_delta < tol:
                break
        path.append(b.copy())
        for j in np.flatnonzero((b != 0.0) & (first < 0)):
            first[j] = li
            n_entered += 1
        if 0 < stop_after <= n_entered:
            break
    return np.array(path), first
