# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""
Compiled numerical kernels: design products, log densities with gradients,
the NUTS transition, leapfrog integration and the lasso path.

The interface and the order in which random inputs are consumed match the
numpy reference in ``_core_py``.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log, log1p, fabs, fmax, sqrt, lgamma, isfinite, INFINITY, M_PI
from libc.string cimport memcpy
from scipy.linalg.cython_blas cimport dgemv

cnp.import_array()

BACKEND = "cython"

cdef double _HALF_LOG_2PI = 0.5 * log(2.0 * M_PI)
cdef double _LOG2 = log(2.0)


cdef inline double _softplus(double x) noexcept nogil:
    return fmax(x, 0.0) + log1p(exp(-fabs(x)))


cdef inline double _logaddexp(double a, double b) noexcept nogil:
    if a == -INFINITY:
        return b
    if b == -INFINITY:
        return a
    if a > b:
        return a + log1p(exp(b - a))
    return b + log1p(exp(a - b))


cdef inline double _dot(const double* a, const double* b, Py_ssize_t n) noexcept nogil:
    cdef double s = 0.0
    cdef Py_ssize_t i
    for i in range(n):
        s += a[i] * b[i]
    return s


def design_product(double[:, :, ::1] tables, cnp.int64_t[:, ::1] alphas):
    cdef Py_ssize_t N = tables.shape[0], T = tables.shape[1], M = alphas.shape[0]
    cdef Py_ssize_t dmax = tables.shape[2]
    cdef Py_ssize_t j, k, i
    cdef cnp.int64_t a
    out_arr = np.ones((T, M))
    cdef double[:, ::1] out = out_arr
    for i in range(M):
        for j in range(N):
            if alphas[i, j] < 0 or alphas[i, j] >= dmax:
                raise IndexError("multi-index degree outside the polynomial table")
    with nogil:
        for k in range(T):
            for i in range(M):
                for j in range(N):
                    a = alphas[i, j]
                    out[k, i] *= tables[j, k, a]
    return out_arr


cdef class Density:
    """Base class: ``eval`` writes the gradient and returns the log density."""

    cdef public int dim

    cdef double eval(self, double* u, double* g):
        return -INFINITY

    def logp_grad(self, u):
        cdef cnp.ndarray[double, ndim=1, mode="c"] uu = np.ascontiguousarray(u, dtype=np.float64)
        if uu.shape[0] != self.dim:
            raise ValueError(f"expected vector of length {self.dim}")
        grad = np.empty(self.dim)
        cdef double[::1] gv = grad
        cdef double lp = self.eval(&uu[0], &gv[0])
        return lp, grad


cdef inline void _gemv_rows(double* A, Py_ssize_t T, Py_ssize_t K, double* x, double* out,
                            double alpha, double beta) noexcept nogil:
    # out (T) = alpha * A @ x + beta * out, A row-major T x K
    cdef char trans = b'T'
    cdef int m = <int>K, n = <int>T, lda = <int>K, one = 1
    if K == 0:
        for i in range(T):
            out[i] = beta * out[i]
        return
    dgemv(&trans, &m, &n, &alpha, A, &lda, x, &one, &beta, out, &one)


cdef inline void _gemv_cols(double* A, Py_ssize_t T, Py_ssize_t K, double* x, double* out) noexcept nogil:
    # out (K) = A.T @ x
    cdef char trans = b'N'
    cdef int m = <int>K, n = <int>T, lda = <int>K, one = 1
    cdef double alpha = 1.0, beta = 0.0
    if K == 0:
        return
    dgemv(&trans, &m, &n, &alpha, A, &lda, x, &one, &beta, out, &one)


cdef class R2D2Density(Density):
    """R2D2-prior PCE log posterior; layout ``[z0, z, log sigma, logit R2, y_stick]``."""

    cdef public object Psi1, y, theta
    cdef double[:, ::1] _psi
    cdef double[::1] _y, _theta, _offsets, _logphi, _zk, _scale, _c, _r, _gc, _h, _suffix
    cdef public Py_ssize_t T, K
    cdef public double c0_mean, c0_sd, sigma_scale, a1, a2
    cdef double _const

    def __init__(self, Psi1, y, double c0_mean, double c0_sd, double sigma_scale,
                 double a1, double a2, theta):
        self.Psi1 = np.ascontiguousarray(Psi1, dtype=np.float64)
        self.y = np.ascontiguousarray(y, dtype=np.float64)
        self.theta = np.ascontiguousarray(theta, dtype=np.float64)
        self._psi = self.Psi1
        self._y = self.y
        self._theta = self.theta
        self.T = self.Psi1.shape[0]
        self.K = self.Psi1.shape[1]
        if self.y.shape[0] != self.T or self.theta.shape[0] != self.K or self.K < 1:
            raise ValueError("inconsistent density inputs")
        self.c0_mean, self.c0_sd, self.sigma_scale = c0_mean, c0_sd, sigma_scale
        self.a1, self.a2 = a1, a2
        self.dim = <int>(2 * self.K + 2)
        K = self.K
        self._offsets = np.log(K - np.arange(1, K)) if K > 1 else np.zeros(1)
        self._logphi = np.empty(K)
        self._zk = np.empty(max(K - 1, 1))
        self._scale = np.empty(K)
        self._c = np.empty(K)
        self._r = np.empty(self.T)
        self._gc = np.empty(K)
        self._h = np.empty(K)
        self._suffix = np.empty(K + 1)
        self._const = (
            -self.T * _HALF_LOG_2PI
            - (K + 1) * _HALF_LOG_2PI
            + _LOG2 - _HALF_LOG_2PI - log(sigma_scale)
            + lgamma(a1 + a2) - lgamma(a1) - lgamma(a2)
            + lgamma(float(self.theta.sum())) - float(sum(lgamma(t) for t in self.theta))
        )

    cdef double eval(self, double* u, double* g):
        cdef Py_ssize_t K = self.K, T = self.T, k, i
        cdef double z0 = u[0], log_sigma = u[K + 1], logit_r2 = u[K + 2]
        cdef double rem = 0.0, logjac = 0.0, x, log_z, log_1mz
        cdef double* logphi = &self._logphi[0]
        cdef double* zk = &self._zk[0]
        cdef double* c = &self._c[0]
        cdef double* scale = &self._scale[0]
        cdef double* r = &self._r[0]
        cdef double* gc = &self._gc[0]
        cdef double* h = &self._h[0]
        cdef double* suffix = &self._suffix[0]
        cdef double sigma, inv_s2, rss, rsum, c0, log_r2, log_1mr2, r2, lp, gcc, zz, tl, ss2
        with nogil:
            if K == 1:
                logphi[0] = 0.0
            else:
                for k in range(K - 1):
                    x = u[K + 3 + k] - self._offsets[k]
                    log_z = -_softplus(-x)
                    log_1mz = -_softplus(x)
                    logphi[k] = rem + log_z
                    zk[k] = exp(log_z)
                    logjac += rem + log_z + log_1mz
                    rem += log_1mz
                logphi[K - 1] = rem
            sigma = exp(log_sigma)
            zz = 0.0
            for i in range(K):
                scale[i] = exp(0.5 * (logphi[i] + logit_r2) + log_sigma)
                c[i] = u[1 + i] * scale[i]
                zz += u[1 + i] * u[1 + i]
            c0 = self.c0_mean + self.c0_sd * z0
            for k in range(T):
                r[k] = self._y[k] - c0
            _gemv_rows(&self._psi[0, 0], T, K, c, r, -1.0, 1.0)
            inv_s2 = 1.0 / (sigma * sigma)
            rss = 0.0
            rsum = 0.0
            for k in range(T):
                rss += r[k] * r[k]
                rsum += r[k]
            _gemv_cols(&self._psi[0, 0], T, K, r, gc)
            for i in range(K):
                gc[i] *= inv_s2
            log_r2 = -_softplus(-logit_r2)
            log_1mr2 = -_softplus(logit_r2)
            r2 = exp(log_r2)
            tl = 0.0
            for i in range(K):
                tl += (self._theta[i] - 1.0) * logphi[i]
            ss2 = self.sigma_scale * self.sigma_scale
            lp = (self._const
                  - T * log_sigma - 0.5 * rss * inv_s2
                  - 0.5 * z0 * z0 - 0.5 * zz
                  - 0.5 * sigma * sigma / ss2 + log_sigma
                  + self.a1 * log_r2 + self.a2 * log_1mr2
                  + tl + logjac)
            g[0] = self.c0_sd * rsum * inv_s2 - z0
            gcc = 0.0
            for i in range(K):
                g[1 + i] = gc[i] * scale[i] - u[1 + i]
                gcc += gc[i] * c[i]
            g[K + 1] = -T + rss * inv_s2 + gcc - sigma * sigma / ss2 + 1.0
            g[K + 2] = 0.5 * gcc + self.a1 * (1.0 - r2) - self.a2 * r2
            if K > 1:
                for i in range(K):
                    h[i] = 0.5 * gc[i] * c[i] + self._theta[i] - 1.0
                suffix[K] = 0.0
                for i in range(K - 1, -1, -1):
                    suffix[i] = suffix[i + 1] + h[i]
                for k in range(K - 1):
                    g[K + 3 + k] = (h[k] * (1.0 - zk[k]) - zk[k] * suffix[k + 1]
                                    + 1.0 - zk[k] * (K - k))
        return lp


cdef class FlatDensity(Density):
    """Flat prior on non-constant coefficients; layout ``[z0, c, log sigma]``."""

    cdef public object Psi1, y
    cdef double[:, ::1] _psi
    cdef double[::1] _y, _r, _gc
    cdef public Py_ssize_t T, K
    cdef public double c0_mean, c0_sd, sigma_scale
    cdef double _const

    def __init__(self, Psi1, y, double c0_mean, double c0_sd, double sigma_scale):
        self.Psi1 = np.ascontiguousarray(Psi1, dtype=np.float64)
        self.y = np.ascontiguousarray(y, dtype=np.float64)
        self._psi = self.Psi1 if self.Psi1.shape[1] > 0 else np.zeros((self.Psi1.shape[0], 1))
        self._y = self.y
        self.T = self.Psi1.shape[0]
        self.K = self.Psi1.shape[1]
        if self.y.shape[0] != self.T:
            raise ValueError("inconsistent density inputs")
        self.c0_mean, self.c0_sd, self.sigma_scale = c0_mean, c0_sd, sigma_scale
        self.dim = <int>(self.K + 2)
        self._r = np.empty(self.T)
        self._gc = np.empty(max(self.K, 1))
        self._const = (-self.T * _HALF_LOG_2PI - _HALF_LOG_2PI
                       + _LOG2 - _HALF_LOG_2PI - log(sigma_scale))

    cdef double eval(self, double* u, double* g):
        cdef Py_ssize_t K = self.K, T = self.T, k, i
        cdef double z0 = u[0], log_sigma = u[K + 1]
        cdef double* r = &self._r[0]
        cdef double sigma, c0, inv_s2, rss, rsum, lp, ss2
        with nogil:
            sigma = exp(log_sigma)
            c0 = self.c0_mean + self.c0_sd * z0
            for k in range(T):
                r[k] = self._y[k] - c0
            _gemv_rows(&self._psi[0, 0], T, K, u + 1, r, -1.0, 1.0)
            inv_s2 = 1.0 / (sigma * sigma)
            rss = 0.0
            rsum = 0.0
            for k in range(T):
                rss += r[k] * r[k]
                rsum += r[k]
            ss2 = self.sigma_scale * self.sigma_scale
            lp = (self._const - T * log_sigma - 0.5 * rss * inv_s2 - 0.5 * z0 * z0
                  - 0.5 * sigma * sigma / ss2 + log_sigma)
            g[0] = self.c0_sd * rsum * inv_s2 - z0
            _gemv_cols(&self._psi[0, 0], T, K, r, g + 1)
            for i in range(K):
                g[1 + i] *= inv_s2
            g[K + 1] = -T + rss * inv_s2 - sigma * sigma / ss2 + 1.0
        return lp


cdef class PyDensity(Density):
    """Adapter for a Python callable ``f(u) -> (logp, grad)``."""

    cdef public object fn

    def __init__(self, fn, dim):
        self.fn = fn
        self.dim = <int>dim

    cdef double eval(self, double* u, double* g):
        cdef Py_ssize_t i
        cdef double[::1] uv
        arr = np.empty(self.dim)
        uv = arr
        for i in range(self.dim):
            uv[i] = u[i]
        try:
            lp, gr = self.fn(arr)
            gr = np.asarray(gr, dtype=np.float64).ravel()
            if gr.shape[0] != self.dim:
                raise ValueError("gradient has the wrong length")
            lpv = float(lp)
        except (FloatingPointError, OverflowError, ValueError, ZeroDivisionError):
            return -INFINITY
        cdef double[::1] gv = gr
        for i in range(self.dim):
            g[i] = gv[i]
        return lpv


cdef inline double _safe_eval(Density d, double* q, double* g, Py_ssize_t n):
    cdef double lp = d.eval(q, g)
    cdef Py_ssize_t i
    cdef bint bad = not isfinite(lp)
    if not bad:
        for i in range(n):
            if not isfinite(g[i]):
                bad = True
                break
    if bad:
        for i in range(n):
            g[i] = 0.0
        return -INFINITY
    return lp


def _as_density(density):
    if isinstance(density, Density):
        return density
    return PyDensity(density.logp_grad, density.dim)


def leapfrog(density, q, p, grad, inv_metric, double step_size, int n_steps):
    """``n_steps`` leapfrog steps; returns ``(q, p, logp, grad)``."""
    cdef Density d = _as_density(density)
    qa = np.array(q, dtype=np.float64)
    pa = np.array(p, dtype=np.float64)
    ga = np.array(grad, dtype=np.float64)
    cdef double[::1] qv = qa, pv = pa, gv = ga
    cdef double[::1] im = np.ascontiguousarray(inv_metric, dtype=np.float64)
    cdef Py_ssize_t n = qa.shape[0], i
    cdef int s
    cdef double lp = -INFINITY
    for s in range(n_steps):
        for i in range(n):
            pv[i] += 0.5 * step_size * gv[i]
        for i in range(n):
            qv[i] += step_size * im[i] * pv[i]
        lp = _safe_eval(d, &qv[0], &gv[0], n)
        for i in range(n):
            pv[i] += 0.5 * step_size * gv[i]
    return qa, pa, lp, ga


# ---------------------------------------------------------------- NUTS
# Subtree slots are rows of 2-D work arrays; vector fields listed below.
DEF F_Q = 0
DEF F_P = 1
DEF F_G = 2
DEF F_PBEG = 3
DEF F_PEND = 4
DEF F_PSBEG = 5
DEF F_PSEND = 6
DEF F_RHO = 7
DEF F_PROPQ = 8
DEF F_PROPG = 9
DEF N_FIELDS = 10


cdef class _Nuts:
    cdef Density d
    cdef Py_ssize_t n
    cdef double[::1] im
    cdef double eps, H0, sum_metro, max_delta_h
    cdef double[::1] uniforms
    cdef Py_ssize_t cursor, n_uniforms
    cdef long n_leapfrog
    cdef bint divergent
    cdef double[:, :, ::1] vec     # slot x field x dim
    cdef double[:, ::1] sca        # slot x (lp, prop_lp, log_w)
    cdef double[::1] tmp

    cdef inline double* v(self, Py_ssize_t slot, int field) noexcept:
        return &self.vec[slot, field, 0]

    cdef inline void copy(self, Py_ssize_t ds, int df, Py_ssize_t ss, int sf) noexcept:
        memcpy(&self.vec[ds, df, 0], &self.vec[ss, sf, 0], self.n * sizeof(double))

    cdef double next_uniform(self) except? -1.0:
        if self.cursor >= self.n_uniforms:
            raise ValueError("uniform buffer exhausted")
        cdef double u = self.uniforms[self.cursor]
        self.cursor += 1
        return u

    cdef bint uturn_free(self, const double* a, const double* b, const double* rho) noexcept:
        return _dot(a, rho, self.n) > 0.0 and _dot(b, rho, self.n) > 0.0

    cdef int build(self, int depth, double* q, double* p, double* g, double direction,
                   Py_ssize_t out) except -1:
        # returns 1 if the subtree is valid; result written into slot ``out``
        cdef Py_ssize_t n = self.n, i, left, right
        cdef double eps, lp1, h, log_w, accept, u
        cdef double* q1
        cdef double* p1
        cdef double* g1
        cdef double* tmp
        cdef bint persist
        if depth == 0:
            eps = direction * self.eps
            q1 = self.v(out, F_Q)
            p1 = self.v(out, F_P)
            g1 = self.v(out, F_G)
            for i in range(n):
                p1[i] = p[i] + 0.5 * eps * g[i]
            for i in range(n):
                q1[i] = q[i] + eps * self.im[i] * p1[i]
            lp1 = _safe_eval(self.d, q1, g1, n)
            for i in range(n):
                p1[i] = p1[i] + 0.5 * eps * g1[i]
            self.n_leapfrog += 1
            h = 0.0
            for i in range(n):
                h += p1[i] * (self.im[i] * p1[i])
            h = -lp1 + 0.5 * h
            if not isfinite(h):
                h = INFINITY
            if h - self.H0 > self.max_delta_h:
                self.divergent = True
            self.sca[out, 0] = lp1
            self.sca[out, 1] = lp1
            self.sca[out, 2] = self.H0 - h
            self.sum_metro += 1.0 if self.H0 - h > 0 else exp(self.H0 - h)
            self.copy(out, F_PROPQ, out, F_Q)
            self.copy(out, F_PROPG, out, F_G)
            self.copy(out, F_PBEG, out, F_P)
            self.copy(out, F_PEND, out, F_P)
            tmp = self.v(out, F_PSBEG)
            for i in range(n):
                tmp[i] = self.im[i] * p1[i]
            self.copy(out, F_PSEND, out, F_PSBEG)
            self.copy(out, F_RHO, out, F_P)
            return 0 if self.divergent else 1

        left = 2 * (depth - 1)
        right = left + 1
        if not self.build(depth - 1, q, p, g, direction, left):
            return 0
        if not self.build(depth - 1, self.v(left, F_Q), self.v(left, F_P), self.v(left, F_G),
                          direction, right):
            return 0
        log_w = _logaddexp(self.sca[left, 2], self.sca[right, 2])
        accept = exp(self.sca[right, 2] - log_w)
        u = self.next_uniform()
        if u < accept:
            self.copy(out, F_PROPQ, right, F_PROPQ)
            self.copy(out, F_PROPG, right, F_PROPG)
            self.sca[out, 1] = self.sca[right, 1]
        else:
            self.copy(out, F_PROPQ, left, F_PROPQ)
            self.copy(out, F_PROPG, left, F_PROPG)
            self.sca[out, 1] = self.sca[left, 1]
        self.copy(out, F_Q, right, F_Q)
        self.copy(out, F_P, right, F_P)
        self.copy(out, F_G, right, F_G)
        self.sca[out, 0] = self.sca[right, 0]
        self.sca[out, 2] = log_w
        tmp = self.v(out, F_RHO)
        for i in range(n):
            tmp[i] = self.vec[left, F_RHO, i] + self.vec[right, F_RHO, i]
        self.copy(out, F_PBEG, left, F_PBEG)
        self.copy(out, F_PSBEG, left, F_PSBEG)
        self.copy(out, F_PEND, right, F_PEND)
        self.copy(out, F_PSEND, right, F_PSEND)
        persist = self.uturn_free(self.v(out, F_PSBEG), self.v(out, F_PSEND), tmp)
        if persist:
            for i in range(n):
                self.tmp[i] = self.vec[left, F_RHO, i] + self.vec[right, F_PBEG, i]
            persist = self.uturn_free(self.v(left, F_PSBEG), self.v(right, F_PSBEG), &self.tmp[0])
        if persist:
            for i in range(n):
                self.tmp[i] = self.vec[right, F_RHO, i] + self.vec[left, F_PEND, i]
            persist = self.uturn_free(self.v(left, F_PSEND), self.v(right, F_PSEND), &self.tmp[0])
        return 1 if persist else 0


def nuts_transition(density, q0, double lp0, grad0, inv_metric, double step_size, int max_depth,
                    normals, uniforms, double max_delta_h=1000.0):
    """One multinomial NUTS transition; same contract as the numpy reference."""
    cdef _Nuts tr = _Nuts()
    tr.d = _as_density(density)
    q0a = np.ascontiguousarray(q0, dtype=np.float64)
    cdef Py_ssize_t n = q0a.shape[0], i
    tr.n = n
    tr.im = np.ascontiguousarray(inv_metric, dtype=np.float64)
    tr.uniforms = np.ascontiguousarray(uniforms, dtype=np.float64)
    tr.n_uniforms = tr.uniforms.shape[0]
    tr.cursor = 0
    tr.eps = step_size
    tr.max_delta_h = max_delta_h
    tr.n_leapfrog = 0
    tr.sum_metro = 0.0
    tr.divergent = False
    cdef Py_ssize_t top = 2 * max(max_depth, 1)
    tr.vec = np.empty((top + 1, N_FIELDS, n))
    tr.sca = np.empty((top + 1, 3))
    tr.tmp = np.empty(n)

    cdef double[::1] nv = np.ascontiguousarray(normals, dtype=np.float64)
    cdef double[::1] q0v = q0a
    cdef double[::1] g0v = np.ascontiguousarray(grad0, dtype=np.float64)
    # trajectory ends (L, R): q, p, g, ps ; sample q, g
    cdef double[:, ::1] ends = np.empty((8, n))
    cdef double[::1] rho = np.empty(n), rho_old = np.empty(n)
    sample_q = np.array(q0a)
    sample_g = np.array(g0v)
    cdef double[::1] sq = sample_q, sg = sample_g
    cdef double sample_lp = lp0, lpL = lp0, lpR = lp0
    cdef double H0 = 0.0, log_w = 0.0, u, vv
    cdef int depth = 0, ok
    cdef bint persist, forward, take
    for i in range(n):
        ends[1, i] = nv[i] / sqrt(tr.im[i])
        H0 += ends[1, i] * (tr.im[i] * ends[1, i])
    H0 = -lp0 + 0.5 * H0
    tr.H0 = H0
    for i in range(n):
        ends[0, i] = q0v[i]
        ends[2, i] = g0v[i]
        ends[3, i] = tr.im[i] * ends[1, i]
        ends[4, i] = ends[0, i]
        ends[5, i] = ends[1, i]
        ends[6, i] = ends[2, i]
        ends[7, i] = ends[3, i]
        rho[i] = ends[1, i]
    # rows 0..3: L end, rows 4..7: R end
    cdef double* pL = &ends[1, 0]
    cdef double* psL = &ends[3, 0]
    cdef double* pR = &ends[5, 0]
    cdef double* psR = &ends[7, 0]
    cdef double* st_rho
    cdef double* st_pbeg
    cdef double* st_psbeg
    cdef double* st_psend

    while depth < max_depth:
        u = tr.next_uniform()
        forward = u > 0.5
        if forward:
            ok = tr.build(depth, &ends[4, 0], &ends[5, 0], &ends[6, 0], 1.0, top)
        else:
            ok = tr.build(depth, &ends[0, 0], &ends[1, 0], &ends[2, 0], -1.0, top)
        if not ok:
            break
        depth += 1
        take = False
        if tr.sca[top, 2] > log_w:
            take = True
        else:
            vv = tr.next_uniform()
            take = vv < exp(tr.sca[top, 2] - log_w)
        if take:
            memcpy(&sq[0], tr.v(top, F_PROPQ), n * sizeof(double))
            memcpy(&sg[0], tr.v(top, F_PROPG), n * sizeof(double))
            sample_lp = tr.sca[top, 1]
        log_w = _logaddexp(log_w, tr.sca[top, 2])
        st_rho = tr.v(top, F_RHO)
        st_pbeg = tr.v(top, F_PBEG)
        st_psbeg = tr.v(top, F_PSBEG)
        st_psend = tr.v(top, F_PSEND)
        for i in range(n):
            rho_old[i] = rho[i]
            rho[i] = rho_old[i] + st_rho[i]
            tr.tmp[i] = rho_old[i] + st_pbeg[i]
        if forward:
            persist = (tr.uturn_free(psL, st_psend, &rho[0])
                       and tr.uturn_free(psL, st_psbeg, &tr.tmp[0]))
            if persist:
                for i in range(n):
                    tr.tmp[i] = st_rho[i] + pR[i]
                persist = tr.uturn_free(psR, st_psend, &tr.tmp[0])
            memcpy(&ends[4, 0], tr.v(top, F_Q), n * sizeof(double))
            memcpy(&ends[5, 0], tr.v(top, F_P), n * sizeof(double))
            memcpy(&ends[6, 0], tr.v(top, F_G), n * sizeof(double))
            memcpy(&ends[7, 0], st_psend, n * sizeof(double))
            lpR = tr.sca[top, 0]
        else:
            persist = (tr.uturn_free(st_psend, psR, &rho[0])
                       and tr.uturn_free(st_psbeg, psR, &tr.tmp[0]))
            if persist:
                for i in range(n):
                    tr.tmp[i] = st_rho[i] + pL[i]
                persist = tr.uturn_free(st_psend, psL, &tr.tmp[0])
            memcpy(&ends[0, 0], tr.v(top, F_Q), n * sizeof(double))
            memcpy(&ends[1, 0], tr.v(top, F_P), n * sizeof(double))
            memcpy(&ends[2, 0], tr.v(top, F_G), n * sizeof(double))
            memcpy(&ends[3, 0], st_psend, n * sizeof(double))
            lpL = tr.sca[top, 0]
        if not persist:
            break

    cdef long nl = tr.n_leapfrog if tr.n_leapfrog > 0 else 1
    return (sample_q, float(sample_lp), sample_g, tr.sum_metro / nl, int(tr.n_leapfrog),
            depth, bool(tr.divergent), float(H0))


# ---------------------------------------------------------------- lasso
cdef inline double _soft(double x, double t) noexcept nogil:
    if x > t:
        return x - t
    if x < -t:
        return x + t
    return 0.0


def lasso_path(X, y, lambdas, double tol=1e-7, int max_sweeps=1000, int stop_after=-1):
    """Cyclic coordinate descent along a decreasing ``lambdas`` grid (see ``_core_py``)."""
    cdef double[:, ::1] Xt = np.ascontiguousarray(np.asarray(X, dtype=np.float64).T)
    cdef Py_ssize_t K = Xt.shape[0], T = Xt.shape[1], j, k, li, nl
    cdef double[::1] lam = np.ascontiguousarray(lambdas, dtype=np.float64)
    nl = lam.shape[0]
    r_arr = np.array(y, dtype=np.float64)
    cdef double[::1] r = r_arr
    b_arr = np.zeros(K)
    cdef double[::1] b = b_arr
    col_arr = np.einsum("ij,ij->j", np.asarray(X, dtype=np.float64), np.asarray(X, dtype=np.float64)) / T
    cdef double[::1] col_sq = col_arr
    first_arr = np.full(K, -1, dtype=np.int64)
    cdef cnp.int64_t[::1] first = first_arr
    path = np.zeros((nl, K))
    cdef double[:, ::1] pv = path
    cdef Py_ssize_t n_entered = 0, done = 0
    cdef int sweep
    cdef double max_delta, rho, new, bj, delta, l
    for li in range(nl):
        l = lam[li]
        with nogil:
            for sweep in range(max_sweeps):
                max_delta = 0.0
                for j in range(K):
                    if col_sq[j] == 0.0:
                        continue
                    bj = b[j]
                    rho = 0.0
                    for k in range(T):
                        rho += Xt[j, k] * r[k]
                    rho = rho / T + col_sq[j] * bj
                    new = _soft(rho, l) / col_sq[j]
                    if new != bj:
                        for k in range(T):
                            r[k] -= (new - bj) * Xt[j, k]
                        b[j] = new
                        delta = fabs(new - bj) * sqrt(col_sq[j])
                        if delta > max_delta:
                            max_delta = delta
                if max_delta < tol:
                    break
            for j in range(K):
                pv[li, j] = b[j]
                if b[j] != 0.0 and first[j] < 0:
                    first[j] = li
                    n_entered += 1
        done = li + 1
        if 0 < stop_after <= n_entered:
            break
    return path[:done].copy(), first_arr
