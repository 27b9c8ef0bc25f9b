# cython: language_level=3
"""Compiled hot kernels: Philox4x64-10, bounded index draws, GLM Newton fits.

Function-for-function twin of ``_kernels_py``. All loops run without the GIL
so subsample fits can proceed concurrently from a thread pool.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport INFINITY, exp, fabs, isfinite, log1p, sqrt
from libc.stdint cimport int64_t, uint64_t
from libc.stdlib cimport free, malloc
from libc.string cimport memcpy, memset

cnp.import_array()

cdef extern from *:
    """
    #include <stdint.h>
    static inline uint64_t bagm_mulhilo(uint64_t a, uint64_t b, uint64_t *lo) {
        unsigned __int128 prod = (unsigned __int128)a * (unsigned __int128)b;
        *lo = (uint64_t)prod;
        return (uint64_t)(prod >> 64);
    }
    static inline void bagm_philox(uint64_t *c, uint64_t k0, uint64_t k1) {
        uint64_t lo0, lo1, hi0, hi1, n0, n2;
        for (int r = 0; r < 10; ++r) {
            hi0 = bagm_mulhilo(0xD2E7470EE14C6C93ULL, c[0], &lo0);
            hi1 = bagm_mulhilo(0xCA5A826395121157ULL, c[2], &lo1);
            n0 = hi1 ^ c[1] ^ k0;
            n2 = hi0 ^ c[3] ^ k1;
            c[0] = n0; c[1] = lo1; c[2] = n2; c[3] = lo0;
            k0 += 0x9E3779B97F4A7C15ULL;
            k1 += 0xBB67AE8584CAA73BULL;
        }
    }
    """
    uint64_t bagm_mulhilo(uint64_t a, uint64_t b, uint64_t *lo) nogil
    void bagm_philox(uint64_t *c, uint64_t k0, uint64_t k1) nogil

BACKEND = "cython"

cdef double PIVOT_RTOL = 1e-12
cdef double LOSS_RTOL = 1e-13
cdef double STEP_RTOL = 1e-6
cdef double POISSON_ETA_LIMIT = 700.0

STATUS_OK, STATUS_SINGULAR, STATUS_MAXITER, STATUS_NONFINITE, STATUS_LINESEARCH = range(5)

cdef uint64_t MASK64 = 0xFFFFFFFFFFFFFFFF


def philox_blocks(key0, key1, counters):
    """Philox4x64-10 applied row-wise to a ``(m, 4)`` uint64 counter array."""
    cdef cnp.ndarray[cnp.uint64_t, ndim=2, mode="c"] out = np.array(counters, dtype=np.uint64, copy=True).reshape(-1, 4)
    cdef uint64_t k0 = int(key0) & MASK64
    cdef uint64_t k1 = int(key1) & MASK64
    cdef Py_ssize_t i, m = out.shape[0]
    cdef uint64_t *data = <uint64_t *> out.data
    with nogil:
        for i in range(m):
            bagm_philox(data + 4 * i, k0, k1)
    return out


def random_words(key0, key1, tag, Py_ssize_t count):
    """``count`` raw 64-bit words from blocks with counters ``(b, tag, 0, 0)``, b = 0, 1, ..."""
    cdef Py_ssize_t nblocks = (count + 3) // 4
    cdef cnp.ndarray[cnp.uint64_t, ndim=1, mode="c"] out = np.empty(4 * nblocks, dtype=np.uint64)
    cdef uint64_t k0 = int(key0) & MASK64
    cdef uint64_t k1 = int(key1) & MASK64
    cdef uint64_t t = int(tag) & MASK64
    cdef uint64_t *data = <uint64_t *> out.data
    cdef Py_ssize_t b
    with nogil:
        for b in range(nblocks):
            data[4 * b] = <uint64_t> b
            data[4 * b + 1] = t
            data[4 * b + 2] = 0
            data[4 * b + 3] = 0
            bagm_philox(data + 4 * b, k0, k1)
    return out[:count].copy()


def draw_indices(key0, key1, tag, Py_ssize_t n, N):
    """``n`` uniform integers in ``[0, N)`` by Lemire's multiply-and-reject method."""
    if N < 1:
        raise ValueError("population size must be >= 1")
    cdef uint64_t bound = int(N)
    cdef uint64_t threshold = (<uint64_t> 0 - bound) % bound
    cdef uint64_t k0 = int(key0) & MASK64
    cdef uint64_t k1 = int(key1) & MASK64
    cdef uint64_t t = int(tag) & MASK64
    cdef cnp.ndarray[cnp.int64_t, ndim=1, mode="c"] out = np.empty(n, dtype=np.int64)
    cdef int64_t *o = <int64_t *> out.data
    cdef uint64_t c[4]
    cdef uint64_t hi, lo, j
    cdef Py_ssize_t m
    cdef int w
    cdef bint done
    with nogil:
        for m in range(n):
            j = 0
            done = False
            while not done:
                c[0] = <uint64_t> m
                c[1] = t
                c[2] = j
                c[3] = 0
                bagm_philox(c, k0, k1)
                for w in range(4):
                    hi = bagm_mulhilo(c[w], bound, &lo)
                    if lo >= threshold:
                        o[m] = <int64_t> hi
                        done = True
                        break
                j += 1
    return out


cdef int _evaluate(int family, const double[:, ::1] X, const double[::1] y, const double *theta,
                   double *loss, double *g, double *H, bint derivs) noexcept nogil:
    # Returns 0 on success and 1 when the loss or its derivatives are not finite.
    cdef Py_ssize_t n = X.shape[0], p = X.shape[1]
    cdef Py_ssize_t i, j, l
    cdef double eta, r, e, s, mu, li, gc, w, wx, yi, total = 0.0
    if derivs:
        memset(g, 0, p * sizeof(double))
        memset(H, 0, p * p * sizeof(double))
    for i in range(n):
        eta = 0.0
        for j in range(p):
            eta += X[i, j] * theta[j]
        yi = y[i]
        if family == 0:
            r = yi - eta
            li = 0.5 * r * r
            gc = -r
            w = 1.0
        elif family == 1:
            if eta >= 0:
                e = exp(-eta)
                li = eta + log1p(e) - yi * eta
                s = 1.0 / (1.0 + e)
            else:
                e = exp(eta)
                li = log1p(e) - yi * eta
                s = e / (1.0 + e)
            gc = s - yi
            w = s * (1.0 - s)
        else:
            if fabs(eta) > POISSON_ETA_LIMIT:
                return 1
            mu = exp(eta)
            li = mu - yi * eta
            gc = mu - yi
            w = mu
        total += li
        if derivs:
            for j in range(p):
                g[j] += gc * X[i, j]
                wx = w * X[i, j]
                for l in range(j + 1):
                    H[j * p + l] += wx * X[i, l]
    loss[0] = total
    if not isfinite(total):
        return 1
    if derivs:
        for j in range(p):
            if not isfinite(g[j]):
                return 1
            for l in range(j):
                H[l * p + j] = H[j * p + l]
    return 0


cdef int _cholesky_solve(const double *A, const double *b, double *x, double *L, Py_ssize_t p) noexcept nogil:
    # Returns 1 when a pivot is at or below PIVOT_RTOL times the largest diagonal entry.
    cdef Py_ssize_t i, j, k
    cdef double s, scale = A[0]
    for j in range(1, p):
        if A[j * p + j] > scale:
            scale = A[j * p + j]
    if not scale > 0:
        return 1
    for j in range(p):
        s = A[j * p + j]
        for k in range(j):
            s -= L[j * p + k] * L[j * p + k]
        if not s > PIVOT_RTOL * scale:
            return 1
        L[j * p + j] = sqrt(s)
        for i in range(j + 1, p):
            s = A[i * p + j]
            for k in range(j):
                s -= L[i * p + k] * L[j * p + k]
            L[i * p + j] = s / L[j * p + j]
    for j in range(p):
        s = b[j]
        for k in range(j):
            s -= L[j * p + k] * x[k]
        x[j] = s / L[j * p + j]
    for j in range(p - 1, -1, -1):
        s = x[j]
        for k in range(j + 1, p):
            s -= L[k * p + j] * x[k]
        x[j] = s / L[j * p + j]
    return 0


cdef inline double _maxabs(const double *v, Py_ssize_t p) noexcept nogil:
    cdef double m = 0.0
    cdef Py_ssize_t j
    for j in range(p):
        if fabs(v[j]) > m:
            m = fabs(v[j])
    return m


cdef int _newton(int family, const double[:, ::1] X, const double[::1] y, double *theta, double *H,
                 double grad_tol, int max_iter, int halving_max, int *iters, double *gnorm) noexcept nogil:
    cdef Py_ssize_t n = X.shape[0], p = X.shape[1]
    cdef Py_ssize_t j
    cdef double *buf = <double *> malloc((5 * p + 2 * p * p) * sizeof(double))
    if buf == NULL:
        return -1
    cdef double *g = buf
    cdef double *cand = buf + p
    cdef double *gc = buf + 2 * p
    cdef double *delta = buf + 3 * p
    cdef double *tmp = buf + 4 * p
    cdef double *Hc = buf + 5 * p
    cdef double *L = buf + 5 * p + p * p
    cdef double loss, lc, gmax, t
    cdef int it = 0, h, status
    cdef bint accepted
    iters[0] = 0
    gnorm[0] = INFINITY
    if _evaluate(family, X, y, theta, &loss, g, H, True):
        free(buf)
        return 3
    while True:
        gmax = _maxabs(g, p)
        gnorm[0] = gmax / n
        iters[0] = it
        if gnorm[0] > grad_tol and it >= max_iter:
            status = 2
            break
        if _cholesky_solve(H, g, delta, L, p):
            status = 1
            break
        if gnorm[0] <= grad_tol and _maxabs(delta, p) <= STEP_RTOL * (1.0 + _maxabs(theta, p)):
            status = 0
            break
        if it >= max_iter:
            status = 2
            break
        t = 1.0
        accepted = False
        for h in range(halving_max + 1):
            for j in range(p):
                cand[j] = theta[j] - t * delta[j]
            if not _evaluate(family, X, y, cand, &lc, gc, Hc, True):
                if lc < loss or (lc <= loss + LOSS_RTOL * (fabs(loss) + 1.0) and _maxabs(gc, p) < gmax):
                    accepted = True
                    break
            t *= 0.5
        if not accepted:
            status = 4
            break
        memcpy(theta, cand, p * sizeof(double))
        memcpy(g, gc, p * sizeof(double))
        memcpy(H, Hc, p * p * sizeof(double))
        loss = lc
        it += 1
    free(buf)
    return status


def fit_glm(int family, X, y, theta0, double grad_tol, int max_iter, int halving_max):
    """Damped Newton fit of a built-in GLM family.

    Returns ``(theta, iterations, grad_norm, hessian, status)``, where the
    gradient norm is the max-norm of the row-averaged gradient.
    """
    if family not in (0, 1, 2):
        raise ValueError(f"unknown family code {family}")
    cdef const double[:, ::1] Xv = np.ascontiguousarray(X, dtype=np.float64)
    cdef const double[::1] yv = np.ascontiguousarray(y, dtype=np.float64)
    cdef Py_ssize_t p = Xv.shape[1]
    if yv.shape[0] != Xv.shape[0] or Xv.shape[0] == 0:
        raise ValueError("design and response must have the same, nonzero length")
    cdef cnp.ndarray[cnp.float64_t, ndim=1, mode="c"] theta = np.array(theta0, dtype=np.float64, copy=True).reshape(p)
    cdef cnp.ndarray[cnp.float64_t, ndim=2, mode="c"] H = np.zeros((p, p), dtype=np.float64)
    cdef int iters = 0, status
    cdef double gnorm = 0.0
    with nogil:
        status = _newton(family, Xv, yv, <double *> theta.data, <double *> H.data,
                         grad_tol, max_iter, halving_max, &iters, &gnorm)
    if status < 0:
        raise MemoryError()
    return theta, iters, gnorm, (None if status == 3 else H), status
