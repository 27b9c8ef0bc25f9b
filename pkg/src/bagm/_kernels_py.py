"""Pure-numpy implementations of the hot kernels.

Mirrors ``_kernels.pyx`` function for function. Used when the compiled
extension is unavailable or ``BAGM_PURE_PYTHON=1`` is set.
"""

import numpy as np

from .core import PIVOT_RTOL
from .errors import NonFiniteValue, SingularMatrix
from .models import LinearLoss, LogisticLoss, PoissonLoss

BACKEND = "python"

M32 = np.uint64(0xFFFFFFFF)
S32 = np.uint64(32)
PHILOX_M0 = np.uint64(0xD2E7470EE14C6C93)
PHILOX_M1 = np.uint64(0xCA5A826395121157)
PHILOX_W0 = 0x9E3779B97F4A7C15
PHILOX_W1 = 0xBB67AE8584CAA73B
MASK64 = (1 << 64) - 1

# An accepted step may raise the loss by at most this relative amount, and only if it shrinks the gradient.
LOSS_RTOL = 1e-13
# Convergence also needs the Newton step to be negligible; a small gradient
# alone is reached on the way to infinity when the minimum does not exist.
STEP_RTOL = 1e-6

STATUS_OK, STATUS_SINGULAR, STATUS_MAXITER, STATUS_NONFINITE, STATUS_LINESEARCH = range(5)


def mulhilo(a, b):
    """Full 64x64 -> 128-bit product of uint64 arrays, as ``(hi, lo)``."""
    a = np.asarray(a, dtype=np.uint64)
    b = np.asarray(b, dtype=np.uint64)
    a0, a1 = a & M32, a >> S32
    b0, b1 = b & M32, b >> S32
    p00 = a0 * b0
    p01 = a0 * b1
    p10 = a1 * b0
    p11 = a1 * b1
    mid = (p00 >> S32) + (p01 & M32) + (p10 & M32)
    hi = p11 + (p01 >> S32) + (p10 >> S32) + (mid >> S32)
    return hi, a * b


def philox_blocks(key0, key1, counters):
    """Philox4x64-10 applied row-wise to a ``(m, 4)`` uint64 counter array."""
    c = np.array(counters, dtype=np.uint64, copy=True).reshape(-1, 4)
    c0, c1, c2, c3 = c[:, 0], c[:, 1], c[:, 2], c[:, 3]
    k0, k1 = int(key0) & MASK64, int(key1) & MASK64
    with np.errstate(over="ignore"):
        for _ in range(10):
            hi0, lo0 = mulhilo(PHILOX_M0, c0)
            hi1, lo1 = mulhilo(PHILOX_M1, c2)
            c0, c1, c2, c3 = hi1 ^ c1 ^ np.uint64(k0), lo1, hi0 ^ c3 ^ np.uint64(k1), lo0
            k0 = (k0 + PHILOX_W0) & MASK64
            k1 = (k1 + PHILOX_W1) & MASK64
    return np.stack([c0, c1, c2, c3], axis=1)


def _counters(start, count, tag, word2=0):
    c = np.zeros((count, 4), dtype=np.uint64)
    c[:, 0] = np.arange(start, start + count, dtype=np.uint64)
    c[:, 1] = tag
    c[:, 2] = word2
    return c


def random_words(key0, key1, tag, count):
    """``count`` raw 64-bit words from blocks with counters ``(b, tag, 0, 0)``, b = 0, 1, ..."""
    nblocks = (count + 3) // 4
    return philox_blocks(key0, key1, _counters(0, nblocks, tag)).reshape(-1)[:count].copy()


def draw_indices(key0, key1, tag, n, N):
    """``n`` uniform integers in ``[0, N)`` by Lemire's multiply-and-reject method.

    Draw ``m`` tries the four words of block ``(m, tag, j, 0)`` in order for
    ``j = 0, 1, ...`` and keeps the first one that is not rejected.
    """
    N = int(N)
    if N < 1:
        raise ValueError("population size must be >= 1")
    threshold = np.uint64(((1 << 64) - N) % N)
    out = np.empty(n, dtype=np.int64)
    pending = np.arange(n, dtype=np.int64)
    j = 0
    while pending.size:
        words = philox_blocks(key0, key1, _pending_counters(pending, tag, j))
        hi, lo = mulhilo(words, np.uint64(N))
        ok = lo >= threshold
        first = np.argmax(ok, axis=1)
        found = ok[np.arange(pending.size), first]
        out[pending[found]] = hi[np.arange(pending.size), first][found].astype(np.int64)
        pending = pending[~found]
        j += 1
    return out


def _pending_counters(pending, tag, j):
    c = np.zeros((pending.size, 4), dtype=np.uint64)
    c[:, 0] = pending.astype(np.uint64)
    c[:, 1] = tag
    c[:, 2] = j
    return c


def _cholesky_solve(H, g):
    # Same pivot rule as the compiled kernel: fail on pivot <= PIVOT_RTOL * max diagonal.
    p = H.shape[0]
    scale = np.max(np.diag(H))
    if not scale > 0:
        raise SingularMatrix("Hessian has no positive diagonal entry")
    L = np.zeros_like(H)
    for j in range(p):
        s = H[j, j] - L[j, :j] @ L[j, :j]
        if not s > PIVOT_RTOL * scale:
            raise SingularMatrix(f"Cholesky pivot {s:.3e} at position {j}")
        L[j, j] = np.sqrt(s)
        L[j + 1 :, j] = (H[j + 1 :, j] - L[j + 1 :, :j] @ L[j, :j]) / L[j, j]
    z = np.empty(p)
    for j in range(p):
        z[j] = (g[j] - L[j, :j] @ z[:j]) / L[j, j]
    x = np.empty(p)
    for j in reversed(range(p)):
        x[j] = (z[j] - L[j + 1 :, j] @ x[j + 1 :]) / L[j, j]
    return x


def newton_minimize(evaluate, theta0, nrows, grad_tol, max_iter, halving_max):
    """Damped Newton minimisation of ``evaluate(theta) -> (loss, grad, hess)``.

    Returns ``(theta, iterations, grad_norm, hessian, status)``, where the
    gradient norm is the max-norm of the gradient divided by ``nrows``.
    """
    theta = np.array(theta0, dtype=np.float64, copy=True)
    try:
        loss, g, H = evaluate(theta)
    except NonFiniteValue:
        return theta, 0, np.inf, None, STATUS_NONFINITE
    it = 0
    while True:
        gmax = float(np.max(np.abs(g)))
        gnorm = gmax / nrows
        if gnorm > grad_tol and it >= max_iter:
            return theta, it, gnorm, H, STATUS_MAXITER
        try:
            delta = _cholesky_solve(H, g)
        except SingularMatrix:
            return theta, it, gnorm, H, STATUS_SINGULAR
        if gnorm <= grad_tol and np.max(np.abs(delta)) <= STEP_RTOL * (1.0 + np.max(np.abs(theta))):
            return theta, it, gnorm, H, STATUS_OK
        if it >= max_iter:
            return theta, it, gnorm, H, STATUS_MAXITER
        t = 1.0
        for _ in range(halving_max + 1):
            cand = theta - t * delta
            try:
                lc, gc, Hc = evaluate(cand)
            except NonFiniteValue:
                t *= 0.5
                continue
            if lc < loss or (lc <= loss + LOSS_RTOL * (abs(loss) + 1.0) and np.max(np.abs(gc)) < gmax):
                break
            t *= 0.5
        else:
            return theta, it, gnorm, H, STATUS_LINESEARCH
        theta, loss, g, H = cand, lc, gc, Hc
        it += 1


def newton(model, X, y, theta0, grad_tol, max_iter, halving_max):
    return newton_minimize(lambda th: model.evaluate(th, X, y), theta0, X.shape[0], grad_tol, max_iter, halving_max)


_MODELS = {0: LinearLoss, 1: LogisticLoss, 2: PoissonLoss}


def fit_glm(family, X, y, theta0, grad_tol, max_iter, halving_max):
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.float64)
    model = _MODELS[int(family)](X.shape[1])
    return newton(model, X, y, theta0, grad_tol, max_iter, halving_max)
