"""Newton fits on a subsample block and on a whole store.

Both use the same damped Newton iteration: a full step solved by Cholesky,
halved until the loss decreases. Iteration stops once the max-norm of the
row-averaged gradient is at most ``grad_tol`` and the next Newton step is
negligible relative to ``theta``. The second condition keeps a fit that
drifts towards infinity (logistic separation) from passing as converged.
Iteration starts at zero unless an initial value is given.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import _kernels_py
from ._backend import kernels
from .core import SolverConfig, resolve_workers
from .errors import MaxIterExceeded, NonFiniteValue, SingularHessian
from .models import GLMLoss, LossModel, split_block
from .rowstore import RowStore


@dataclass(frozen=True)
class FitResult:
    theta: np.ndarray
    iterations: int
    final_grad_norm: float
    hessian_at_solution: np.ndarray


def _result(model, theta, iterations, gnorm, hess, status, where):
    if status == _kernels_py.STATUS_OK:
        return FitResult(theta, int(iterations), float(gnorm), hess)
    if status == _kernels_py.STATUS_SINGULAR:
        raise SingularHessian(f"{model.family} Hessian is singular at iteration {iterations} on {where}")
    if status == _kernels_py.STATUS_MAXITER:
        raise MaxIterExceeded(f"{model.family} fit on {where} did not converge in {iterations} iterations (grad {gnorm:.3e})")
    if status == _kernels_py.STATUS_LINESEARCH:
        raise MaxIterExceeded(f"{model.family} fit on {where}: step halving failed at iteration {iterations} (grad {gnorm:.3e})")
    raise NonFiniteValue(f"{model.family} loss is not finite at the initial value on {where}")


def _init(model, init):
    if init is None:
        return np.zeros(model.p)
    init = np.asarray(init, dtype=np.float64)
    if init.shape != (model.p,) or not np.all(np.isfinite(init)):
        raise ValueError(f"initial value must be a finite vector of length {model.p}")
    return init


def fit_block(model: LossModel, block, init=None, cfg: Optional[SolverConfig] = None) -> FitResult:
    """Minimise the summed loss over the rows of ``block``.

    Raises :class:`SingularHessian` (e.g. separation in logistic data, or a
    collinear design), :class:`MaxIterExceeded`, or :class:`NonFiniteValue`.
    """
    cfg = cfg or SolverConfig()
    X, y = split_block(block)
    if X.shape[0] == 0:
        raise ValueError("cannot fit an empty block")
    if X.shape[1] != model.p:
        raise ValueError(f"model has p={model.p}, block has {X.shape[1]} covariates")
    theta0 = _init(model, init)
    if isinstance(model, GLMLoss) and model.code >= 0:
        out = kernels.fit_glm(model.code, X, y, theta0, cfg.grad_tol, cfg.max_iter, cfg.step_halving_max)
    else:
        out = _kernels_py.newton(model, X, y, theta0, cfg.grad_tol, cfg.max_iter, cfg.step_halving_max)
    return _result(model, *out, where=f"a block of {X.shape[0]} rows")


class _StreamingObjective:
    """Loss, gradient and Hessian summed chunk by chunk over a store."""

    def __init__(self, model, store, chunk_size, workers):
        self.model = model
        self.store = store
        self.ranges = [(s, min(s + chunk_size, store.N)) for s in range(0, store.N, chunk_size)]
        self.workers = workers

    def _partial(self, theta, rng):
        X, y = split_block(self.store.read_range(*rng))
        return self.model.evaluate(theta, X, y)

    def __call__(self, theta):
        if self.workers > 1 and len(self.ranges) > 1:
            with ThreadPoolExecutor(self.workers) as pool:
                parts = list(pool.map(lambda r: self._partial(theta, r), self.ranges))
        else:
            parts = [self._partial(theta, r) for r in self.ranges]
        # Fixed chunk-order reduction keeps results independent of worker count.
        loss, grad, hess = parts[0]
        grad, hess = grad.copy(), hess.copy()
        for l, g, h in parts[1:]:
            loss += l
            grad += g
            hess += h
        return loss, grad, hess


def fit_global(model: LossModel, store: RowStore, cfg: Optional[SolverConfig] = None, init=None,
               chunk_size: int = 65536, parallelism=1) -> FitResult:
    """Whole-sample estimator, streaming the store once per loss evaluation.

    Memory use is bounded by ``chunk_size`` rows per worker.
    """
    cfg = cfg or SolverConfig()
    if store.N == 0:
        raise ValueError("cannot fit an empty store")
    if store.p != model.p:
        raise ValueError(f"model has p={model.p}, store has {store.p} covariates")
    objective = _StreamingObjective(model, store, int(chunk_size), resolve_workers(parallelism))
    out = _kernels_py.newton_minimize(objective, _init(model, init), store.N, cfg.grad_tol, cfg.max_iter,
                                      cfg.step_halving_max)
    return _result(model, *out, where=f"the full store ({store.N} rows)")
