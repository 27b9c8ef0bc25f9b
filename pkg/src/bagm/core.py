"""Shared configuration types and the SPD linear solve used by the Newton fits."""

from __future__ import annotations

import math
import os
from dataclasses import dataclass
from typing import Literal, Union

import numpy as np
import scipy.linalg

from .errors import InputError, SingularMatrix

# A Cholesky pivot at or below this fraction of the largest diagonal entry is singular.
PIVOT_RTOL = 1e-12


@dataclass(frozen=True)
class SolverConfig:
    grad_tol: float = 1e-8
    max_iter: int = 100
    step_halving_max: int = 30

    def __post_init__(self):
        if not (self.grad_tol > 0 and math.isfinite(self.grad_tol)):
            raise InputError(f"grad_tol must be a positive finite number, got {self.grad_tol}")
        if self.max_iter < 1:
            raise InputError(f"max_iter must be >= 1, got {self.max_iter}")
        if self.step_halving_max < 0:
            raise InputError(f"step_halving_max must be >= 0, got {self.step_halving_max}")


@dataclass(frozen=True)
class BaggingConfig:
    """Subsample size ``n``, subsample count ``K`` and seeding for one bagging run.

    ``parallelism`` is a worker count or ``"auto"`` (one per CPU). Results do
    not depend on it.
    """

    n: int
    K: int
    master_seed: int = 0
    retry_limit: int = 3
    parallelism: Union[int, Literal["auto"]] = 1

    def __post_init__(self):
        if self.n < 1:
            raise InputError(f"subsample size n must be >= 1, got {self.n}")
        if self.K < 1:
            raise InputError(f"number of subsamples K must be >= 1, got {self.K}")
        if self.retry_limit < 0:
            raise InputError(f"retry_limit must be >= 0, got {self.retry_limit}")
        if self.parallelism != "auto" and int(self.parallelism) < 1:
            raise InputError(f"parallelism must be >= 1 or 'auto', got {self.parallelism}")

    @property
    def workers(self) -> int:
        return resolve_workers(self.parallelism)


def resolve_workers(parallelism) -> int:
    if parallelism == "auto" or parallelism is None:
        return os.cpu_count() or 1
    return max(1, int(parallelism))


def symmetrize(a: np.ndarray) -> np.ndarray:
    """Return ``(a + a.T) / 2``, which is exactly symmetric in floating point."""
    a = np.asarray(a, dtype=np.float64)
    return 0.5 * (a + a.T)


def spd_solve(a, b) -> np.ndarray:
    """Solve ``a @ x = b`` for symmetric positive-definite ``a`` by Cholesky.

    Raises :class:`SingularMatrix` when a pivot falls to ``PIVOT_RTOL`` times the
    largest diagonal entry or below. No jitter is ever added.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {a.shape}")
    if b.shape[0] != a.shape[0]:
        raise ValueError(f"dimension mismatch: matrix {a.shape}, right-hand side {b.shape}")
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise SingularMatrix("non-finite entries in linear system")
    scale = float(np.max(np.diag(a))) if a.size else 0.0
    if scale <= 0.0:
        raise SingularMatrix("matrix has no positive diagonal entry")
    try:
        factor = scipy.linalg.cholesky(a, lower=True, check_finite=False)
    except np.linalg.LinAlgError as exc:
        raise SingularMatrix(f"Cholesky factorisation failed: {exc}") from None
    pivots = np.diag(factor) ** 2
    if np.min(pivots) <= PIVOT_RTOL * scale:
        j = int(np.argmin(pivots))
        raise SingularMatrix(f"Cholesky pivot {pivots[j]:.3e} at position {j} is below {PIVOT_RTOL:g} x max diagonal")
    return scipy.linalg.cho_solve((factor, True), b, check_finite=False)
