"""Bagging estimator, its variance estimator and Wald inference."""

from __future__ import annotations

import json
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.special import ndtr, ndtri

from .core import BaggingConfig, SolverConfig, resolve_workers, symmetrize
from .errors import Degenerate, MaxIterExceeded, SingularHessian, SubsampleFitFailed, ZeroSE
from .models import LossModel
from .rowstore import RowStore, fetch_rows
from .sampler import draw_subsample
from .solver import fit_block

RETRYABLE = (SingularHessian, MaxIterExceeded)


class SamplingWarning(UserWarning):
    """The subsample size is outside the range where the asymptotics are expected to hold."""


@dataclass
class BaggingResult:
    theta_bag: np.ndarray
    subsample_thetas: np.ndarray
    se2: Optional[np.ndarray]
    n: int
    K: int
    N: int
    seed: int
    retries_used: int = 0
    family: str = "custom"
    names: list = field(default_factory=list)
    level: float = 0.95
    records_read: int = 0

    @property
    def p(self) -> int:
        return self.theta_bag.shape[0]

    @property
    def se(self) -> Optional[np.ndarray]:
        if self.se2 is None:
            return None
        return np.sqrt(np.maximum(np.diag(self.se2), 0.0))

    @property
    def ci_low(self) -> Optional[np.ndarray]:
        return None if self.se2 is None else confidence_intervals(self, self.level)[0]

    @property
    def ci_high(self) -> Optional[np.ndarray]:
        return None if self.se2 is None else confidence_intervals(self, self.level)[1]

    @property
    def z_stats(self) -> Optional[np.ndarray]:
        if self.se2 is None:
            return None
        se = self.se
        with np.errstate(divide="ignore", invalid="ignore"):
            z = self.theta_bag / se
        return np.where(self.theta_bag == 0, 0.0, z)

    @property
    def p_values(self) -> Optional[np.ndarray]:
        return None if self.se2 is None else wald_p_values(self)

    def to_json(self, include_thetas: bool = False) -> dict:
        def vec(a):
            return None if a is None else [float(v) if math.isfinite(v) else None for v in a]

        try:
            p_values = self.p_values
        except ZeroSE:
            p_values = None

        doc = {
            "family": self.family,
            "names": list(self.names),
            "theta_bag": vec(self.theta_bag),
            "se": vec(self.se),
            "ci": {"level": self.level, "low": vec(self.ci_low), "high": vec(self.ci_high)},
            "z_stats": vec(self.z_stats),
            "p_values": vec(p_values),
            "n": self.n,
            "K": self.K,
            "N": self.N,
            "seed": self.seed,
            "retries_used": self.retries_used,
            "records_read": self.records_read,
        }
        if self.se2 is None:
            doc["se_status"] = "unavailable (Degenerate: K < 2)"
        if include_thetas:
            doc["per_subsample_thetas"] = [vec(row) for row in self.subsample_thetas]
        return doc

    def dumps(self, include_thetas: bool = False) -> str:
        return json.dumps(self.to_json(include_thetas), indent=2) + "\n"


def fit_subsamples(model: LossModel, store: RowStore, n: int, K: int, seed: int, retry_limit: int = 3,
                   solver_cfg: Optional[SolverConfig] = None, parallelism=1) -> tuple:
    """Fit subsamples ``k = 1..K``; return the ``K x p`` estimates and the retry count.

    Subsample ``k`` depends on ``(seed, k)`` only, so the first ``K'`` rows of
    a ``K``-run equal a ``K'``-run. A fit failing with a singular Hessian or
    non-convergence is redrawn with ``attempt = 1, 2, ...`` up to
    ``retry_limit`` times before :class:`SubsampleFitFailed` is raised.
    """
    solver_cfg = solver_cfg or SolverConfig()
    N = store.N

    def one(k):
        last = None
        for attempt in range(retry_limit + 1):
            block = fetch_rows(store, draw_subsample(N, n, seed, k, attempt))
            try:
                return fit_block(model, block, cfg=solver_cfg).theta, attempt
            except RETRYABLE as exc:
                last = exc
        raise SubsampleFitFailed(k, retry_limit + 1, last)

    workers = resolve_workers(parallelism)
    ks = range(1, K + 1)
    if workers > 1 and K > 1:
        with ThreadPoolExecutor(workers) as pool:
            out = list(pool.map(one, ks))
    else:
        out = [one(k) for k in ks]
    thetas = np.empty((K, model.p))
    for k, (theta, _) in enumerate(out):
        thetas[k] = theta
    return thetas, sum(a for _, a in out)


def bagging_estimate(model: LossModel, store: RowStore, cfg: BaggingConfig,
                     solver_cfg: Optional[SolverConfig] = None, level: float = 0.95) -> BaggingResult:
    """Average ``K`` subsample M-estimates, each fit on ``n`` rows drawn with replacement.

    Reads exactly ``n * (K + retries)`` records. With ``K = 1`` the variance
    estimate is unavailable and ``se2`` is ``None``.
    """
    if store.p != model.p:
        raise ValueError(f"model has p={model.p}, store has {store.p} covariates")
    N = store.N
    if N < 1:
        raise ValueError("store is empty")
    if cfg.n > N:
        warnings.warn(f"subsample size n={cfg.n} exceeds N={N}", SamplingWarning, stacklevel=2)
    if cfg.n <= math.sqrt(N):
        warnings.warn(f"subsample size n={cfg.n} is not above sqrt(N)={math.sqrt(N):.1f}; "
                      "bias may dominate", SamplingWarning, stacklevel=2)
    before = store.read_counter
    thetas, retries = fit_subsamples(model, store, cfg.n, cfg.K, cfg.master_seed, cfg.retry_limit, solver_cfg,
                                     cfg.parallelism)
    theta_bag = thetas.mean(axis=0)
    se2 = variance_estimate(thetas, theta_bag, cfg.n, cfg.K, N) if cfg.K >= 2 else None
    return BaggingResult(
        theta_bag=theta_bag,
        subsample_thetas=thetas,
        se2=se2,
        n=cfg.n,
        K=cfg.K,
        N=N,
        seed=cfg.master_seed,
        retries_used=retries,
        family=model.family,
        names=list(store.design_names),
        level=level,
        records_read=store.read_counter - before,
    )


def variance_estimate(subsample_thetas, theta_bag, n: int, K: int, N: int) -> np.ndarray:
    """``(1/(nK) + 1/N) * (n/K) * sum_k (t_k - t_bag)(t_k - t_bag)'``.

    The sum is divided by ``K``, not ``K - 1``.
    """
    thetas = np.asarray(subsample_thetas, dtype=np.float64)
    theta_bag = np.asarray(theta_bag, dtype=np.float64)
    if K < 2:
        raise Degenerate(f"variance estimate needs K >= 2 subsamples, got K={K}")
    if thetas.ndim != 2 or thetas.shape[0] != K or theta_bag.shape != (thetas.shape[1],):
        raise ValueError(f"expected a {K} x p estimate matrix and length-p mean, got {thetas.shape} and {theta_bag.shape}")
    dev = thetas - theta_bag
    return symmetrize((1.0 / (n * K) + 1.0 / N) * (n / K) * (dev.T @ dev))


def normal_quantile(level: float) -> float:
    """Two-sided critical value ``z`` with ``P(|Z| < z) = level``."""
    if not 0.0 < level < 1.0:
        raise ValueError(f"confidence level must lie in (0, 1), got {level}")
    return float(ndtri(0.5 + 0.5 * level))


def confidence_intervals(result: BaggingResult, level: float = 0.95) -> tuple:
    """Per-coordinate Wald intervals ``theta_bag +/- z * se``."""
    if result.se2 is None:
        raise Degenerate("no variance estimate available (K < 2)")
    z = normal_quantile(level)
    half = z * result.se
    return result.theta_bag - half, result.theta_bag + half


def wald_p_values(result: BaggingResult) -> np.ndarray:
    """Two-sided p-values ``2 * (1 - Phi(|theta_bag| / se))``."""
    if result.se2 is None:
        raise Degenerate("no variance estimate available (K < 2)")
    theta, se = result.theta_bag, result.se
    bad = (se == 0) & (theta != 0)
    if np.any(bad):
        raise ZeroSE(f"zero standard error for nonzero estimate at coordinates {np.flatnonzero(bad).tolist()}")
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.abs(theta) / se
    z = np.where(theta == 0, 0.0, z)
    return 2.0 * ndtr(-z)
