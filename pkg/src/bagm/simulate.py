"""Synthetic designs and the Monte Carlo validation harness.

Replication ``b`` of a design with seed ``s`` regenerates the full sample
from seed ``hash64(s, b)`` and bags it with master seed
``hash64(hash64(s, b), n)``, so every number in a report is a function of the
design seed alone. Within one replication and one ``n``, a grid cell with
``K`` subsamples uses the first ``K`` subsample fits of the largest ``K`` in
the grid. Each cell therefore equals what an independent
:func:`~bagm.bagging.bagging_estimate` call with that ``K`` would return.
"""

from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .bagging import fit_subsamples, normal_quantile, variance_estimate
from .core import SolverConfig, resolve_workers
from .errors import InputError
from .models import expit, get_model
from .rowstore import Column, RowStore, Schema
from .sampler import Stream, hash64
from .solver import fit_global

THETA0 = (-0.2, -0.1, 0.0, 0.1, 0.2)
DESK_N, DESK_B = 20_000, 200
PAPER_N, PAPER_B = 200_000, 1000
DEFAULT_COV = {"linear": "identity", "logistic": "identity", "poisson": "ar1"}


@dataclass(frozen=True)
class SimDesign:
    family: str
    N: int = DESK_N
    theta0: tuple = THETA0
    covariate_cov: str = "identity"
    rho: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.family not in DEFAULT_COV:
            raise InputError(f"unknown design family {self.family!r}")
        if self.covariate_cov not in ("identity", "ar1"):
            raise InputError(f"covariate_cov must be 'identity' or 'ar1', got {self.covariate_cov!r}")
        if self.N < 1:
            raise InputError(f"N must be >= 1, got {self.N}")
        object.__setattr__(self, "theta0", tuple(float(t) for t in self.theta0))

    @property
    def p(self) -> int:
        return len(self.theta0)

    def covariance(self) -> np.ndarray:
        idx = np.arange(self.p)
        if self.covariate_cov == "identity":
            return np.eye(self.p)
        return self.rho ** np.abs(idx[:, None] - idx[None, :])

    def schema(self) -> Schema:
        cols = [Column(f"x{j + 1}", "numeric") for j in range(self.p)]
        return Schema(tuple(cols) + (Column("y", "response"),))


def reference_design(family: str, N: int = DESK_N, seed: int = 0) -> SimDesign:
    """Linear and logistic examples use independent covariates, Poisson uses AR(1) with rho 0.5."""
    return SimDesign(family=family, N=N, covariate_cov=DEFAULT_COV[family], seed=seed)


def generate(design: SimDesign) -> RowStore:
    """Simulate ``N`` rows of ``design`` into an in-memory store.

    Covariates are ``L z`` with ``L`` the Cholesky factor of the covariate
    covariance and ``z`` inverse-CDF normals.
    """
    stream = Stream(design.seed)
    N, p = design.N, design.p
    z = np.column_stack([stream.normal(j, N) for j in range(p)])
    X = z if design.covariate_cov == "identity" else z @ np.linalg.cholesky(design.covariance()).T
    eta = X @ np.asarray(design.theta0)
    if design.family == "linear":
        y = eta + stream.normal(p, N)
    elif design.family == "logistic":
        y = stream.bernoulli(p, expit(eta))
    else:
        y = stream.poisson(p, np.exp(eta))
    data = {f"x{j + 1}": X[:, j] for j in range(p)}
    data["y"] = y
    return RowStore.from_columns(design.schema(), data, metadata={"design": asdict(design)})


def replication_seed(design_seed: int, b: int) -> int:
    return hash64(design_seed, b)


def bagging_seed(rep_seed: int, n: int) -> int:
    return hash64(rep_seed, n)


def parse_grid(grid) -> dict:
    """Normalise a grid to ``{n: sorted K list}``.

    Accepts a mapping, ``(n, K)`` pairs, or the string form
    ``"n=500,750,1000;K=50..250"`` where ``a..b`` steps by ``a`` and
    ``a..b:s`` steps by ``s``.
    """
    if isinstance(grid, str):
        parts = {}
        for piece in grid.split(";"):
            if not piece.strip():
                continue
            key, _, values = piece.partition("=")
            key = key.strip()
            if key not in ("n", "K", "k") or not values:
                raise InputError(f"bad grid component {piece!r}; expected n=... or K=...")
            parts[key.upper() if key == "k" else key] = parse_int_list(values)
        if set(parts) != {"n", "K"}:
            raise InputError(f"grid {grid!r} must define both n and K")
        return {n: sorted(set(parts["K"])) for n in parts["n"]}
    if isinstance(grid, dict):
        out = {int(n): sorted({int(k) for k in ks}) for n, ks in grid.items()}
    else:
        out = {}
        for n, k in grid:
            out.setdefault(int(n), set()).add(int(k))
        out = {n: sorted(ks) for n, ks in out.items()}
    if not out or any(n < 1 or not ks or min(ks) < 1 for n, ks in out.items()):
        raise InputError(f"grid must have n >= 1 and K >= 1 entries, got {out}")
    return out


def parse_int_list(text: str) -> list:
    """``"50,100"``, ``"50..250"`` (step 50) or ``"50..2000:50"``."""
    out = []
    for item in text.split(","):
        item = item.strip()
        if ".." in item:
            lo, _, rest = item.partition("..")
            hi, _, step = rest.partition(":")
            try:
                lo, hi = int(lo), int(hi)
                step = int(step) if step else lo
            except ValueError:
                raise InputError(f"bad range {item!r}") from None
            if lo < 1 or hi < lo or step < 1:
                raise InputError(f"bad range {item!r}")
            out.extend(range(lo, hi + 1, step))
        else:
            try:
                out.append(int(item))
            except ValueError:
                raise InputError(f"bad integer {item!r}") from None
    return out


@dataclass
class CellStats:
    n: int
    K: int
    bias: np.ndarray
    se: np.ndarray
    se_hat: np.ndarray
    ecp: np.ndarray
    n_over_sqrt_N: float
    nK_over_N: float
    theta_bag: np.ndarray = field(repr=False, default=None)
    se_hat_reps: np.ndarray = field(repr=False, default=None)


@dataclass
class SimulationReport:
    design: SimDesign
    B: int
    level: float
    cells: list
    retries_used: int = 0

    def cell(self, n: int, K: int) -> CellStats:
        for c in self.cells:
            if c.n == n and c.K == K:
                return c
        raise KeyError((n, K))

    CSV_HEADER = ("family", "N", "B", "n", "K", "j", "bias", "se", "se_hat", "ecp", "n_over_sqrt_N", "nK_over_N")

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.CSV_HEADER)
        for c in self.cells:
            for j in range(len(c.bias)):
                w.writerow([self.design.family, self.design.N, self.B, c.n, c.K, j + 1, repr(float(c.bias[j])),
                            repr(float(c.se[j])), repr(float(c.se_hat[j])), repr(float(c.ecp[j])),
                            repr(c.n_over_sqrt_N), repr(c.nK_over_N)])
        return buf.getvalue()

    def to_json(self) -> dict:
        return {
            "design": asdict(self.design),
            "B": self.B,
            "level": self.level,
            "retries_used": self.retries_used,
            "cells": [
                {
                    "n": c.n,
                    "K": c.K,
                    "n_over_sqrt_N": c.n_over_sqrt_N,
                    "nK_over_N": c.nK_over_N,
                    "bias": c.bias.tolist(),
                    "se": c.se.tolist(),
                    "se_hat": c.se_hat.tolist(),
                    "ecp": c.ecp.tolist(),
                }
                for c in self.cells
            ],
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2) + "\n"


def _run_replication(design, b, grid, solver_cfg, retry_limit):
    rep_seed = replication_seed(design.seed, b)
    store = generate(replace(design, seed=rep_seed))
    model = get_model(design.family, design.p)
    out = {}
    retries = 0
    for n, Ks in grid.items():
        thetas, r = fit_subsamples(model, store, n, max(Ks), bagging_seed(rep_seed, n), retry_limit, solver_cfg)
        retries += r
        for K in Ks:
            sub = thetas[:K]
            theta_bag = sub.mean(axis=0)
            se_hat = np.sqrt(np.diag(variance_estimate(sub, theta_bag, n, K, design.N))) if K >= 2 else None
            out[n, K] = (theta_bag, se_hat)
    return out, retries


def _map_replications(fn, B, parallelism):
    workers = resolve_workers(parallelism)
    if workers > 1 and B > 1:
        with ThreadPoolExecutor(workers) as pool:
            return list(pool.map(fn, range(B)))
    return [fn(b) for b in range(B)]


def monte_carlo(design: SimDesign, grid, B: int, level: float = 0.95, solver_cfg: Optional[SolverConfig] = None,
                retry_limit: int = 3, parallelism=1) -> SimulationReport:
    """Bias, Monte Carlo SE, mean estimated SE and coverage for each grid cell.

    Bias is the absolute error of the replication mean; SE uses divisor ``B``;
    coverage counts intervals built from each replication's own SE estimate.
    """
    if B < 2:
        raise InputError(f"B must be >= 2 replications, got {B}")
    grid = parse_grid(grid)
    if any(K < 2 for Ks in grid.values() for K in Ks):
        raise InputError("every grid cell needs K >= 2 for the variance estimator")
    z = normal_quantile(level)
    theta0 = np.asarray(design.theta0)
    reps = _map_replications(lambda b: _run_replication(design, b, grid, solver_cfg, retry_limit), B, parallelism)
    cells = []
    for n, Ks in grid.items():
        for K in Ks:
            est = np.array([r[0][n, K][0] for r in reps])
            se_hat = np.array([r[0][n, K][1] for r in reps])
            mean = est.mean(axis=0)
            cells.append(CellStats(
                n=n,
                K=K,
                bias=np.abs(mean - theta0),
                se=np.sqrt(np.mean((est - mean) ** 2, axis=0)),
                se_hat=se_hat.mean(axis=0),
                ecp=np.mean(np.abs(est - theta0) < z * se_hat, axis=0),
                n_over_sqrt_N=n / math.sqrt(design.N),
                nK_over_N=n * K / design.N,
                theta_bag=est,
                se_hat_reps=se_hat,
            ))
    return SimulationReport(design=design, B=B, level=level, cells=cells, retries_used=sum(r[1] for r in reps))


@dataclass
class MseCurve:
    design: SimDesign
    n: int
    K_values: list
    mse_bag: np.ndarray
    mse_global: float
    B: int

    CSV_HEADER = ("K", "mse_bag", "mse_global")

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.CSV_HEADER)
        for K, m in zip(self.K_values, self.mse_bag):
            w.writerow([K, repr(float(m)), repr(float(self.mse_global))])
        return buf.getvalue()

    def to_json(self) -> dict:
        return {"design": asdict(self.design), "n": self.n, "B": self.B, "K": list(self.K_values),
                "mse_bag": self.mse_bag.tolist(), "mse_global": self.mse_global}


def mse_curve(design: SimDesign, n: int, K_list: Sequence[int], B: int, solver_cfg: Optional[SolverConfig] = None,
              retry_limit: int = 3, parallelism=1, chunk_size: int = 65536) -> MseCurve:
    """Mean squared error of the bagging estimator for each ``K``, and of the global estimator."""
    if B < 1:
        raise InputError(f"B must be >= 1, got {B}")
    Ks = sorted({int(k) for k in K_list})
    if not Ks or Ks[0] < 1:
        raise InputError("K_list needs positive entries")
    theta0 = np.asarray(design.theta0)
    model = get_model(design.family, design.p)

    def one(b):
        rep_seed = replication_seed(design.seed, b)
        store = generate(replace(design, seed=rep_seed))
        global_theta = fit_global(model, store, solver_cfg, chunk_size=chunk_size).theta
        thetas, _ = fit_subsamples(model, store, n, Ks[-1], bagging_seed(rep_seed, n), retry_limit, solver_cfg)
        bag = [np.sum((thetas[:K].mean(axis=0) - theta0) ** 2) for K in Ks]
        return np.array(bag), float(np.sum((global_theta - theta0) ** 2))

    reps = _map_replications(one, B, parallelism)
    return MseCurve(design=design, n=n, K_values=Ks, mse_bag=np.mean([r[0] for r in reps], axis=0),
                    mse_global=float(np.mean([r[1] for r in reps])), B=B)


# -- airline-like synthetic data ---------------------------------------------

DEP_TIME_LEVELS = ("midnight", "morning", "afternoon", "evening")
DAY_LEVELS = ("Monday", "Tuesday", "Wednesday", "Thursday", "Friday", "Saturday", "Sunday")
MONTH_LEVELS = ("January", "February", "March", "April", "May", "June", "July", "August", "September",
                "October", "November", "December")

# Generator truth, in design-column order; values follow the published airline fit.
AIRLINE_COEFFICIENTS = {
    "intercept": -2.025,
    "Distance": 0.122,
    "DepTime[morning]": 0.396,
    "DepTime[afternoon]": 0.857,
    "DepTime[evening]": 1.057,
    "DayOfWeek[Tuesday]": -0.048,
    "DayOfWeek[Wednesday]": 0.046,
    "DayOfWeek[Thursday]": 0.198,
    "DayOfWeek[Friday]": 0.249,
    "DayOfWeek[Saturday]": -0.167,
    "DayOfWeek[Sunday]": -0.015,
    "Month[February]": -0.064,
    "Month[March]": -0.131,
    "Month[April]": -0.337,
    "Month[May]": -0.341,
    "Month[June]": -0.025,
    "Month[July]": -0.098,
    "Month[August]": -0.152,
    "Month[September]": -0.534,
    "Month[October]": -0.384,
    "Month[November]": -0.275,
    "Month[December]": 0.154,
}

AIRLINE_SCHEMA = Schema((
    Column("intercept", "numeric"),
    Column("Distance", "numeric"),
    Column("DepTime", "categorical", DEP_TIME_LEVELS),
    Column("DayOfWeek", "categorical", DAY_LEVELS),
    Column("Month", "categorical", MONTH_LEVELS),
    Column("Delayed", "response"),
))


def airline_synthetic(N: int, seed: int = 0) -> RowStore:
    """Flight-delay-like data: 22 design columns including the intercept.

    Distance is log-normal in miles, then standardised with divisor ``N``;
    the categorical covariates are uniform over their levels; ``Delayed`` is
    drawn from the logistic model with :data:`AIRLINE_COEFFICIENTS`.
    """
    stream = Stream(seed)
    miles = np.exp(6.5 + 0.7 * stream.normal(0, N))
    mean, sd = float(miles.mean()), float(miles.std())
    data = {
        "intercept": np.ones(N),
        "Distance": (miles - mean) / sd,
        "DepTime": stream.categorical(1, N, len(DEP_TIME_LEVELS)),
        "DayOfWeek": stream.categorical(2, N, len(DAY_LEVELS)),
        "Month": stream.categorical(3, N, len(MONTH_LEVELS)),
    }
    schema = Schema(tuple(
        replace(c, mean=mean, sd=sd) if c.name == "Distance" else c for c in AIRLINE_SCHEMA.columns
    ))
    eta = np.full(N, AIRLINE_COEFFICIENTS["intercept"]) + AIRLINE_COEFFICIENTS["Distance"] * data["Distance"]
    for name, levels in (("DepTime", DEP_TIME_LEVELS), ("DayOfWeek", DAY_LEVELS), ("Month", MONTH_LEVELS)):
        effects = np.array([0.0] + [AIRLINE_COEFFICIENTS[f"{name}[{lvl}]"] for lvl in levels[1:]])
        eta += effects[data[name]]
    data["Delayed"] = stream.bernoulli(4, expit(eta))
    return RowStore.from_columns(schema, data, metadata={"generator": "airline_synthetic", "seed": seed})


def airline_truth() -> np.ndarray:
    return np.array([AIRLINE_COEFFICIENTS[name] for name in AIRLINE_SCHEMA.design_names])
