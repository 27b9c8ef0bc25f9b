"""Bagging M-estimation for datasets too large to fit in memory.

Draw ``K`` subsamples of size ``n`` with replacement from an on-disk row
store, fit each by Newton's method, average, and attach a variance estimate
with Wald intervals and p-values.
"""

__version__ = "0.1.0"

from ._backend import BACKEND
from .bagging import (BaggingResult, bagging_estimate, confidence_intervals, fit_subsamples, variance_estimate,
                      wald_p_values)
from .core import BaggingConfig, SolverConfig, spd_solve
from .errors import *  # noqa: F401,F403
from .ingest import build_store, schema_report
from .models import CustomLoss, LinearLoss, LogisticLoss, LossModel, PoissonLoss, get_model, grad_sum, hess_sum, loss_sum
from .rowstore import Column, RowStore, Schema, fetch_rows, open_store, scan, write_store
from .sampler import SubsampleIndex, draw_subsample, hash64
from .simulate import (MseCurve, SimDesign, SimulationReport, airline_synthetic, generate, monte_carlo, mse_curve,
                       reference_design)
from .solver import FitResult, fit_block, fit_global
