"""Smooth M-estimation losses.

The three GLM families are negative log-likelihoods with additive constants
dropped, so only minimisers and derivatives are meaningful. No intercept is
added implicitly: include a constant column in ``X`` when one is wanted.

Blocks follow the layout produced by :func:`bagm.rowstore.fetch_rows`: an
``n x (p + 1)`` array whose last column is the response.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from .core import symmetrize
from .errors import NonFiniteLoss, NonFiniteValue

# |x'theta| beyond this makes exp() unreliable for the Poisson family.
POISSON_ETA_LIMIT = 700.0

FAMILY_CODES = {"linear": 0, "logistic": 1, "poisson": 2}


class LossModel:
    """A per-row loss with gradient and Hessian, summed over rows.

    Subclasses override :meth:`evaluate`, or the three single-quantity methods.
    """

    family = "custom"

    def __init__(self, p: int):
        if p < 1:
            raise ValueError(f"parameter dimension must be >= 1, got {p}")
        self.p = int(p)

    def __repr__(self):
        return f"{type(self).__name__}(p={self.p})"

    def loss(self, theta, X, y) -> float:
        return self.evaluate(theta, X, y, derivatives=False)[0]

    def grad(self, theta, X, y) -> np.ndarray:
        return self.evaluate(theta, X, y)[1]

    def hess(self, theta, X, y) -> np.ndarray:
        return self.evaluate(theta, X, y)[2]

    def evaluate(self, theta, X, y, derivatives=True):
        """Return ``(loss, grad, hess)``; the last two are ``None`` if not requested."""
        if not derivatives:
            return self.loss(theta, X, y), None, None
        return self.loss(theta, X, y), self.grad(theta, X, y), self.hess(theta, X, y)


class GLMLoss(LossModel):
    """Canonical-link GLM loss defined through per-row derivatives in the linear predictor."""

    code = -1

    def row_terms(self, eta, y):
        """Per-row loss, first and second derivatives with respect to ``eta``."""
        raise NotImplementedError

    def evaluate(self, theta, X, y, derivatives=True):
        theta = np.asarray(theta, dtype=np.float64)
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        if theta.shape != (X.shape[1],):
            raise ValueError(f"theta has shape {theta.shape}, design has {X.shape[1]} columns")
        eta = X @ theta
        rows, d1, d2 = self.row_terms(eta, y)
        loss = float(np.sum(rows))
        if not np.isfinite(loss):
            raise NonFiniteLoss(f"{self.family} loss is not finite")
        if not derivatives:
            return loss, None, None
        grad = X.T @ d1
        hess = symmetrize(X.T @ (d2[:, None] * X))
        if not (np.all(np.isfinite(grad)) and np.all(np.isfinite(hess))):
            raise NonFiniteValue(f"{self.family} derivatives are not finite")
        return loss, grad, hess


class LinearLoss(GLMLoss):
    family = "linear"
    code = 0

    def row_terms(self, eta, y):
        r = y - eta
        return 0.5 * r * r, -r, np.ones_like(eta)


def softplus(eta):
    """``log(1 + exp(eta))`` without overflow."""
    return np.maximum(eta, 0.0) + np.log1p(np.exp(-np.abs(eta)))


def expit(eta):
    e = np.exp(-np.abs(eta))
    return np.where(eta >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


class LogisticLoss(GLMLoss):
    family = "logistic"
    code = 1

    def row_terms(self, eta, y):
        s = expit(eta)
        return softplus(eta) - y * eta, s - y, s * (1.0 - s)


class PoissonLoss(GLMLoss):
    family = "poisson"
    code = 2

    def row_terms(self, eta, y):
        if eta.size and np.max(np.abs(eta)) > POISSON_ETA_LIMIT:
            raise NonFiniteLoss(f"Poisson linear predictor exceeds +/-{POISSON_ETA_LIMIT:g}")
        mu = np.exp(eta)
        return mu - y * eta, mu - y, mu


class CustomLoss(LossModel):
    """Wrap user-supplied summed loss, gradient and Hessian callables ``f(theta, X, y)``."""

    family = "custom"

    def __init__(self, p: int, loss: Callable, grad: Callable, hess: Callable):
        super().__init__(p)
        self._loss, self._grad, self._hess = loss, grad, hess

    def evaluate(self, theta, X, y, derivatives=True):
        loss = float(self._loss(theta, X, y))
        if not np.isfinite(loss):
            raise NonFiniteLoss("custom loss is not finite")
        if not derivatives:
            return loss, None, None
        grad = np.asarray(self._grad(theta, X, y), dtype=np.float64)
        hess = symmetrize(self._hess(theta, X, y))
        if not (np.all(np.isfinite(grad)) and np.all(np.isfinite(hess))):
            raise NonFiniteValue("custom derivatives are not finite")
        return loss, grad, hess


_FAMILIES = {"linear": LinearLoss, "logistic": LogisticLoss, "poisson": PoissonLoss}


def get_model(family: str, p: int) -> GLMLoss:
    try:
        return _FAMILIES[family](p)
    except KeyError:
        raise ValueError(f"unknown family {family!r}; expected one of {sorted(_FAMILIES)}") from None


def split_block(block):
    block = np.asarray(block, dtype=np.float64)
    if block.ndim != 2 or block.shape[1] < 2:
        raise ValueError(f"a data block needs at least one covariate and a response, got shape {block.shape}")
    return block[:, :-1], block[:, -1]


def _check(model, theta, block):
    X, y = split_block(block)
    theta = np.asarray(theta, dtype=np.float64)
    if X.shape[1] != model.p or theta.shape != (model.p,):
        raise ValueError(f"model has p={model.p}; got theta {theta.shape} and block with {X.shape[1]} covariates")
    return theta, X, y


def loss_sum(model: LossModel, theta, block) -> float:
    theta, X, y = _check(model, theta, block)
    return model.evaluate(theta, X, y, derivatives=False)[0]


def grad_sum(model: LossModel, theta, block) -> np.ndarray:
    theta, X, y = _check(model, theta, block)
    return model.evaluate(theta, X, y)[1]


def hess_sum(model: LossModel, theta, block) -> np.ndarray:
    theta, X, y = _check(model, theta, block)
    return model.evaluate(theta, X, y)[2]
