"""Gaussian regression losses with analytic head-level gradients.

Every loss returns per-sample values (summed over output dimensions) and the
gradients of those per-sample values w.r.t. the predicted mean and variance.
Averaging over the batch is left to the caller.
"""
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ShapeError

HALF_LOG_2PI = 0.5 * np.log(2.0 * np.pi)

LOSS_KINDS = ("nll", "beta-nll", "mse", "fixed-var-nll", "mm-std", "mm-var")


@dataclass(frozen=True)
class LossSpec:
    kind: str = "nll"
    beta_mean: float = 0.0
    # None means "same as beta_mean"
    beta_var: float = None
    fixed_variance: float = 1.0
    include_constant: bool = True
    # mm-var only: exclude the mean from the variance term's gradient
    detach_mean: bool = True

    def __post_init__(self):
        if self.kind not in LOSS_KINDS:
            raise ConfigError(f"unknown loss {self.kind!r}; choose from {LOSS_KINDS}")
        if self.beta_var is None:
            object.__setattr__(self, "beta_var", self.beta_mean)
        for b in (self.beta_mean, self.beta_var):
            if not 0.0 <= b <= 2.0:
                raise ConfigError(f"beta must lie in [0, 2], got {b}")
        if self.fixed_variance <= 0:
            raise ConfigError("fixed_variance must be positive")

    @property
    def label(self):
        if self.kind == "beta-nll":
            if self.beta_var != self.beta_mean:
                return f"beta-nll({self.beta_mean:g},{self.beta_var:g})"
            return f"beta-nll({self.beta_mean:g})"
        if self.kind == "fixed-var-nll":
            return f"fixed-var-nll({self.fixed_variance:g})"
        return self.kind


@dataclass
class LossBatchResult:
    per_sample_loss: np.ndarray
    d_mean: np.ndarray
    d_variance: np.ndarray

    @property
    def mean_loss(self):
        return float(np.mean(self.per_sample_loss)) if self.per_sample_loss.size else 0.0


def _check(pred, target):
    target = np.asarray(target, dtype=np.float64)
    if target.shape != pred.mean.shape:
        raise ShapeError(f"target shape {target.shape} != prediction shape {pred.mean.shape}")
    if np.any(pred.variance <= 0):
        raise ValueError("predicted variance must be strictly positive")
    return target


def _nll_terms(mean, var, target, include_constant):
    r2 = (target - mean) ** 2
    value = 0.5 * np.log(var) + r2 / (2.0 * var)
    if include_constant:
        value = value + HALF_LOG_2PI
    return value, r2


def nll(pred, target, include_constant=True):
    target = _check(pred, target)
    mean, var = pred.mean, pred.variance
    value, r2 = _nll_terms(mean, var, target, include_constant)
    d_mean = (mean - target) / var
    d_var = (var - r2) / (2.0 * var * var)
    return LossBatchResult(value.sum(axis=1), d_mean, d_var)


def beta_nll(pred, target, beta_mean, beta_var=None, include_constant=True):
    """NLL with each term scaled by the detached factor variance**beta.

    The mean gradient uses ``beta_mean`` and the variance gradient
    ``beta_var``; the reported value always uses ``beta_mean``'s weight.
    """
    if beta_var is None:
        beta_var = beta_mean
    target = _check(pred, target)
    mean, var = pred.mean, pred.variance
    value, r2 = _nll_terms(mean, var, target, include_constant)
    w_mean = var ** beta_mean
    w_var = w_mean if beta_var == beta_mean else var ** beta_var
    d_mean = w_mean * (mean - target) / var
    d_var = w_var * (var - r2) / (2.0 * var * var)
    return LossBatchResult((w_mean * value).sum(axis=1), d_mean, d_var)


def mse(pred, target):
    target = np.asarray(target, dtype=np.float64)
    if target.shape != pred.mean.shape:
        raise ShapeError(f"target shape {target.shape} != prediction shape {pred.mean.shape}")
    resid = pred.mean - target
    return LossBatchResult((0.5 * resid * resid).sum(axis=1), resid, np.zeros_like(resid))


def fixed_var_nll(pred, target, sigma2, include_constant=True):
    if sigma2 <= 0:
        raise ConfigError("sigma2 must be positive")
    target = np.asarray(target, dtype=np.float64)
    if target.shape != pred.mean.shape:
        raise ShapeError(f"target shape {target.shape} != prediction shape {pred.mean.shape}")
    resid = pred.mean - target
    value = 0.5 * np.log(sigma2) + resid * resid / (2.0 * sigma2)
    if include_constant:
        value = value + HALF_LOG_2PI
    return LossBatchResult(value.sum(axis=1), resid / sigma2, np.zeros_like(resid))


def moment_matching_std(pred, target):
    """(y - mu)^2 + (|y - mu| - sigma)^2 with exact partials."""
    target = _check(pred, target)
    r = target - pred.mean
    a = np.abs(r)
    s = np.sqrt(pred.variance)
    gap = a - s
    value = r * r + gap * gap
    d_mean = -2.0 * r - 2.0 * gap * np.sign(r)
    # d/dvar = d/dsigma * 1/(2 sigma)
    d_var = -gap / s
    return LossBatchResult(value.sum(axis=1), d_mean, d_var)


def moment_matching_var(pred, target, detach_mean_in_var_term=True):
    """0.5 (y - mu)^2 + 0.25 ((y - mu)^2 - var)^2."""
    target = _check(pred, target)
    r = target - pred.mean
    r2 = r * r
    gap = r2 - pred.variance
    value = 0.5 * r2 + 0.25 * gap * gap
    d_mean = -r
    if not detach_mean_in_var_term:
        d_mean = d_mean - gap * r
    d_var = -0.5 * gap
    return LossBatchResult(value.sum(axis=1), d_mean, d_var)


def compute(spec, pred, target):
    """Dispatch on ``spec.kind``."""
    kind = spec.kind
    if kind == "nll":
        return nll(pred, target, spec.include_constant)
    if kind == "beta-nll":
        return beta_nll(pred, target, spec.beta_mean, spec.beta_var, spec.include_constant)
    if kind == "mse":
        return mse(pred, target)
    if kind == "fixed-var-nll":
        return fixed_var_nll(pred, target, spec.fixed_variance, spec.include_constant)
    if kind == "mm-std":
        return moment_matching_std(pred, target)
    if kind == "mm-var":
        return moment_matching_var(pred, target, spec.detach_mean)
    raise ConfigError(f"unknown loss {kind!r}")


def gaussian_log_likelihood(mean, var, target):
    """Per-sample Gaussian log-density summed over dimensions (constant included)."""
    r2 = (np.asarray(target) - mean) ** 2
    return -(0.5 * np.log(var) + r2 / (2.0 * var) + HALF_LOG_2PI).sum(axis=1)
