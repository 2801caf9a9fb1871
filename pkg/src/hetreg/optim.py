"""SGD and Adam updates on flat parameter vectors (updated in place)."""
import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .errors import ConfigError, DivergenceError, ShapeError


@njit(cache=True)
def _count_nonfinite(g):
    bad = 0
    for i in range(g.shape[0]):
        if not np.isfinite(g[i]):
            bad += 1
    return bad


@njit(cache=True)
def _adam_kernel(theta, g, m, v, b1, b2, step_size, inv_sqrt_bc2, eps):
    for i in range(theta.shape[0]):
        gi = g[i]
        mi = b1 * m[i] + (1.0 - b1) * gi
        vi = b2 * v[i] + (1.0 - b2) * gi * gi
        m[i] = mi
        v[i] = vi
        theta[i] -= step_size * mi / (math.sqrt(vi) * inv_sqrt_bc2 + eps)


def _check(params, grads, step):
    if params.shape != grads.shape:
        raise ShapeError(f"params {params.shape} vs grads {grads.shape}")
    bad = _count_nonfinite(grads)
    if bad:
        raise DivergenceError(
            f"non-finite gradient at step {step}",
            {"step": step, "nonfinite": int(bad), "size": int(grads.size)},
        )


def sgd_step(params, grads, lr):
    if lr <= 0:
        raise ConfigError("lr must be positive")
    _check(params, grads, None)
    params -= lr * grads
    return params


@dataclass
class AdamState:
    size: int
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: np.ndarray = field(default=None, repr=False)
    v: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if self.lr <= 0:
            raise ConfigError("lr must be positive")
        if self.m is None:
            self.m = np.zeros(self.size)
        if self.v is None:
            self.v = np.zeros(self.size)


def adam_step(state, params, grads):
    """theta -= lr * m_hat / (sqrt(v_hat) + eps), with bias-corrected moments."""
    _check(params, grads, state.t + 1)
    state.t += 1
    bc1 = 1.0 - state.beta1 ** state.t
    bc2 = 1.0 - state.beta2 ** state.t
    _adam_kernel(params, grads, state.m, state.v, state.beta1, state.beta2,
                 state.lr / bc1, 1.0 / math.sqrt(bc2), state.eps)
    return params


class Sgd:
    def __init__(self, size, lr):
        if lr <= 0:
            raise ConfigError("lr must be positive")
        self.lr = lr
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        _check(params, grads, self.t)
        params -= self.lr * grads


class Adam:
    def __init__(self, size, lr):
        self.state = AdamState(size, lr=lr)

    def step(self, params, grads):
        adam_step(self.state, params, grads)


def make_optimizer(kind, size, lr):
    if kind == "adam":
        return Adam(size, lr)
    if kind == "sgd":
        return Sgd(size, lr)
    raise ConfigError(f"unknown optimizer {kind!r}")
