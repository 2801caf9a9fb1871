"""Mean/variance MLP with manual backpropagation.

The network is a shared trunk of dense layers followed by two linear heads:
one for the mean and one for the variance pre-activation.  The variance is
``min(softplus(pre) + floor, ceiling)``.

All parameters live in one flat float64 buffer (``model.params``); the
per-layer weight and bias arrays are views into it.  Gradients use the same
layout, so optimizers can work on the flat vectors directly.
"""
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from . import numcore
from .errors import ConfigError, ShapeError, TraceError

INIT_SCHEMES = ("glorot", "uniform_fan_in")
CHECKPOINT_FORMAT = "hetreg-checkpoint-v1"


@dataclass(frozen=True)
class MlpConfig:
    input_dim: int
    hidden_sizes: tuple
    activation: str = "tanh"
    output_dim: int = 1
    variance_floor: float = 1e-8
    variance_ceiling: float = 1000.0
    # weight init scheme; see ProbabilisticMlp.init
    init: str = "glorot"

    def __post_init__(self):
        object.__setattr__(self, "hidden_sizes", tuple(int(h) for h in self.hidden_sizes))
        if not self.hidden_sizes:
            raise ConfigError("hidden_sizes must be non-empty")
        if self.input_dim < 1 or self.output_dim < 1 or min(self.hidden_sizes) < 1:
            raise ConfigError("all layer dimensions must be >= 1")
        if self.activation not in ("tanh", "relu"):
            raise ConfigError(f"unsupported trunk activation {self.activation!r}")
        if not 0 < self.variance_floor < self.variance_ceiling:
            raise ConfigError("need 0 < variance_floor < variance_ceiling")
        if self.init not in INIT_SCHEMES:
            raise ConfigError(f"unknown init scheme {self.init!r}")

    @property
    def feature_dim(self):
        return self.hidden_sizes[-1]

    def layer_shapes(self):
        """Weight shapes of the trunk layers, then the combined head."""
        dims = (self.input_dim,) + self.hidden_sizes
        shapes = [(dims[i], dims[i + 1]) for i in range(len(self.hidden_sizes))]
        shapes.append((self.feature_dim, 2 * self.output_dim))
        return shapes


@dataclass
class GaussianPrediction:
    mean: np.ndarray
    variance: np.ndarray

    def __post_init__(self):
        if self.mean.shape != self.variance.shape:
            raise ShapeError("mean and variance shapes differ")

    @property
    def std(self):
        return np.sqrt(self.variance)


@dataclass
class ForwardTrace:
    inputs: np.ndarray
    pre_activations: list
    activations: list
    variance_pre: np.ndarray
    clamp_active: np.ndarray

    @property
    def features(self):
        return self.activations[-1]

    @property
    def batch_size(self):
        return self.inputs.shape[0]


def _flat_views(buffer, shapes):
    views, offset = [], 0
    for w_shape in shapes:
        n = w_shape[0] * w_shape[1]
        views.append(buffer[offset:offset + n].reshape(w_shape))
        offset += n
        views.append(buffer[offset:offset + w_shape[1]])
        offset += w_shape[1]
    return views


def _param_count(shapes):
    return sum(a * b + b for a, b in shapes)


@dataclass
class ParamGrads:
    """Gradient buffer laid out exactly like ``ProbabilisticMlp.params``."""

    flat: np.ndarray
    arrays: list = field(repr=False)

    @classmethod
    def zeros(cls, config):
        shapes = config.layer_shapes()
        flat = np.zeros(_param_count(shapes))
        return cls(flat, _flat_views(flat, shapes))


class ProbabilisticMlp:
    def __init__(self, config, params=None):
        self.config = config
        shapes = config.layer_shapes()
        n = _param_count(shapes)
        if params is None:
            params = np.zeros(n)
        params = np.ascontiguousarray(params, dtype=np.float64)
        if params.shape != (n,):
            raise ShapeError(f"expected {n} parameters, got {params.shape}")
        self.params = params
        views = _flat_views(params, shapes)
        self.weights = views[0::2]
        self.biases = views[1::2]

    # -- construction ------------------------------------------------------

    @classmethod
    def init(cls, config, rng):
        """Random init.

        ``glorot``: weights U(+-sqrt(6 / (fan_in + fan_out))), biases zero.
        ``uniform_fan_in``: weights and biases U(+-1/sqrt(fan_in)).
        In both schemes the variance-head bias is set to softplus^-1(1) so the
        initial variance is about 1 on zero features.  Draw order: layer by
        layer (trunk, mean head, variance head), weight (row-major) then bias.
        """
        model = cls(config)
        d = config.output_dim
        head_w, head_b = model.weights[-1], model.biases[-1]
        layers = [(w, b) for w, b in zip(model.weights[:-1], model.biases[:-1])]
        layers.append((head_w[:, :d], head_b[:d]))
        layers.append((head_w[:, d:], head_b[d:]))
        for w, b in layers:
            fan_in, fan_out = w.shape
            if config.init == "glorot":
                limit = np.sqrt(6.0 / (fan_in + fan_out))
                w[...] = rng.uniform_range(-limit, limit, w.shape)
            else:
                limit = 1.0 / np.sqrt(fan_in)
                w[...] = rng.uniform_range(-limit, limit, w.shape)
                b[...] = rng.uniform_range(-limit, limit, b.shape)
        head_b[d:] = numcore.softplus_inverse(1.0)
        return model

    def copy(self):
        return ProbabilisticMlp(self.config, self.params.copy())

    # -- named access ------------------------------------------------------

    def named_arrays(self):
        d = self.config.output_dim
        out = {}
        for i, (w, b) in enumerate(zip(self.weights[:-1], self.biases[:-1])):
            out[f"trunk.{i}.weight"] = w
            out[f"trunk.{i}.bias"] = b
        out["mean_head.weight"] = self.weights[-1][:, :d]
        out["mean_head.bias"] = self.biases[-1][:d]
        out["variance_head.weight"] = self.weights[-1][:, d:]
        out["variance_head.bias"] = self.biases[-1][d:]
        return out

    # -- evaluation --------------------------------------------------------

    def features(self, x):
        h = x
        kind = self.config.activation
        for w, b in zip(self.weights[:-1], self.biases[:-1]):
            h = numcore.activation(kind, h @ w + b)
        return h

    def forward(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.config.input_dim:
            raise ShapeError(f"expected input of shape (batch, {self.config.input_dim}), got {x.shape}")
        cfg = self.config
        pres, acts = [], [x]
        h = x
        for w, b in zip(self.weights[:-1], self.biases[:-1]):
            z = h @ w
            z += b
            h = np.tanh(z) if cfg.activation == "tanh" else np.maximum(z, 0.0)
            pres.append(z)
            acts.append(h)
        out = h @ self.weights[-1]
        out += self.biases[-1]
        d = cfg.output_dim
        mean = out[:, :d]
        var_pre = out[:, d:]
        var = numcore.softplus(var_pre) + cfg.variance_floor
        clamp_active = var >= cfg.variance_ceiling
        np.minimum(var, cfg.variance_ceiling, out=var)
        trace = ForwardTrace(x, pres, acts, var_pre, clamp_active)
        return GaussianPrediction(mean, var), trace

    def predict(self, x):
        return self.forward(x)[0]

    def backward(self, trace, d_mean, d_variance, out=None):
        """Backprop head-level gradients to parameter gradients.

        Computes the gradient of sum(d_mean * mean + d_variance * variance)
        over the batch.  The clamp passes zero gradient where it is active.
        """
        cfg = self.config
        n, d = trace.batch_size, cfg.output_dim
        d_mean = np.asarray(d_mean, dtype=np.float64)
        d_variance = np.asarray(d_variance, dtype=np.float64)
        if d_mean.ndim != 2 or d_variance.shape != d_mean.shape or d_mean.shape[1] != d:
            raise ShapeError(f"head gradients must have shape (batch, {d})")
        if d_mean.shape[0] != n:
            raise TraceError(f"trace is for a batch of {n}, gradients for {d_mean.shape[0]}")
        grads = out if out is not None else ParamGrads.zeros(cfg)
        g = grads.arrays

        d_out = np.empty((n, 2 * d))
        d_out[:, :d] = d_mean
        d_pre = d_variance * numcore.sigmoid(trace.variance_pre)
        d_pre[trace.clamp_active] = 0.0
        d_out[:, d:] = d_pre

        n_layers = len(cfg.hidden_sizes)
        np.dot(trace.activations[-1].T, d_out, out=g[2 * n_layers])
        np.sum(d_out, axis=0, out=g[2 * n_layers + 1])
        delta = d_out @ self.weights[-1].T
        for i in range(n_layers - 1, -1, -1):
            h = trace.activations[i + 1]
            if cfg.activation == "tanh":
                delta *= 1.0 - h * h
            else:
                delta *= trace.pre_activations[i] > 0
            np.dot(trace.activations[i].T, delta, out=g[2 * i])
            np.sum(delta, axis=0, out=g[2 * i + 1])
            if i > 0:
                delta = delta @ self.weights[i].T
        return grads

    def feature_jacobian(self, x, h=1e-4):
        """Central-difference Jacobian of the last hidden layer w.r.t. the input.

        Returns an array of shape (feature_dim, input_dim).
        """
        x = np.asarray(x, dtype=np.float64).reshape(-1)
        return self.feature_jacobians(x[None, :], h)[0]

    def feature_jacobians(self, x, h=1e-4):
        """Jacobians for a batch of points, shape (n, feature_dim, input_dim)."""
        x = np.asarray(x, dtype=np.float64)
        n, m = x.shape
        if m != self.config.input_dim:
            raise ShapeError("input dimension mismatch")
        steps = np.eye(m) * h
        plus = (x[:, None, :] + steps[None]).reshape(n * m, m)
        minus = (x[:, None, :] - steps[None]).reshape(n * m, m)
        diff = (self.features(plus) - self.features(minus)) / (2.0 * h)
        # (n, m, F) -> (n, F, m)
        return diff.reshape(n, m, -1).transpose(0, 2, 1).copy()


def init(config, rng):
    return ProbabilisticMlp.init(config, rng)


def forward(model, x):
    return model.forward(x)


def backward(model, trace, d_mean, d_variance):
    return model.backward(trace, d_mean, d_variance)


def feature_jacobian(model, x):
    return model.feature_jacobian(x)


# -- checkpoints -----------------------------------------------------------

def save_checkpoint(model, path):
    """Write an ``.npz`` checkpoint.

    Entries: ``format`` and ``config`` (JSON strings) plus one little-endian
    float64 (``<f8``) array per named parameter, stored C-contiguous.
    """
    arrays = {name: np.ascontiguousarray(a, dtype="<f8") for name, a in model.named_arrays().items()}
    cfg = asdict(model.config)
    cfg["hidden_sizes"] = list(cfg["hidden_sizes"])
    np.savez(path, format=np.array(CHECKPOINT_FORMAT), config=np.array(json.dumps(cfg, sort_keys=True)), **arrays)


def load_checkpoint(path):
    with np.load(path, allow_pickle=False) as f:
        if str(f["format"]) != CHECKPOINT_FORMAT:
            raise ConfigError(f"{path}: not a {CHECKPOINT_FORMAT} file")
        config = MlpConfig(**json.loads(str(f["config"])))
        model = ProbabilisticMlp(config)
        for name, view in model.named_arrays().items():
            stored = f[name]
            if stored.shape != view.shape:
                raise ShapeError(f"{name}: shape {stored.shape} != {view.shape}")
            view[...] = stored
    return model
