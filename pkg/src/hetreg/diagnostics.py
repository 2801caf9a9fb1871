"""Training-pathology instruments evaluated on frozen model snapshots."""
import csv
from dataclasses import dataclass

import numpy as np

from .losses import gaussian_log_likelihood

RESIDUAL_FLOOR = 1e-8


@dataclass
class JacobianVarianceReport:
    points: np.ndarray
    values: np.ndarray
    radius: float
    ball_sizes: np.ndarray

    def to_csv(self, path, points=None):
        """Columns x0..x{M-1}, v.  ``points`` overrides the coordinates written
        (e.g. to report them in the original input scale)."""
        pts = self.points if points is None else points
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow([f"x{i}" for i in range(pts.shape[1])] + ["v"])
            for p, v in zip(pts, self.values):
                w.writerow([repr(float(c)) for c in p] + [repr(float(v))])


@dataclass
class SamplingProbabilityReport:
    probabilities: np.ndarray
    normalizer: float

    @property
    def uniform(self):
        return 1.0 / len(self.probabilities)

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["index", "p"])
            for i, p in enumerate(self.probabilities):
                w.writerow([i, repr(float(p))])


@dataclass
class ResidualHistogram:
    edges: np.ndarray
    counts: np.ndarray
    residuals: np.ndarray

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["bin_lo", "bin_hi", "count"])
            for lo, hi, c in zip(self.edges[:-1], self.edges[1:], self.counts):
                w.writerow([repr(float(lo)), repr(float(hi)), int(c)])


@dataclass
class Metrics:
    rmse: float
    mean_ll: float
    n: int


def default_radius(points, fraction=0.01):
    """``fraction`` of the diagonal of the points' bounding box."""
    points = np.asarray(points, dtype=np.float64)
    if len(points) == 0:
        return fraction
    return float(fraction * np.linalg.norm(points.max(axis=0) - points.min(axis=0)))


def ball_members(points, radius):
    """Boolean matrix: entry (i, j) true iff ||x_i - x_j|| <= radius."""
    n = len(points)
    d2 = np.zeros((n, n))
    # accumulate per coordinate; avoids the cancellation of |a|^2 + |b|^2 - 2ab
    for j in range(points.shape[1]):
        diff = points[:, j][:, None] - points[:, j][None, :]
        d2 += diff * diff
    return d2 <= radius * radius


def jacobian_variance_from_jacobians(points, jacobians, radius):
    """Entrywise population variance of Jacobians inside each L2 ball,
    averaged over the matrix entries.

    ``jacobians`` has shape (n, F, M) or (n, F*M).  Deviations are taken
    relative to the first ball member before squaring, so equal Jacobians give
    exactly zero.
    """
    points = np.asarray(points, dtype=np.float64)
    if points.ndim == 1:
        points = points[:, None]
    n = len(points)
    jac = np.asarray(jacobians, dtype=np.float64).reshape(n, -1)
    members = ball_members(points, radius)
    values = np.empty(n)
    sizes = members.sum(axis=1)
    for i in range(n):
        block = jac[members[i]]
        shifted = block - block[0]
        mean = shifted.mean(axis=0)
        var = (shifted * shifted).mean(axis=0) - mean * mean
        values[i] = max(float(var.mean()), 0.0)
    return JacobianVarianceReport(points, values, float(radius), sizes)


def jacobian_variance(model, inputs, radius=None, h=1e-4):
    """Jacobian variance of the model's last-hidden-layer features at every
    input point.  ``inputs`` are in the model's own (whitened) input space."""
    inputs = np.asarray(inputs, dtype=np.float64)
    if radius is None:
        radius = default_radius(inputs)
    if radius <= 0:
        raise ValueError("radius must be positive")
    jac = model.feature_jacobians(inputs, h)
    return jacobian_variance_from_jacobians(inputs, jac, radius)


def effective_sampling_distribution(pred_variance):
    """p_i proportional to 1 / variance_i (mean variance across dimensions)."""
    var = np.asarray(pred_variance, dtype=np.float64)
    if var.ndim == 2:
        var = var.mean(axis=1)
    if np.any(var <= 0):
        raise ValueError("variances must be positive")
    inv = 1.0 / var
    z = float(inv.sum())
    return SamplingProbabilityReport(inv / z, z)


def residual_histogram(pred_mean, targets, bins_per_decade=4):
    """Histogram of per-sample L2 residual norms on log10 bins starting at 1e-8.

    Bin k covers [10**(-8 + k/b), 10**(-8 + (k+1)/b)).  Residuals below 1e-8
    (including exact zeros) land in bin 0.
    """
    resid = np.asarray(targets, dtype=np.float64) - np.asarray(pred_mean, dtype=np.float64)
    if resid.ndim == 1:
        resid = resid[:, None]
    norms = np.sqrt(np.sum(resid * resid, axis=1))
    logpos = (np.log10(np.maximum(norms, RESIDUAL_FLOOR)) - np.log10(RESIDUAL_FLOOR)) * bins_per_decade
    idx = np.floor(np.round(logpos, 9)).astype(np.int64)
    n_bins = int(idx.max()) + 1 if len(idx) else 1
    counts = np.bincount(idx, minlength=n_bins)
    edges = 10.0 ** (np.log10(RESIDUAL_FLOOR) + np.arange(n_bins + 1) / bins_per_decade)
    return ResidualHistogram(edges, counts, norms)


def predict_original_scale(model, dataset, stats):
    """Mean and variance of the model's prediction in the original target units."""
    x = stats.whiten_inputs(dataset.inputs)
    pred = model.predict(x)
    return stats.unwhiten_targets(pred.mean), stats.unwhiten_variance(pred.variance)


def metrics_from_predictions(mean, var, targets):
    resid = targets - mean
    n = len(targets)
    if n == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    rmse = float(np.sqrt(np.mean(resid * resid)))
    mean_ll = float(np.mean(gaussian_log_likelihood(mean, var, targets)))
    return Metrics(rmse, mean_ll, n)


def evaluate(model, dataset, stats):
    """RMSE over all sample-dimension pairs and mean per-sample log-likelihood,
    both in the original target scale."""
    mean, var = predict_original_scale(model, dataset, stats)
    return metrics_from_predictions(mean, var, dataset.targets)


def coverage(mean, std, targets, k=2.0):
    """Fraction of targets with |y - mean| <= k std (all dimensions)."""
    inside = np.abs(targets - mean) <= k * std
    return float(np.mean(np.all(inside, axis=1)))
