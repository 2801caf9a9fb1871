"""Datasets: synthetic generators, CSV ingestion, splitting, whitening, batching."""
import csv
from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigError, ParseError
from .numcore import SeededRng

HOMOSCEDASTIC_NOISE = 0.01
HETEROSCEDASTIC_NOISE = 0.3


@dataclass(frozen=True)
class Dataset:
    inputs: np.ndarray
    targets: np.ndarray
    true_mean: np.ndarray = None
    true_std: np.ndarray = None
    name: str = "dataset"

    def __post_init__(self):
        n = self.inputs.shape[0]
        for arr in (self.targets, self.true_mean, self.true_std):
            if arr is not None and arr.shape[0] != n:
                raise ConfigError("row counts of dataset arrays disagree")
        if self.true_std is not None and np.any(self.true_std <= 0):
            raise ConfigError("true_std must be positive")

    def __len__(self):
        return self.inputs.shape[0]

    @property
    def input_dim(self):
        return self.inputs.shape[1]

    @property
    def target_dim(self):
        return self.targets.shape[1]

    def subset(self, idx, name=None):
        pick = lambda a: None if a is None else a[idx]
        return Dataset(self.inputs[idx], self.targets[idx], pick(self.true_mean),
                       pick(self.true_std), name or self.name)


def uniform_grid(a, b, n):
    """n points from a to b inclusive, step (b - a) / (n - 1)."""
    return a + (b - a) / (n - 1) * np.arange(n, dtype=np.float64)


def gen_homoscedastic_sine(n=1000, seed=0):
    """y = 0.4 sin(2 pi x) + 0.01 xi on n evenly spaced points of [0, 12]."""
    if n < 2:
        raise ConfigError("n must be >= 2")
    x = uniform_grid(0.0, 12.0, n)
    mean = 0.4 * np.sin(2.0 * np.pi * x)
    noise = SeededRng(seed).standard_normal(n)
    y = mean + HOMOSCEDASTIC_NOISE * noise
    col = lambda a: a.reshape(-1, 1)
    return Dataset(col(x), col(y), col(mean), np.full((n, 1), HOMOSCEDASTIC_NOISE), "homoscedastic_sine")


def gen_heteroscedastic_sine(n=500, seed=0):
    """y = x sin x + x xi1 + xi2 on [0, 10], both noise terms with std 0.3.

    xi1 is drawn for all points first, then xi2.
    """
    if n < 2:
        raise ConfigError("n must be >= 2")
    x = uniform_grid(0.0, 10.0, n)
    rng = SeededRng(seed)
    xi1 = HETEROSCEDASTIC_NOISE * rng.standard_normal(n)
    xi2 = HETEROSCEDASTIC_NOISE * rng.standard_normal(n)
    mean = x * np.sin(x)
    y = mean + x * xi1 + xi2
    std = HETEROSCEDASTIC_NOISE * np.sqrt(1.0 + x * x)
    col = lambda a: a.reshape(-1, 1)
    return Dataset(col(x), col(y), col(mean), col(std), "heteroscedastic_sine")


GENERATORS = {
    "homoscedastic_sine": gen_homoscedastic_sine,
    "heteroscedastic_sine": gen_heteroscedastic_sine,
}


def generate(name, n, seed):
    try:
        gen = GENERATORS[name]
    except KeyError:
        raise ConfigError(f"unknown generator {name!r}; choose from {sorted(GENERATORS)}") from None
    return gen(n, seed)


def load_csv(path, input_dim, target_dim, name=None):
    """Read ``x0..x{M-1},y0..y{D-1}`` rows.  Row numbers in errors are 1-based
    file lines (the header is line 1)."""
    width = input_dim + target_dim
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as e:
        raise ParseError(f"{path}: {e.strerror}") from e
    rows = []
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise ParseError(f"{path}: missing header row", row=1)
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) < width:
                raise ParseError(f"{path}: row {lineno} has {len(row)} columns, need {width}", row=lineno)
            try:
                rows.append([float(c) for c in row[:width]])
            except ValueError:
                raise ParseError(f"{path}: non-numeric value in row {lineno}", row=lineno) from None
    data = np.array(rows, dtype=np.float64).reshape(-1, width)
    return Dataset(data[:, :input_dim].copy(), data[:, input_dim:].copy(), name=name or str(path))


def save_csv(dataset, path):
    m, d = dataset.input_dim, dataset.target_dim
    header = [f"x{i}" for i in range(m)] + [f"y{i}" for i in range(d)]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in np.hstack([dataset.inputs, dataset.targets]):
            w.writerow([repr(float(v)) for v in row])


def split(dataset, fractions=(0.8, 0.1, 0.1), seed=0):
    """Random permutation, then contiguous train/val/test slices.

    val and test sizes are rounded; train takes the remainder.
    """
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != 3 or min(fractions) <= 0 or abs(sum(fractions) - 1.0) > 1e-9:
        raise ConfigError(f"split fractions must be three positive numbers summing to 1, got {fractions}")
    n = len(dataset)
    n_val = int(round(fractions[1] * n))
    n_test = int(round(fractions[2] * n))
    n_train = n - n_val - n_test
    if n_train < 0:
        raise ConfigError("dataset too small for the requested split")
    perm = SeededRng(seed).permutation(n)
    parts = (perm[:n_train], perm[n_train:n_train + n_val], perm[n_train + n_val:])
    return tuple(dataset.subset(p, f"{dataset.name}:{tag}") for p, tag in zip(parts, ("train", "val", "test")))


@dataclass(frozen=True)
class WhitenStats:
    input_mean: np.ndarray
    input_std: np.ndarray
    target_mean: np.ndarray
    target_std: np.ndarray

    @classmethod
    def identity(cls, input_dim, target_dim):
        return cls(np.zeros(input_dim), np.ones(input_dim), np.zeros(target_dim), np.ones(target_dim))

    def whiten_inputs(self, x):
        return (x - self.input_mean) / self.input_std

    def whiten_targets(self, y):
        return (y - self.target_mean) / self.target_std

    def unwhiten_inputs(self, x):
        return x * self.input_std + self.input_mean

    def unwhiten_targets(self, y):
        return y * self.target_std + self.target_mean

    def unwhiten_variance(self, var):
        return var * self.target_std ** 2

    def to_dict(self):
        return {k: getattr(self, k).tolist() for k in ("input_mean", "input_std", "target_mean", "target_std")}


def fit_whiten(train):
    """Per-column mean and population (1/N) standard deviation."""
    if len(train) == 0:
        raise ConfigError("cannot fit whitening on an empty dataset")
    x, y = train.inputs, train.targets
    stats = WhitenStats(x.mean(axis=0), x.std(axis=0), y.mean(axis=0), y.std(axis=0))
    for label, std in (("input", stats.input_std), ("target", stats.target_std)):
        bad = np.flatnonzero(std == 0)
        if bad.size:
            raise ConfigError(f"constant {label} column(s) {bad.tolist()} cannot be whitened")
    return stats


def apply_whiten(stats, dataset):
    tm = None if dataset.true_mean is None else stats.whiten_targets(dataset.true_mean)
    ts = None if dataset.true_std is None else dataset.true_std / stats.target_std
    return replace(dataset, inputs=stats.whiten_inputs(dataset.inputs),
                   targets=stats.whiten_targets(dataset.targets), true_mean=tm, true_std=ts)


def unwhiten(stats, dataset):
    tm = None if dataset.true_mean is None else stats.unwhiten_targets(dataset.true_mean)
    ts = None if dataset.true_std is None else dataset.true_std * stats.target_std
    return replace(dataset, inputs=stats.unwhiten_inputs(dataset.inputs),
                   targets=stats.unwhiten_targets(dataset.targets), true_mean=tm, true_std=ts)


class BatchIterator:
    """Shuffled mini-batches; each epoch is a fresh Fisher-Yates permutation.

    The last batch of an epoch may be short.
    """

    def __init__(self, dataset, batch_size, rng):
        if len(dataset) == 0:
            raise ConfigError("cannot iterate over an empty dataset")
        if batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        self.inputs = np.ascontiguousarray(dataset.inputs)
        self.targets = np.ascontiguousarray(dataset.targets)
        self.batch_size = int(batch_size)
        self.rng = rng
        self.epoch = 0
        self._n = len(dataset)
        self._order = np.arange(self._n, dtype=np.int64)
        self._pos = self._n

    def __iter__(self):
        return self

    def __next__(self):
        return self.next_batch()

    def next_batch(self):
        if self._pos >= self._n:
            self._order = np.arange(self._n, dtype=np.int64)
            self.rng.shuffle(self._order)
            self._pos = 0
            self.epoch += 1
        idx = self._order[self._pos:self._pos + self.batch_size]
        self._pos += len(idx)
        return self.inputs[idx], self.targets[idx]


def next_batch(iterator):
    return iterator.next_batch()
