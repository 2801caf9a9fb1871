"""Dense float64 helpers, activations and the seeded random number generator.

Matrices are plain 2-D ``numpy.float64`` arrays in C (row-major) order.

The generator is xoshiro256** (Blackman & Vigna) seeded through splitmix64,
so every stream is reproducible bit-for-bit on any platform:

* ``uniform``: ``(next_u64() >> 11) * 2**-53``, a double in [0, 1).
* ``standard_normal``: Box-Muller on pairs ``(u1, u2)`` of uniforms;
  ``r = sqrt(-2 ln(1 - u1))`` and the pair yields ``r cos(2 pi u2)`` then
  ``r sin(2 pi u2)``.  An odd request drops the final sine value.
* ``permutation``: Fisher-Yates from the top, swap index
  ``j = floor(u * (i + 1))`` for ``i = n-1 .. 1``.
"""
import numpy as np
from numba import njit

from .errors import ConfigError, ShapeError

ACTIVATIONS = ("tanh", "relu", "softplus")

_MASK64 = (1 << 64) - 1
_TWO_PI = 2.0 * np.pi
_INV_2_53 = 1.0 / 9007199254740992.0


def as_matrix(a):
    a = np.asarray(a, dtype=np.float64)
    if a.ndim == 1:
        a = a.reshape(-1, 1)
    if a.ndim != 2:
        raise ShapeError(f"expected a 2-D matrix, got shape {a.shape}")
    return np.ascontiguousarray(a)


def matmul(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}")
    return a @ b


def softplus(x):
    x = np.asarray(x, dtype=np.float64)
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    # split on sign so exp never overflows
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def softplus_inverse(y):
    """Inverse of softplus for y > 0."""
    y = np.asarray(y, dtype=np.float64)
    return y + np.log(-np.expm1(-y))


def activation(kind, x):
    if kind == "tanh":
        return np.tanh(x)
    if kind == "relu":
        return np.maximum(x, 0.0)
    if kind == "softplus":
        return softplus(x)
    raise ConfigError(f"unknown activation {kind!r}")


def activation_derivative(kind, x):
    """Elementwise derivative; relu'(0) is taken as 0."""
    x = np.asarray(x, dtype=np.float64)
    if kind == "tanh":
        t = np.tanh(x)
        return 1.0 - t * t
    if kind == "relu":
        return (x > 0).astype(np.float64)
    if kind == "softplus":
        return sigmoid(x)
    raise ConfigError(f"unknown activation {kind!r}")


# ---------------------------------------------------------------------------
# xoshiro256**

def _splitmix64(x):
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return x, z ^ (z >> 31)


def seed_state(seed):
    """Expand an integer seed into the four 64-bit state words."""
    x = int(seed) & _MASK64
    words = []
    for _ in range(4):
        x, z = _splitmix64(x)
        words.append(z)
    return words


@njit(cache=True)
def _rotl(x, k):
    return (x << np.uint64(k)) | (x >> np.uint64(64 - k))


@njit(cache=True)
def _next(s):
    result = _rotl(s[1] * np.uint64(5), 7) * np.uint64(9)
    t = s[1] << np.uint64(17)
    s[2] ^= s[0]
    s[3] ^= s[1]
    s[1] ^= s[2]
    s[0] ^= s[3]
    s[2] ^= t
    s[3] = _rotl(s[3], 45)
    return result


@njit(cache=True)
def _fill_u64(s, out):
    for i in range(out.shape[0]):
        out[i] = _next(s)


@njit(cache=True)
def _fill_uniform(s, out):
    for i in range(out.shape[0]):
        out[i] = np.float64(_next(s) >> np.uint64(11)) * _INV_2_53


@njit(cache=True)
def _fill_normal(s, out):
    n = out.shape[0]
    i = 0
    while i < n:
        u1 = np.float64(_next(s) >> np.uint64(11)) * _INV_2_53
        u2 = np.float64(_next(s) >> np.uint64(11)) * _INV_2_53
        r = np.sqrt(-2.0 * np.log(1.0 - u1))
        out[i] = r * np.cos(_TWO_PI * u2)
        if i + 1 < n:
            out[i + 1] = r * np.sin(_TWO_PI * u2)
        i += 2


@njit(cache=True)
def _shuffle(s, arr):
    for i in range(arr.shape[0] - 1, 0, -1):
        u = np.float64(_next(s) >> np.uint64(11)) * _INV_2_53
        j = np.int64(u * (i + 1))
        tmp = arr[i]
        arr[i] = arr[j]
        arr[j] = tmp


_JUMP = (0x180EC6D33CFD0ABA, 0xD5A61266F0C9392C, 0xA9582618E03FC9AA, 0x39ABDC4529B1661C)


@njit(cache=True)
def _jump(s, poly):
    acc = np.zeros(4, dtype=np.uint64)
    for w in range(4):
        for b in range(64):
            if (poly[w] >> np.uint64(b)) & np.uint64(1):
                acc[0] ^= s[0]
                acc[1] ^= s[1]
                acc[2] ^= s[2]
                acc[3] ^= s[3]
            _next(s)
    s[:] = acc


class SeededRng:
    """xoshiro256** stream.  One owner per run; not thread-safe."""

    algorithm = "xoshiro256**/splitmix64"

    def __init__(self, seed=0, stream=0):
        self.seed = int(seed)
        self.state = np.array(seed_state(seed), dtype=np.uint64)
        for _ in range(int(stream)):
            self.jump()

    @classmethod
    def from_state(cls, words):
        rng = cls.__new__(cls)
        rng.seed = None
        rng.state = np.array([int(w) & _MASK64 for w in words], dtype=np.uint64)
        return rng

    def jump(self):
        """Advance by 2**128 draws, giving a non-overlapping sub-stream."""
        _jump(self.state, np.array(_JUMP, dtype=np.uint64))

    def next_u64(self, n=None):
        out = np.empty(1 if n is None else int(n), dtype=np.uint64)
        _fill_u64(self.state, out)
        return int(out[0]) if n is None else out

    def uniform(self, n=None):
        out = np.empty(1 if n is None else int(n), dtype=np.float64)
        _fill_uniform(self.state, out)
        return float(out[0]) if n is None else out

    def uniform_range(self, low, high, shape):
        size = int(np.prod(shape))
        return low + (high - low) * self.uniform(size).reshape(shape)

    def standard_normal(self, n):
        out = np.empty(int(n), dtype=np.float64)
        if n:
            _fill_normal(self.state, out)
        return out

    def shuffle(self, arr):
        _shuffle(self.state, arr)

    def permutation(self, n):
        idx = np.arange(int(n), dtype=np.int64)
        _shuffle(self.state, idx)
        return idx


def standard_normal(rng, n):
    return rng.standard_normal(n)
