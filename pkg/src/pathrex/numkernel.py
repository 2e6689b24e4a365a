"""Small dense numeric kernel used by every other module.

Vectors and matrices are plain numpy arrays. Parameters live in a
:class:`ParamStore` together with one gradient buffer each. Because the
training objective is maximised, :func:`sgd_step` performs gradient *ascent*.
"""

import hashlib
import math

import numpy as np

from .errors import DimensionError, DivergenceError


def affine(W, x, b):
    """Return ``W @ x + b``."""
    W = np.asarray(W)
    x = np.asarray(x)
    b = np.asarray(b)
    if W.ndim != 2 or x.ndim != 1 or b.ndim != 1 or W.shape[1] != x.shape[0] or W.shape[0] != b.shape[0]:
        raise DimensionError(f"affine: W{W.shape} x{x.shape} b{b.shape} do not conform")
    return W @ x + b


def softmax(z):
    """Numerically stable softmax over the last axis."""
    z = np.asarray(z)
    if z.size == 0 or z.shape[-1] == 0:
        raise ValueError("softmax of an empty vector")
    shifted = z - z.max(axis=-1, keepdims=True)
    ez = np.exp(shifted)
    return ez / ez.sum(axis=-1, keepdims=True)


def l1_distance(a, b):
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise DimensionError(f"l1_distance: shapes {a.shape} and {b.shape} differ")
    return float(np.abs(a - b).sum())


def _key_int(key):
    if isinstance(key, (int, np.integer)) and key >= 0:
        return int(key)
    digest = hashlib.blake2b(repr(key).encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


class SeededRng:
    """Counter-based generator (Philox) addressed by a seed plus a key path.

    ``rng.child("dropout", epoch, step)`` derives an independent stream whose
    output depends only on the seed and the keys, never on how many numbers
    other streams have consumed. That is what keeps threaded work and replays
    reproducible.
    """

    def __init__(self, seed, key=()):
        self.seed = int(seed)
        self.key = tuple(key)
        seq = np.random.SeedSequence(self.seed, spawn_key=self.key)
        self._gen = np.random.Generator(np.random.Philox(seq))

    def child(self, *keys):
        return SeededRng(self.seed, self.key + tuple(_key_int(k) for k in keys))

    def random(self, n=None):
        return self._gen.random(n)

    def uniform(self, low, high, size=None):
        return self._gen.uniform(low, high, size)

    def integers(self, low, high=None, size=None):
        return self._gen.integers(low, high, size)

    def permutation(self, n):
        return self._gen.permutation(n)

    def choice(self, n, size, replace=False):
        return self._gen.choice(n, size=size, replace=replace)

    def __repr__(self):
        return f"SeededRng(seed={self.seed}, key={self.key})"


def dropout_mask(rng, keep_p, n, train=True, dtype=np.float64):
    """Inverted-dropout mask: entries are 0 or ``1/keep_p`` with mean 1."""
    if not 0.0 < keep_p <= 1.0:
        raise ValueError(f"keep probability must be in (0, 1], got {keep_p}")
    if not train or keep_p == 1.0:
        return np.ones(n, dtype=dtype)
    keep = rng.random(n) < keep_p
    return (keep / keep_p).astype(dtype)


class ParamStore:
    """Named parameter tensors, each paired with a same-shape gradient."""

    def __init__(self, dtype=np.float32):
        self.dtype = np.dtype(dtype)
        self.params = {}
        self.grads = {}

    def add(self, name, value):
        value = np.array(value, dtype=self.dtype)
        self.params[name] = value
        self.grads[name] = np.zeros_like(value)
        return value

    def __getitem__(self, name):
        return self.params[name]

    def __contains__(self, name):
        return name in self.params

    def names(self):
        return list(self.params)

    def zero_grads(self):
        for g in self.grads.values():
            g.fill(0)

    def copy(self, dtype=None):
        other = ParamStore(dtype or self.dtype)
        for name, value in self.params.items():
            other.add(name, value)
        return other

    def state(self):
        return {name: value.copy() for name, value in self.params.items()}

    def load_state(self, state):
        for name, value in state.items():
            self.params[name][...] = value


class GradBuffer:
    """Private gradient accumulator merged into a store in a fixed order.

    Dense contributions are summed per name; row-sparse contributions (for
    embedding tables) are kept in insertion order and scattered on merge.
    """

    def __init__(self):
        self.dense = {}
        self.rows = []

    def add(self, name, value):
        if name in self.dense:
            self.dense[name] += value
        else:
            self.dense[name] = np.array(value, copy=True)

    def add_rows(self, name, rows, values):
        self.rows.append((name, np.asarray(rows), np.asarray(values)))

    def merge_into(self, store):
        for name, value in self.dense.items():
            store.grads[name] += value.astype(store.dtype, copy=False)
        for name, rows, values in self.rows:
            np.add.at(store.grads[name], rows, values.astype(store.dtype, copy=False))


def sgd_step(store, lr):
    """Ascent step ``p <- p + lr * grad`` for every parameter, then zero grads."""
    if not lr > 0:
        raise ValueError(f"learning rate must be positive, got {lr}")
    for name, grad in store.grads.items():
        if not np.all(np.isfinite(grad)):
            raise DivergenceError(f"non-finite gradient in parameter {name!r}", where=name)
    for name, param in store.params.items():
        param += store.dtype.type(lr) * store.grads[name]
    store.zero_grads()
    return store


def finite_diff_check(loss_fn, store, eps=1e-5, names=None):
    """Compare ``store.grads`` against central differences of ``loss_fn``.

    ``loss_fn(store)`` must be deterministic. Returns the largest relative
    error ``|a - n| / max(|a|, |n|, 1e-8)`` over all checked coordinates; a
    non-finite numeric derivative counts as an infinite error.
    """
    worst = 0.0
    for name in names or store.names():
        param = store.params[name]
        analytic = store.grads[name]
        flat = param.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            up = loss_fn(store)
            flat[i] = orig - eps
            down = loss_fn(store)
            flat[i] = orig
            numeric = (up - down) / (2 * eps)
            a = float(analytic.reshape(-1)[i])
            if not math.isfinite(numeric):
                return math.inf
            err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
            worst = max(worst, err)
    return worst
