"""Dense float64 helpers and the repo-wide seeded random generator.

Everything downstream (solvers, networks, data generation) goes through
this module for its arithmetic primitives and randomness so that a single
seed reproduces a whole experiment bit for bit.
"""

from __future__ import annotations

import numpy as np

# Sub-stream labels for expanding one experiment seed into independent
# generators (fed to numpy.random.SeedSequence spawn keys).
STREAM_DATA = 0
STREAM_DRIFT = 1
STREAM_INIT_ENCODER = 2
STREAM_INIT_CLASSIFIER = 3
STREAM_INIT_DISCRIMINATOR = 4
STREAM_BATCHES = 5
STREAM_CHECKS = 6


def as_matrix(x, name: str = "matrix") -> np.ndarray:
    """Coerce to a C-contiguous float64 2-D array, rejecting non-finite entries."""
    m = np.ascontiguousarray(x, dtype=np.float64)
    if m.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got ndim={m.ndim}")
    if not np.all(np.isfinite(m)):
        raise ValueError(f"{name} contains non-finite entries")
    return m


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix product with an explicit shape check."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError("matmul expects 2-D operands")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"shape mismatch: {a.shape} x {b.shape}")
    return a @ b


def log_sum_exp(x: np.ndarray, axis=None):
    """log(sum(exp(x))) with max-subtraction for stability."""
    x = np.asarray(x, dtype=np.float64)
    hi = np.max(x, axis=axis, keepdims=True)
    out = np.log(np.sum(np.exp(x - hi), axis=axis, keepdims=True)) + hi
    return out if axis is None else np.squeeze(out, axis=axis)


def softmax(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    """Exp-normalize along ``axis``; stable under large inputs.

    Raises on non-finite input. Output rows are nonnegative and sum to 1.
    """
    z = np.asarray(logits, dtype=np.float64)
    if not np.all(np.isfinite(z)):
        raise ValueError("softmax input contains non-finite entries")
    z = z - np.max(z, axis=axis, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=axis, keepdims=True)


class Rng:
    """Seeded deterministic generator (numpy PCG64).

    Same seed, same build, same call sequence => identical output stream.
    One instance per owner; independent owners derive children via
    :func:`child_rng` instead of sharing state.
    """

    def __init__(self, seed: int, spawn_key: tuple[int, ...] = ()):
        self.seed = int(seed)
        self.spawn_key = tuple(int(k) for k in spawn_key)
        seq = np.random.SeedSequence(entropy=self.seed, spawn_key=self.spawn_key)
        self._gen = np.random.Generator(np.random.PCG64(seq))

    def uniform(self, low=0.0, high=1.0, size=None):
        return self._gen.uniform(low, high, size)

    def gaussian(self, mu=0.0, sigma=1.0, size=None):
        if sigma < 0:
            raise ValueError("sigma must be >= 0")
        return self._gen.normal(mu, sigma, size)

    def integers(self, low, high, size=None):
        return self._gen.integers(low, high, size=size)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def shuffle(self, arr: np.ndarray) -> None:
        self._gen.shuffle(arr)

    def choice_without_replacement(self, n: int, k: int) -> np.ndarray:
        return self._gen.choice(n, size=k, replace=False)


def child_rng(seed: int, *key: int) -> Rng:
    """Expand a top-level experiment seed into a named independent stream."""
    return Rng(seed, spawn_key=key)
