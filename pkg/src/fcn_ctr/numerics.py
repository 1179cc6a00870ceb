"""Dense float64 array helpers, deterministic random streams, finite differences.

Conventions used across the package: vectors are 1-D float64 numpy arrays,
matrices are 2-D row-major float64 arrays. All training arithmetic runs in
float64; float32 appears only inside checkpoint files. Every function here is
pure over caller-owned buffers and safe to call concurrently; ``Rng``
instances are single-owner and must not be shared between threads.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

_M64 = (1 << 64) - 1


def _splitmix64(x: int) -> int:
    """One output of the splitmix64 sequence started at state ``x``."""
    x = (x + 0x9E3779B97F4A7C15) & _M64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _M64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _M64
    return x ^ (x >> 31)


def _fnv1a64(s: str) -> int:
    h = 0xCBF29CE484222325
    for b in s.encode("utf-8"):
        h = ((h ^ b) * 0x100000001B3) & _M64
    return h


def derive_seed(seed: int, stream: str) -> int:
    """Split one run seed into an independent child seed for a named stream.

    ``child = splitmix64(splitmix64(seed) XOR fnv1a64(stream))``. The named
    streams used by this package are ``"init"``, ``"shuffle"``, ``"dropout"``,
    and ``"synth"``; frozen values for common inputs live in the test suite so
    the scheme cannot drift silently.
    """
    return _splitmix64(_splitmix64(seed & _M64) ^ _fnv1a64(stream))


class Rng:
    """Deterministic random source backed by the counter-based Philox4x64-10.

    The raw 64-bit word stream for a given seed is fixed by the Philox
    definition and identical across platforms and numpy releases (numpy
    guarantees bit-generator stream stability); test vectors are frozen in
    ``tests/test_numerics.py``. Identical seed implies identical output
    stream. One instance per owner.
    """

    def __init__(self, seed: int):
        self.seed = int(seed) & _M64
        self._gen = np.random.Generator(np.random.Philox(key=self.seed))

    def raw(self, n: int) -> np.ndarray:
        """``n`` raw 64-bit words straight from the Philox core (uint64)."""
        return self._gen.bit_generator.random_raw(n)

    def random(self, size=None) -> np.ndarray:
        """Uniform float64 draws in [0, 1)."""
        return self._gen.random(size)

    def uniform(self, low: float, high: float, size=None) -> np.ndarray:
        return self._gen.uniform(low, high, size)

    def standard_normal(self, size=None) -> np.ndarray:
        return self._gen.standard_normal(size)

    def integers(self, n: int, size=None) -> np.ndarray:
        """Uniform integers in [0, n)."""
        return self._gen.integers(0, n, size=size)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def shuffle(self, seq: list) -> None:
        """In-place Fisher-Yates shuffle of a Python list."""
        for i in range(len(seq) - 1, 0, -1):
            j = int(self._gen.integers(0, i + 1))
            seq[i], seq[j] = seq[j], seq[i]


def matvec(m: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Matrix-vector product ``out[i] = sum_j m[i, j] * v[j]``."""
    m = np.asarray(m, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if m.ndim != 2 or v.ndim != 1 or m.shape[1] != v.shape[0]:
        raise ValueError(
            f"matvec shape mismatch: matrix is {m.shape}, vector is {v.shape}"
        )
    return m @ v


def hadamard(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Element-wise product of two equal-length vectors."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"hadamard shape mismatch: {a.shape} vs {b.shape}")
    return a * b


def init_params(shape, scheme: str = "uniform_fan", rng: Rng | None = None,
                value: float = 0.0, fan_in: int | None = None) -> np.ndarray:
    """Allocate and fill a parameter tensor.

    ``uniform_fan`` draws i.i.d. from U(-1/sqrt(fan_in), +1/sqrt(fan_in)),
    where ``fan_in`` defaults to the last dimension for matrices and to the
    length for vectors. ``constant`` fills with ``value``. Draws are
    deterministic under a fixed ``rng`` seed.
    """
    shape = tuple(int(s) for s in (shape if hasattr(shape, "__len__") else (shape,)))
    if any(s <= 0 for s in shape):
        raise ValueError(f"init_params: non-positive shape {shape}")
    if scheme == "constant":
        return np.full(shape, float(value), dtype=np.float64)
    if scheme == "uniform_fan":
        if rng is None:
            raise ValueError("init_params: uniform_fan requires an rng")
        fan = int(fan_in) if fan_in is not None else shape[-1]
        bound = 1.0 / np.sqrt(fan)
        return rng.uniform(-bound, bound, shape)
    raise ValueError(f"init_params: unknown scheme {scheme!r}")


def finite_diff_grad(f: Callable[[np.ndarray], float], x: np.ndarray,
                     h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient ``(f(x + h e_i) - f(x - h e_i)) / 2h``.

    The workhorse oracle for auditing hand-derived gradients. Raises on any
    non-finite evaluation of ``f``.
    """
    if h <= 0:
        raise ValueError(f"finite_diff_grad: step must be positive, got {h}")
    x = np.asarray(x, dtype=np.float64)
    grad = np.empty_like(x)
    probe = x.copy()
    for i in range(x.shape[0]):
        orig = probe[i]
        probe[i] = orig + h
        fp = float(f(probe))
        probe[i] = orig - h
        fm = float(f(probe))
        probe[i] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise ValueError(
                f"finite_diff_grad: non-finite evaluation at coordinate {i}"
            )
        grad[i] = (fp - fm) / (2.0 * h)
    return grad
