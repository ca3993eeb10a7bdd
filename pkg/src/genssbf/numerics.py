"""Complex vector helpers and the seeded, splittable random stream.

Every stochastic routine in the package draws from an :class:`RngStream`.
A stream is identified by ``(seed, stream_id)``; child streams are derived
with :meth:`RngStream.child`, which hashes the parent id with an index so
results never depend on evaluation order or worker count.
"""

from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1


def mix64(a: int, b: int) -> int:
    """Combine two 64-bit integers into one well-mixed 64-bit value (splitmix64 finalizer)."""
    z = ((a & _MASK64) * 0x9E3779B97F4A7C15 + (b & _MASK64) + 0x632BE59BD9B4E019) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


class RngStream:
    """A reproducible random stream keyed by ``(seed, stream_id)``.

    Two streams built from the same pair produce identical sequences on any
    platform (PCG64 seeded through ``SeedSequence``).
    """

    __slots__ = ("seed", "stream_id", "gen")

    def __init__(self, seed: int, stream_id: int = 0):
        if seed < 0 or stream_id < 0:
            raise ValueError("seed and stream_id must be non-negative")
        self.seed = int(seed) & _MASK64
        self.stream_id = int(stream_id) & _MASK64
        ss = np.random.SeedSequence([self.seed, self.stream_id])
        self.gen = np.random.Generator(np.random.PCG64(ss))

    def child(self, index: int) -> "RngStream":
        return RngStream(self.seed, mix64(self.stream_id, index))

    def __repr__(self) -> str:
        return f"RngStream(seed={self.seed}, stream_id={self.stream_id})"


def as_cvec(a) -> np.ndarray:
    v = np.asarray(a, dtype=np.complex128)
    if v.ndim != 1 or v.size < 1:
        raise ValueError("expected a non-empty 1-D complex vector")
    if not np.all(np.isfinite(v)):
        raise ValueError("vector has non-finite entries")
    return v


def hermitian_inner(a, b) -> complex:
    """Return sum(conj(a_n) * b_n)."""
    a = as_cvec(a)
    b = as_cvec(b)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.size} vs {b.size}")
    return complex(np.vdot(a, b))


def l2_norm(a) -> float:
    a = as_cvec(a)
    return float(np.sqrt(max(hermitian_inner(a, a).real, 0.0)))


def standard_complex_gaussian(rng: RngStream, n: int) -> np.ndarray:
    """Draw n i.i.d. CN(0, 1) entries (real and imaginary parts each have variance 1/2)."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    z = rng.gen.standard_normal((n, 2))
    return (z[:, 0] + 1j * z[:, 1]) * np.sqrt(0.5)


def stack_real(w: np.ndarray) -> np.ndarray:
    """Complex (..., N) -> real (..., 2N) with real parts first, then imaginary parts."""
    w = np.asarray(w)
    return np.concatenate([w.real, w.imag], axis=-1)


def unstack_real(y: np.ndarray) -> np.ndarray:
    """Inverse of :func:`stack_real`."""
    y = np.asarray(y, dtype=np.float64)
    n = y.shape[-1] // 2
    return y[..., :n] + 1j * y[..., n:]
