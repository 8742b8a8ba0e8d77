"""Numeric core: fixed-order matmul, argmax with a tie rule, splittable RNG.

Matrices and vectors are plain float64 numpy arrays.  The matmul kernel is
chosen at import: the compiled extension when it is importable, otherwise
the numpy fallback.  ``SMARTMIXED_BACKEND=python`` forces the fallback.
"""

from __future__ import annotations

import os
import zlib

import numpy as np

from smartmixed.errors import DimensionError, EmptyInputError, NonFiniteError

from smartmixed import _fallback

_kernels = None
if os.environ.get("SMARTMIXED_BACKEND", "").lower() not in ("python", "fallback"):
    try:
        from smartmixed import _kernels
    except ImportError:  # extension not built
        _kernels = None

BACKEND = "compiled" if _kernels is not None else "python"
_impl = _kernels if _kernels is not None else _fallback
_matmul_impl = _impl.matmul


def available_backends() -> dict:
    """Map backend name to its kernel module (for tests and benchmarks)."""
    out = {"python": _fallback}
    if _kernels is not None:
        out["compiled"] = _kernels
    return out


def adam_update(p, g, m, v, beta1, beta2, bc1, bc2, lr, eps) -> None:
    """Fused in-place Adam step on same-shaped contiguous float64 arrays."""
    for arr in (p, m, v):
        if not arr.flags.c_contiguous:
            raise ValueError("adam_update needs C-contiguous parameter and moment arrays")
    _impl.adam_update(p.reshape(-1), g.reshape(-1), m.reshape(-1), v.reshape(-1),
                      beta1, beta2, bc1, bc2, lr, eps)


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """``C[i, j] = sum_k A[i, k] * B[k, j]`` with ascending-k summation.

    Accepts strided views (e.g. ``W.T``) without copying.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2:
        raise DimensionError(f"matmul needs 2-D operands, got {a.ndim}-D and {b.ndim}-D")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    return _matmul_impl(a, b)


def argmax(v) -> int:
    """Index of the largest entry; ties go to the lowest index."""
    v = np.asarray(v, dtype=np.float64)
    if v.size == 0:
        raise EmptyInputError("argmax of an empty vector")
    # np.argmax returns the first occurrence of the maximum
    return int(np.argmax(v))


def argmax_rows(m: np.ndarray) -> np.ndarray:
    """Row-wise :func:`argmax` over the last axis."""
    m = np.asarray(m, dtype=np.float64)
    if m.shape[-1] == 0:
        raise EmptyInputError("argmax over an empty axis")
    return np.argmax(m, axis=-1)


def check_finite(x: np.ndarray, what: str = "array") -> np.ndarray:
    if not np.all(np.isfinite(x)):
        raise NonFiniteError(f"{what} contains NaN or Inf")
    return x


def _stream_key(stream_id) -> int:
    if isinstance(stream_id, (int, np.integer)):
        if stream_id < 0:
            raise ValueError("stream ids must be non-negative")
        return int(stream_id)
    if isinstance(stream_id, str):
        # crc32 is stable across processes, unlike hash()
        return zlib.crc32(stream_id.encode("utf-8"))
    raise TypeError(f"unsupported stream id {stream_id!r}")


class Rng:
    """Counter-based generator addressed by ``(seed, stream path)``.

    Backed by Philox, whose output for a given key is fixed across
    platforms.  ``child`` derives an independent stream without touching
    this one's state, so any draw can be replayed from its address alone.
    """

    __slots__ = ("seed", "path", "_gen")

    def __init__(self, seed: int, path: tuple = ()):
        seed = int(seed)
        if seed < 0 or seed >= 2**64:
            raise ValueError("seed must fit in an unsigned 64-bit integer")
        self.seed = seed
        self.path = tuple(_stream_key(p) for p in path)
        ss = np.random.SeedSequence(self.seed, spawn_key=self.path)
        self._gen = np.random.Generator(np.random.Philox(ss))

    def child(self, stream_id) -> "Rng":
        return Rng(self.seed, self.path + (_stream_key(stream_id),))

    def uniform(self, n: int) -> np.ndarray:
        """``n`` draws from [0, 1); advances this stream."""
        if n < 0:
            raise ValueError("n must be non-negative")
        return self._gen.random(int(n))

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(int(n))

    def __repr__(self):
        return f"Rng(seed={self.seed}, path={self.path})"


def rng_uniform(rng: Rng, n: int) -> np.ndarray:
    return rng.uniform(n)
