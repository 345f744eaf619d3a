"""Small dense numeric kernel on top of numpy.

Vectors and matrices are plain ``numpy.float64`` arrays; :func:`vec` and
:func:`mat` validate them at module boundaries. Row-major (C order) layout is
enforced so serialized matrices are portable.

Random streams always use numpy's Philox-4x64 counter-based bit generator,
never the platform default, so a given seed replays bit-identically.
"""
from __future__ import annotations

from typing import Callable

import numpy as np

from .errors import NumericError, ShapeError

Vec64 = np.ndarray
Mat64 = np.ndarray


def vec(data, *, allow_empty: bool = False) -> Vec64:
    v = np.ascontiguousarray(data, dtype=np.float64)
    if v.ndim != 1:
        raise ShapeError(f"expected a 1-D vector, got shape {v.shape}")
    if v.size == 0 and not allow_empty:
        raise ShapeError("vector must be non-empty")
    if not np.all(np.isfinite(v)):
        raise NumericError("vector has non-finite entries")
    return v


def mat(data, rows: int | None = None, cols: int | None = None) -> Mat64:
    m = np.ascontiguousarray(data, dtype=np.float64)
    if m.ndim != 2:
        raise ShapeError(f"expected a 2-D matrix, got shape {m.shape}")
    if rows is not None and m.shape[0] != rows:
        raise ShapeError(f"expected {rows} rows, got {m.shape[0]}")
    if cols is not None and m.shape[1] != cols:
        raise ShapeError(f"expected {cols} cols, got {m.shape[1]}")
    if not np.all(np.isfinite(m)):
        raise NumericError("matrix has non-finite entries")
    return m


def matmul(a: Mat64, b: Mat64) -> Mat64:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul needs 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}")
    out = a @ b
    if not np.all(np.isfinite(out)):
        raise NumericError("matmul produced non-finite entries")
    return out


def softmax(logits, axis: int = -1) -> np.ndarray:
    """Max-subtracted softmax along ``axis``."""
    z = np.asarray(logits, dtype=np.float64)
    if z.size == 0 or z.shape[axis] == 0:
        raise ShapeError("softmax of an empty input")
    if not np.all(np.isfinite(z)):
        raise NumericError("softmax input has non-finite entries")
    z = z - z.max(axis=axis, keepdims=True)
    ez = np.exp(z)
    return ez / ez.sum(axis=axis, keepdims=True)


def log_softmax(logits, axis: int = -1) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    if z.size == 0 or z.shape[axis] == 0:
        raise ShapeError("log_softmax of an empty input")
    z = z - z.max(axis=axis, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=axis, keepdims=True))


def finite_diff_grad(f: Callable[[np.ndarray], float], x, h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of a scalar function, one coordinate at a time.

    ``x`` may have any shape; the result has the same shape.
    """
    if not h > 0:
        raise ValueError("step h must be positive")
    x = np.array(x, dtype=np.float64)
    grad = np.empty_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = float(f(x))
        flat[i] = orig - h
        fm = float(f(x))
        flat[i] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise NumericError(f"non-finite function value near coordinate {i}")
        gflat[i] = (fp - fm) / (2.0 * h)
    return grad


def seeded_rng(seed: int) -> np.random.Generator:
    """Deterministic stream backed by Philox-4x64 (counter-based)."""
    return np.random.Generator(np.random.Philox(int(seed)))


def child_seed(seed: int, *keys: int) -> int:
    """Derive an independent integer seed from a parent seed and integer keys."""
    ss = np.random.SeedSequence([int(seed), *[int(k) for k in keys]])
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))
