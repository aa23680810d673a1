"""Small input-validation helpers shared by the public entry points.

These keep the error messages uniform ("name must ...") and let the library
accept dense arrays, sparse matrices/arrays, and plain sequences
interchangeably at its boundaries.
"""

from __future__ import annotations

import numbers

import numpy as np
from scipy import sparse

__all__ = [
    "as_sparse_matrix",
    "as_vector",
    "check_positive_scalar",
    "check_variances",
    "is_complex_dtype",
]


def is_complex_dtype(a) -> bool:
    return np.issubdtype(np.asarray(a).dtype if not sparse.issparse(a) else a.dtype, np.complexfloating)


def as_sparse_matrix(m, name: str = "matrix") -> sparse.csr_array:
    """Coerce a 2-d array-like or sparse matrix to CSR with finite entries."""
    if sparse.issparse(m):
        out = sparse.csr_array(m)
    else:
        arr = np.asarray(m)
        if arr.ndim != 2:
            raise ValueError(f"{name} must be 2-dimensional, got shape {arr.shape}")
        out = sparse.csr_array(arr)
    if out.nnz and not np.all(np.isfinite(out.data)):
        raise ValueError(f"{name} contains non-finite entries")
    out.eliminate_zeros()
    return out


def as_vector(v, length: int | None = None, name: str = "vector") -> np.ndarray:
    arr = np.asarray(v)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be 1-dimensional, got shape {arr.shape}")
    if length is not None and arr.shape[0] != length:
        raise ValueError(f"{name} must have length {length}, got {arr.shape[0]}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    return arr


def check_positive_scalar(x, name: str, *, allow_zero: bool = False) -> float:
    if not isinstance(x, numbers.Real):
        raise TypeError(f"{name} must be a real scalar, got {type(x).__name__}")
    x = float(x)
    if not np.isfinite(x) or (x <= 0.0 and not (allow_zero and x == 0.0)):
        bound = ">= 0" if allow_zero else "> 0"
        raise ValueError(f"{name} must be finite and {bound}, got {x!r}")
    return x


def check_variances(v, length: int, name: str, *, allow_zero: bool = False) -> np.ndarray:
    """Broadcast a scalar or per-entry variance spec to a length-`length` array."""
    if isinstance(v, numbers.Real):
        return np.full(length, check_positive_scalar(v, name, allow_zero=allow_zero))
    arr = as_vector(v, length, name).astype(float)
    bad = arr <= 0.0 if not allow_zero else arr < 0.0
    if np.any(bad):
        bound = ">= 0" if allow_zero else "> 0"
        raise ValueError(f"all entries of {name} must be {bound}")
    return arr
