"""Hot loops of the interior-point solver.

The Schur complement of the moment block,

    M[k, l] = trace(A_k X A_l Zinv),

is the dominant cost per iteration (about s^4 flops for an s-by-s moment
matrix). Each ``A_k`` is the 0/1 pattern of entries of the moment matrix
that hold moment ``k``; the entries are passed grouped by ``k`` in a
CSR-like layout ``(ptr, rows, cols)``.

Two implementations are provided. The numba one loops over entry pairs
directly; the numpy one forms ``X A_l Zinv`` with a BLAS product and
reduces it by moment index. Set ``PERTURBSOS_NUMBA=0`` to force numpy.
"""

from __future__ import annotations

import os

import numpy as np

try:
    import numba
    HAS_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAS_NUMBA = False

_ENV_FLAG = "PERTURBSOS_NUMBA"


def _default_backend() -> str:
    flag = os.environ.get(_ENV_FLAG, "1").strip().lower()
    if flag in ("0", "false", "no", "off") or not HAS_NUMBA:
        return "numpy"
    return "numba"


_backend = _default_backend()


def get_backend() -> str:
    return _backend


def set_backend(name: str) -> None:
    global _backend
    if name not in ("numba", "numpy"):
        raise ValueError(f"unknown backend {name!r}")
    if name == "numba" and not HAS_NUMBA:
        raise RuntimeError("numba is not installed")
    _backend = name


def schur_moment_numpy(X, Zinv, ptr, rows, cols, entry_index, nfree):
    out = np.empty((nfree, nfree))
    flat_index = entry_index.ravel()
    for l in range(nfree):
        a, b = ptr[l], ptr[l + 1]
        # W = X A_l Zinv; trace(A_k W) = sum over entries of A_k of W^T
        W = X[:, rows[a:b]] @ Zinv[cols[a:b], :]
        acc = np.bincount(flat_index, weights=W.T.ravel(), minlength=nfree + 1)
        out[:, l] = acc[1:]
    return 0.5 * (out + out.T)


if HAS_NUMBA:
    @numba.njit(cache=True, nogil=True, fastmath=False)
    def _schur_moment_nb(X, Zinv, ptr, rows, cols, out):
        nk = ptr.size - 1
        for k in range(nk):
            for l in range(k, nk):
                acc = 0.0
                for e in range(ptr[k], ptr[k + 1]):
                    i = rows[e]
                    j = cols[e]
                    for f in range(ptr[l], ptr[l + 1]):
                        acc += X[j, rows[f]] * Zinv[cols[f], i]
                out[k, l] = acc
                out[l, k] = acc


def schur_moment_numba(X, Zinv, ptr, rows, cols, entry_index, nfree):
    out = np.empty((nfree, nfree))
    _schur_moment_nb(np.ascontiguousarray(X), np.ascontiguousarray(Zinv), ptr, rows, cols, out)
    return out


def schur_moment(X, Zinv, ptr, rows, cols, entry_index, nfree, backend: str | None = None):
    """Moment-block Schur complement ``trace(A_k X A_l Zinv)`` for k, l = 1..nfree."""
    backend = backend or _backend
    if backend == "numba":
        return schur_moment_numba(X, Zinv, ptr, rows, cols, entry_index, nfree)
    return schur_moment_numpy(X, Zinv, ptr, rows, cols, entry_index, nfree)


def group_entries(entry_index: np.ndarray, nfree: int):
    """Group matrix entries by moment index 1..nfree into ``(ptr, rows, cols)``.

    Index 0 (the normalized constant moment) is excluded.
    """
    flat = entry_index.ravel()
    order = np.argsort(flat, kind="stable")
    sorted_k = flat[order]
    keep = sorted_k > 0
    order, sorted_k = order[keep], sorted_k[keep]
    s = entry_index.shape[0]
    rows = (order // s).astype(np.int64)
    cols = (order % s).astype(np.int64)
    counts = np.bincount(sorted_k - 1, minlength=nfree)
    ptr = np.zeros(nfree + 1, dtype=np.int64)
    np.cumsum(counts, out=ptr[1:])
    return ptr, rows, cols
