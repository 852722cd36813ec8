"""Block-structured SDP in the form consumed by the interior-point solver.

With ``y_0 = 1`` substituted, the moment problem reads

    minimize    offset + c @ y
    subject to  Z(y) = F_0 + sum_k y_k F_k  PSD

where ``Z`` is block diagonal: the s-by-s moment matrix and an m-by-m
diagonal block holding ``-L_y(g_j^2)``. Its conic dual is

    maximize    offset - <F_0, X>
    subject to  <F_k, X> = c_k,  X = diag(Q, diag(lam)) PSD,

and ``gamma = offset - Q[0, 0] + lam @ G[:, 0]`` is the SOS lower bound.

Every inequality row built from a relaxation is a sum of squares of
polynomials of degree <= r, ``L_y(g^2) = g^T M_r(y) g`` with ``g`` the
coefficient vector over the order-r basis. Those vectors are kept in
``factors`` (one s-by-k array per row); the solver uses them to remove the
face of the cone on which these rows pin the moment matrix.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..moment import DEFAULT_SIZE_CAP, BasisSizeError, MomentVector
from ..relax import Relaxation
from .kernels import group_entries


@dataclass(frozen=True)
class SdpProblem:
    nfree: int
    c: np.ndarray
    offset: float
    entry_index: np.ndarray = field(repr=False)
    G: np.ndarray = field(repr=False)          # (m, nfree + 1), column 0 multiplies y_0
    ptr: np.ndarray = field(repr=False)
    rows: np.ndarray = field(repr=False)
    cols: np.ndarray = field(repr=False)
    relaxation: Relaxation | None = field(default=None, repr=False, compare=False)
    factors: tuple[np.ndarray, ...] | None = field(default=None, repr=False, compare=False)

    @property
    def block_size(self) -> int:
        return self.entry_index.shape[0]

    @property
    def m(self) -> int:
        return self.G.shape[0]

    @property
    def block_struct(self) -> tuple[int, ...]:
        """SDPA convention: positive for PSD blocks, negative for diagonal blocks."""
        return (self.block_size,) if self.m == 0 else (self.block_size, -self.m)

    @property
    def nu(self) -> int:
        return self.block_size + self.m

    # -- affine maps -------------------------------------------------------------
    def full_y(self, y: np.ndarray) -> np.ndarray:
        return np.concatenate([[1.0], y])

    def lmi(self, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """``Z(y)`` as (moment block, diagonal of the inequality block)."""
        yf = self.full_y(y)
        return yf[self.entry_index], -(self.G @ yf)

    def apply_adjoint(self, dy: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """``sum_k dy_k F_k`` (no constant term)."""
        yf = np.concatenate([[0.0], dy])
        return yf[self.entry_index], -(self.G[:, 1:] @ dy)

    def apply(self, Xm: np.ndarray, xl: np.ndarray) -> np.ndarray:
        """``(<F_k, X>)_{k=1..nfree}``."""
        acc = np.bincount(self.entry_index.ravel(), weights=Xm.ravel(), minlength=self.nfree + 1)
        return acc[1:] - self.G[:, 1:].T @ xl

    def f0(self) -> tuple[np.ndarray, np.ndarray]:
        Fm = np.zeros((self.block_size, self.block_size))
        Fm[0, 0] = 1.0
        return Fm, -self.G[:, 0].copy()

    def sos_bound(self, Xm: np.ndarray, xl: np.ndarray) -> float:
        """``gamma`` recovered from the dual blocks."""
        return float(self.offset - Xm[0, 0] + xl @ self.G[:, 0])

    def moment_objective(self, y: np.ndarray) -> float:
        return float(self.offset + self.c @ y)

    def moment_vector(self, y: np.ndarray) -> MomentVector | None:
        if self.relaxation is None:
            return None
        return MomentVector(self.relaxation.basis2r, self.full_y(y), normalized=True)

    def dense_blocks(self, k: int) -> tuple[np.ndarray, np.ndarray]:
        """``F_k`` as dense blocks (``k = 0`` is the constant term)."""
        Fm = (self.entry_index == k).astype(float)
        return Fm, -self.G[:, k].copy()

    def permuted_rows(self, perm) -> SdpProblem:
        """Same problem with the inequality rows reordered."""
        perm = np.asarray(perm)
        factors = None if self.factors is None else tuple(self.factors[i] for i in perm)
        return SdpProblem(self.nfree, self.c, self.offset, self.entry_index, self.G[perm],
                          self.ptr, self.rows, self.cols, None, factors)

    def degrees(self) -> tuple[np.ndarray, np.ndarray] | None:
        """Total degrees of the basis elements and of the moments ``0..nfree``."""
        if self.relaxation is None:
            return None
        basis = np.array([sum(e) for e in self.relaxation.moment_index.basis.monomials])
        moments = np.array([sum(e) for e in self.relaxation.basis2r.monomials])
        return basis, moments

    def variable_scaled(self, s: float) -> SdpProblem:
        """The problem in ``u = x / s``: moment ``k`` becomes ``y_k / s^deg(k)``.

        ``c`` and the inequality rows pick up ``s^deg(k)``, the factors
        ``s^deg(b)`` per basis element; the pattern is unchanged. With ``s``
        a power of two the rescaling is exact. The result carries no
        relaxation, since its moments are no longer those of ``x``.
        """
        db, dm = self.degrees()
        wm = s ** dm.astype(float)
        factors = None if self.factors is None else tuple(
            W * (s ** db.astype(float))[:, None] for W in self.factors)
        return SdpProblem(self.nfree, self.c * wm[1:], self.offset, self.entry_index,
                          self.G * wm[None, :], self.ptr, self.rows, self.cols, None, factors)

    def scaled(self, factor: float) -> SdpProblem:
        """Objective multiplied by ``factor``; optimal values scale likewise."""
        return SdpProblem(self.nfree, self.c * factor, self.offset * factor, self.entry_index,
                          self.G, self.ptr, self.rows, self.cols, self.relaxation, self.factors)


def to_standard_form(relax: Relaxation, size_cap: int = DEFAULT_SIZE_CAP) -> SdpProblem:
    idx = relax.moment_index
    s = idx.size
    N = len(relax.basis2r)
    if s > size_cap or N > size_cap * 10:
        raise BasisSizeError(f"SDP with block size {s} and {N - 1} variables exceeds the size cap")
    nfree = N - 1
    entry_index = np.asarray(idx.entry_index, dtype=np.int64)
    ptr, rows, cols = group_entries(entry_index, nfree)
    c = np.asarray(relax.c, dtype=float)
    G = np.asarray(relax.rows, dtype=float).reshape(-1, N).copy()
    vecs = [idx.basis.coefficients(g) for g in relax.instance.equalities]
    if relax.single_lambda and vecs:
        factors = (np.column_stack(vecs),)
    else:
        factors = tuple(v[:, None] for v in vecs)
    for row, W in zip(G, factors):
        gram = np.bincount(entry_index.ravel(), weights=(W @ W.T).ravel(), minlength=N)
        if not np.allclose(gram, row, rtol=1e-12, atol=1e-12 * (1 + np.abs(row).max())):
            raise ValueError("inequality row is not the square of its factor")
    return SdpProblem(nfree, c[1:].copy(), float(c[0]), entry_index, G,
                      ptr, rows, cols, relax, factors)


def from_data(entry_index: np.ndarray, c_full, G=None, factors=None) -> SdpProblem:
    """Build a problem directly from a moment index pattern (testing and tooling)."""
    entry_index = np.asarray(entry_index, dtype=np.int64)
    c_full = np.asarray(c_full, dtype=float)
    N = int(entry_index.max()) + 1
    if c_full.size != N:
        raise ValueError(f"objective has {c_full.size} entries, pattern uses {N} moments")
    G = np.zeros((0, N)) if G is None else np.atleast_2d(np.asarray(G, dtype=float))
    ptr, rows, cols = group_entries(entry_index, N - 1)
    if factors is not None:
        factors = tuple(np.asarray(W, dtype=float).reshape(entry_index.shape[0], -1) for W in factors)
        if len(factors) != G.shape[0]:
            raise ValueError("need one factor per inequality row")
    return SdpProblem(N - 1, c_full[1:].copy(), float(c_full[0]), entry_index, G, ptr, rows, cols,
                      None, factors)
