"""Monomial bases, moment vectors and moment matrices.

The basis of polynomials of degree <= r is listed in graded lexicographic
order (``1, x1, ..., xn, x1^2, x1*x2, ...``). A moment vector is indexed by
the degree-2r basis, and the moment matrix of order r has entry (i, j)
equal to the moment of ``alpha_i + alpha_j``.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from functools import lru_cache
from math import comb

import numpy as np

from .poly import Exponent, Polynomial, PolynomialError

DEFAULT_SIZE_CAP = 5000


class BasisSizeError(ValueError):
    """The requested basis is larger than the configured cap."""


def basis_size(n: int, r: int) -> int:
    return comb(n + r, r)


def _exponents_of_degree(n: int, d: int):
    # descending lexicographic = first variable most significant
    if n == 1:
        yield (d,)
        return
    for first in range(d, -1, -1):
        for rest in _exponents_of_degree(n - 1, d - first):
            yield (first,) + rest


@dataclass(frozen=True)
class MonomialBasis:
    nvars: int
    degree: int
    monomials: tuple[Exponent, ...]
    index_of: dict[Exponent, int] = field(repr=False, compare=False)

    def __len__(self) -> int:
        return len(self.monomials)

    @property
    def exponents(self) -> np.ndarray:
        return np.array(self.monomials, dtype=np.int64).reshape(len(self), self.nvars)

    def evaluate(self, point) -> np.ndarray:
        """The vector ``v(x)`` of all basis monomials at ``point``."""
        x = np.asarray(point, dtype=float).reshape(-1)
        if x.size != self.nvars:
            raise PolynomialError(f"point has length {x.size}, basis has {self.nvars} variables")
        return np.prod(x[None, :] ** self.exponents, axis=1)

    def coefficients(self, p: Polynomial) -> np.ndarray:
        """Coefficient vector of ``p`` in this basis."""
        if p.nvars != self.nvars:
            raise PolynomialError(f"polynomial has {p.nvars} variables, basis has {self.nvars}")
        out = np.zeros(len(self))
        for exps, c in p.terms.items():
            k = self.index_of.get(exps)
            if k is None:
                raise PolynomialError(
                    f"monomial {exps} has degree {sum(exps)} > basis degree {self.degree}")
            out[k] = c
        return out


@lru_cache(maxsize=64)
def _cached_basis(n: int, r: int) -> MonomialBasis:
    mons = tuple(e for d in range(r + 1) for e in _exponents_of_degree(n, d))
    return MonomialBasis(n, r, mons, {e: k for k, e in enumerate(mons)})


def build_basis(n: int, r: int, size_cap: int = DEFAULT_SIZE_CAP) -> MonomialBasis:
    if n < 1 or r < 0:
        raise ValueError(f"need n >= 1 and r >= 0, got n={n}, r={r}")
    s = basis_size(n, r)
    if s > size_cap:
        raise BasisSizeError(f"basis of {n} variables, degree {r} has {s} > {size_cap} monomials")
    return _cached_basis(n, r)


@dataclass(frozen=True)
class MomentVector:
    basis: MonomialBasis
    values: np.ndarray
    normalized: bool = False

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float).reshape(-1)
        if v.size != len(self.basis):
            raise ValueError(f"{v.size} moments for a basis of size {len(self.basis)}")
        object.__setattr__(self, "values", v)
        if self.normalized and abs(v[0] - 1.0) > 1e-12:
            raise ValueError(f"normalized moment vector needs y0 = 1, got {v[0]}")

    @property
    def y0(self) -> float:
        return float(self.values[0])

    def __getitem__(self, exps: Exponent) -> float:
        return float(self.values[self.basis.index_of[tuple(exps)]])

    @classmethod
    def dirac(cls, point, order: int) -> MomentVector:
        """Moments up to total degree ``order`` of the point mass at ``point``."""
        x = np.asarray(point, dtype=float).reshape(-1)
        basis = build_basis(x.size, order)
        return cls(basis, basis.evaluate(x), normalized=True)

    @classmethod
    def atomic(cls, points, weights, order: int) -> MomentVector:
        """Moments of ``sum_k w_k * delta(points[k])``."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        w = np.asarray(weights, dtype=float).reshape(-1)
        basis = build_basis(pts.shape[1], order)
        mons = np.prod(pts[:, None, :] ** basis.exponents[None, :, :], axis=2)
        return cls(basis, w @ mons)


def linear_functional(y: MomentVector, p: Polynomial) -> float:
    """``L_y(p) = sum_a p_a y_a``."""
    if p.nvars != y.basis.nvars:
        raise PolynomialError(f"polynomial has {p.nvars} variables, moments have {y.basis.nvars}")
    total = 0.0
    for exps, c in p.terms.items():
        k = y.basis.index_of.get(exps)
        if k is None:
            raise PolynomialError(
                f"monomial {exps} is outside the moment basis of degree {y.basis.degree}")
        total += c * y.values[k]
    return float(total)


@dataclass(frozen=True)
class MomentMatrixIndex:
    """Entry (i, j) -> position of ``alpha_i + alpha_j`` in the degree-2r basis."""

    nvars: int
    order: int
    basis: MonomialBasis
    basis2r: MonomialBasis
    entry_index: np.ndarray = field(repr=False)

    @property
    def size(self) -> int:
        return len(self.basis)

    def symbolic(self) -> list[list[Exponent]]:
        mons = self.basis2r.monomials
        return [[mons[k] for k in row] for row in self.entry_index.tolist()]


@lru_cache(maxsize=64)
def _cached_moment_index(n: int, r: int, size_cap: int) -> MomentMatrixIndex:
    basis = build_basis(n, r, size_cap)
    basis2r = build_basis(n, 2 * r, max(size_cap, basis_size(n, 2 * r)))
    exps = basis.exponents
    s = len(basis)
    idx = np.empty((s, s), dtype=np.int64)
    lookup = basis2r.index_of
    for i, j in itertools.combinations_with_replacement(range(s), 2):
        k = lookup[tuple((exps[i] + exps[j]).tolist())]
        idx[i, j] = idx[j, i] = k
    idx.setflags(write=False)
    return MomentMatrixIndex(n, r, basis, basis2r, idx)


def build_moment_index(n: int, r: int, size_cap: int = DEFAULT_SIZE_CAP) -> MomentMatrixIndex:
    if n < 1 or r < 0:
        raise ValueError(f"need n >= 1 and r >= 0, got n={n}, r={r}")
    if basis_size(n, r) > size_cap:
        raise BasisSizeError(
            f"moment matrix of {n} variables, order {r} has size {basis_size(n, r)} > {size_cap}")
    return _cached_moment_index(n, r, size_cap)


def assemble_moment_matrix(idx: MomentMatrixIndex, y: MomentVector | np.ndarray) -> np.ndarray:
    values = y.values if isinstance(y, MomentVector) else np.asarray(y, dtype=float)
    if isinstance(y, MomentVector) and y.basis.nvars != idx.nvars:
        raise ValueError(f"moments have {y.basis.nvars} variables, index has {idx.nvars}")
    if values.size < len(idx.basis2r):
        raise ValueError(
            f"moment vector of length {values.size} does not cover degree {2 * idx.order}")
    return values[idx.entry_index]


@dataclass(frozen=True)
class MomentBoundReport:
    S: float
    bound: float
    max_abs_moment: float
    max_diagonal: float
    worst_ratio: float
    offdiag_ok: bool
    diagonal_ok: bool

    @property
    def passed(self) -> bool:
        return self.offdiag_ok and self.diagonal_ok


def check_moment_bounds(y: MomentVector, tol: float = 1e-7) -> MomentBoundReport:
    """Check ``|y_a| <= sqrt(y0 * S)`` for ``|a| <= r`` and ``y_2a <= S``.

    ``S`` is the largest pure even moment ``y[x_i^(2k)]``, ``k <= r``, where
    ``2r`` is the degree of ``y``'s basis. ``worst_ratio`` is
    ``max |y_a| / sqrt(y0 * S)``.
    """
    basis = y.basis
    n = basis.nvars
    r = basis.degree // 2
    y0 = y.y0
    if y0 <= 0:
        raise ValueError(f"y0 must be positive, got {y0}")
    pure = []
    for i in range(n):
        for k in range(r + 1):
            e = [0] * n
            e[i] = 2 * k
            pure.append(y[tuple(e)])
    S = max(pure)
    bound = float(np.sqrt(y0 * max(S, 0.0)))
    low = [k for k, e in enumerate(basis.monomials) if sum(e) <= r]
    max_abs = float(np.max(np.abs(y.values[low])))
    diag = max(y[tuple(2 * a for a in basis.monomials[k])] for k in low)
    ratio = max_abs / bound if bound > 0 else (0.0 if max_abs == 0 else np.inf)
    return MomentBoundReport(
        S=float(S), bound=bound, max_abs_moment=max_abs, max_diagonal=float(diag),
        worst_ratio=float(ratio),
        offdiag_ok=max_abs <= bound + tol,
        diagonal_ok=diag <= S + tol,
    )
