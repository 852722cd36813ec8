import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from math import comb

from perturbsos.moment import (BasisSizeError, MomentVector, assemble_moment_matrix,
                               basis_size, build_basis, build_moment_index, check_moment_bounds,
                               linear_functional)
from perturbsos.poly import Polynomial, PolynomialError, evaluate, parse_polynomial

from helpers import M2_LAYOUT


def test_basis_n2_r2_listing():
    assert build_basis(2, 2).monomials == ((0, 0), (1, 0), (0, 1), (2, 0), (1, 1), (0, 2))


def test_basis_small_cases():
    assert build_basis(1, 3).monomials == ((0,), (1,), (2,), (3,))
    assert len(build_basis(3, 2)) == 10


@pytest.mark.parametrize("n", [1, 2, 3, 4])
@pytest.mark.parametrize("r", [0, 1, 2, 3, 5])
def test_basis_size_and_order(n, r):
    b = build_basis(n, r)
    assert len(b) == comb(n + r, r) == basis_size(n, r)
    assert b.monomials[0] == (0,) * n
    degs = [sum(e) for e in b.monomials]
    assert degs == sorted(degs)
    # within a degree: first variable most significant, descending
    for d in range(r + 1):
        block = [e for e in b.monomials if sum(e) == d]
        assert block == sorted(block, reverse=True)
    assert all(b.index_of[e] == k for k, e in enumerate(b.monomials))


def test_basis_size_cap():
    with pytest.raises(BasisSizeError):
        build_basis(10, 10)
    with pytest.raises(BasisSizeError):
        build_moment_index(10, 10)


def test_linear_functional_examples():
    b = build_basis(1, 4)
    y = MomentVector(b, [1.0, -1.0, 1.0, -1.0, 1.0])
    assert linear_functional(y, Polynomial.constant(1, 1.0)) == y.y0
    assert linear_functional(y, parse_polynomial("x^4 - 2*x^2 + 1", ["x"])) == 0.0
    with pytest.raises(PolynomialError):
        linear_functional(y, parse_polynomial("x^5", ["x"]))


def test_linear_functional_dirac_is_evaluation():
    p = parse_polynomial("x1^3*x2 - 2*x2^2 + x1 + 4", ["x1", "x2"])
    pt = [0.7, -1.3]
    y = MomentVector.dirac(pt, 4)
    assert linear_functional(y, p) == pytest.approx(evaluate(p, pt), abs=1e-14)


def test_moment_matrix_layout_n2():
    idx = build_moment_index(2, 2)
    sym = idx.symbolic()
    expected = [[(int(s[0]), int(s[1])) for s in row] for row in M2_LAYOUT]
    assert sym == expected
    assert sym[1][2] == (1, 1)
    assert sym[5][5] == (0, 4)


@pytest.mark.parametrize("n, r", [(1, 3), (2, 2), (3, 2), (2, 4)])
def test_moment_index_invariants(n, r):
    idx = build_moment_index(n, r)
    E = idx.entry_index
    assert np.array_equal(E, E.T)
    assert E[0, 0] == 0
    assert [idx.basis2r.monomials[k] for k in E[0]] == list(idx.basis.monomials)


def test_assemble_dirac_outer_product():
    idx = build_moment_index(2, 2)
    x = np.array([0.3, -1.2])
    M = assemble_moment_matrix(idx, MomentVector.dirac(x, 4))
    v = idx.basis.evaluate(x)
    assert np.allclose(M, np.outer(v, v), atol=1e-14)
    assert np.linalg.matrix_rank(M, tol=1e-10) == 1


def test_assemble_two_point_average():
    idx = build_moment_index(1, 2)
    y = MomentVector.atomic([[1.0], [-1.0]], [0.5, 0.5], 4)
    M = assemble_moment_matrix(idx, y)
    assert np.array_equal(M, [[1, 0, 1], [0, 1, 0], [1, 0, 1]])
    assert np.allclose(np.linalg.eigvalsh(M), [0, 1, 2], atol=1e-14)


def test_assemble_rejects_short_vector():
    idx = build_moment_index(1, 2)
    with pytest.raises(ValueError):
        assemble_moment_matrix(idx, np.ones(3))


def test_moment_bounds_examples():
    assert check_moment_bounds(MomentVector.dirac([0.5, -1.0], 4)).passed
    b = build_basis(1, 2)
    # y0 = 1, y[x^2] = 1, y[x] = 2
    rep = check_moment_bounds(MomentVector(b, [1.0, 2.0, 1.0]))
    assert not rep.passed and rep.worst_ratio == pytest.approx(2.0)


# -- properties ------------------------------------------------------------------------------

def _random_poly(rng, n, d):
    b = build_basis(n, d)
    return Polynomial(n, {e: float(c) for e, c in zip(b.monomials, rng.standard_normal(len(b)))})


@given(st.integers(1, 3), st.integers(1, 3), st.integers(0, 2**31))
def test_bilinearity(n, r, seed):
    rng = np.random.default_rng(seed)
    idx = build_moment_index(n, r)
    y = MomentVector(idx.basis2r, rng.standard_normal(len(idx.basis2r)))
    p, q = _random_poly(rng, n, r), _random_poly(rng, n, r)
    M = assemble_moment_matrix(idx, y)
    lhs = idx.basis.coefficients(q) @ M @ idx.basis.coefficients(p)
    rhs = linear_functional(y, q * p)
    assert abs(lhs - rhs) <= 1e-9 * max(1.0, abs(rhs))


def _atomic(seed, n, r):
    rng = np.random.default_rng(seed)
    k = rng.integers(1, 6)
    pts = rng.uniform(-2, 2, (k, n))
    w = rng.uniform(0.01, 1.0, k)
    return MomentVector.atomic(pts, w, 2 * r)


@given(st.integers(1, 3), st.integers(1, 3), st.integers(0, 2**31))
def test_atomic_moment_matrices_are_psd(n, r, seed):
    y = _atomic(seed, n, r)
    M = assemble_moment_matrix(build_moment_index(n, r), y)
    assert np.linalg.eigvalsh(M)[0] >= -1e-9 * max(1.0, np.abs(M).max())


@given(st.integers(1, 3), st.integers(1, 3), st.integers(0, 2**31))
def test_moment_bound_holds_for_measures(n, r, seed):
    rep = check_moment_bounds(_atomic(seed, n, r))
    assert rep.passed, rep
