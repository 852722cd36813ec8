import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from perturbsos.moment import MomentVector, linear_functional
from perturbsos.poly import Polynomial, evaluate, instance_from_strings, parse_polynomial, theta
from perturbsos.relax import (RelaxationError, build_relaxation, dual_sos_form, lift_semialgebraic,
                              min_relaxation_order)
from perturbsos.sdp import solve, to_standard_form

LINE = instance_from_strings("x", ["x"], ["x^2 - 1"])
MOTZKIN = instance_from_strings("x1^4*x2^2 + x1^2*x2^4 - 3*x1^2*x2^2 + 1", ["x1", "x2"])


def test_lift_half_line():
    lift = lift_semialgebraic(instance_from_strings("x", ["x"], [], ["x"]))
    assert lift.lifted.nvars == 2 and lift.m == 1
    assert lift.lifted.equalities == (parse_polynomial("x - z1^2", ["x", "z1"]),)
    assert lift.lifted.inequalities == ()


def test_lift_disk():
    inst = instance_from_strings("x1 + x2", ["x1", "x2"], [], ["1 - x1^2 - x2^2"])
    lifted = lift_semialgebraic(inst).lifted
    assert lifted.names == ("x1", "x2", "z1")
    assert lifted.equalities == (
        parse_polynomial("1 - x1^2 - x2^2 - z1^2", ["x1", "x2", "z1"]),)


def test_lift_identity_without_inequalities():
    lift = lift_semialgebraic(LINE)
    assert lift.lifted is LINE and lift.m == 0


def test_lift_mixed_keeps_equalities():
    inst = instance_from_strings("x + y", ["x", "y"], ["x - y"], ["x", "1 - y"])
    lifted = lift_semialgebraic(inst).lifted
    assert lifted.nvars == 4 and len(lifted.equalities) == 3
    assert lifted.equalities[0] == parse_polynomial("x - y", ["x", "y", "z1", "z2"])
    assert [g.degree for g in lifted.equalities[1:]] == [2, 2]


def test_slack_names_avoid_clashes():
    inst = instance_from_strings("z1", ["z1"], [], ["z1"])
    assert lift_semialgebraic(inst).lifted.names == ("z1", "z1_")


def test_lift_point_and_perturbation():
    inst = instance_from_strings("x1 + x2", ["x1", "x2"], [], ["1 - x1^2 - x2^2"])
    lift = lift_semialgebraic(inst)
    p = lift.lift_point([0.6, 0.0])
    assert np.allclose(p, [0.6, 0.0, 0.8])
    assert lift.perturbation(3) == theta(3, 3)


def test_min_relaxation_order_examples():
    assert min_relaxation_order(LINE) == 2
    assert min_relaxation_order(MOTZKIN) == 3
    assert min_relaxation_order(instance_from_strings("4", ["x"])) == 0
    assert min_relaxation_order(instance_from_strings("x", ["x"], [], ["x"])) == 2


def test_build_line_relaxation():
    rel = build_relaxation(LINE, 0.0, 2)
    assert list(rel.c) == [0, 1, 0, 0, 0]
    assert rel.rows.tolist() == [[1.0, 0.0, -2.0, 0.0, 1.0]]
    y = MomentVector.dirac([-1.0], 4)
    assert rel.is_feasible(y)
    assert rel.moment_objective(y) == -1.0


def test_build_unconstrained_relaxation():
    rel = build_relaxation(MOTZKIN, 0.01, 3)
    assert rel.m == 0 and rel.rows.shape == (0, len(rel.basis2r))


def test_build_perturbation_only():
    rel = build_relaxation(instance_from_strings("0", ["x"]), 0.1, 1)
    assert np.allclose(rel.c, [0.1, 0.0, 0.1])
    assert rel.moment_objective(MomentVector.dirac([0.0], 2)) == pytest.approx(0.1)


def test_build_errors():
    with pytest.raises(RelaxationError):
        build_relaxation(LINE, 0.01, 1)
    with pytest.raises(RelaxationError):
        build_relaxation(LINE, -0.01, 2)
    with pytest.raises(RelaxationError):
        build_relaxation(instance_from_strings("x", ["x"], [], ["x"]), 0.01, 2)


def test_single_lambda_sums_rows():
    inst = instance_from_strings("x + y", ["x", "y"], ["x^2 - 1", "y - x"])
    sep = build_relaxation(inst, 0.01, 2)
    one = build_relaxation(inst, 0.01, 2, single_lambda=True)
    assert one.m == 1 and np.allclose(one.rows[0], sep.rows.sum(axis=0))


def test_dual_template_examples():
    rel = build_relaxation(instance_from_strings("5", ["x"]), 0.0, 0)
    assert np.allclose(dual_sos_form(rel).residual(5.0, [], [[0.0]]), 0.0)
    rel = build_relaxation(instance_from_strings("x^2", ["x"]), 0.0, 1)
    assert np.allclose(dual_sos_form(rel).residual(0.0, [], np.diag([0.0, 1.0])), 0.0)


def test_dual_template_contraction_identity(rng):
    # <residual, y> = <M(y), Q> - sum lam_j L_y(g_j^2) + gamma y0 - L_y(f_eps)
    rel = build_relaxation(instance_from_strings("x*y + x", ["x", "y"], ["x^2 + y - 1"]), 0.05, 2)
    s = rel.moment_index.size
    for _ in range(20):
        A = rng.standard_normal((s, s))
        Q, lam, gamma = A + A.T, rng.standard_normal(1), rng.standard_normal()
        y = MomentVector(rel.basis2r, rng.standard_normal(len(rel.basis2r)))
        M = y.values[rel.moment_index.entry_index]
        expected = (np.sum(M * Q) - lam[0] * linear_functional(y, rel.constraint_polys[0])
                    + gamma * y.y0 - linear_functional(y, rel.objective))
        got = dual_sos_form(rel).contract(y, gamma, lam, Q)
        assert got == pytest.approx(expected, rel=1e-10, abs=1e-10)


def test_line_weak_duality_against_solved_primal():
    rel = build_relaxation(LINE, 0.01, 2)
    sol = solve(to_standard_form(rel))
    assert sol.optimal
    # every Dirac point of V is primal feasible
    for x in (-1.0, 1.0):
        y = MomentVector.dirac([x], 4)
        assert rel.is_feasible(y)
        assert rel.moment_objective(y) >= sol.gamma - 1e-7
    assert sol.gamma <= sol.objective_primal + 1e-7


@given(st.floats(0.0, 2.0), st.integers(2, 4))
def test_lifted_dirac_is_feasible(x, r):
    # a point of K lifts to a Dirac moment vector satisfying every constraint exactly
    inst = instance_from_strings("x^3 - x", ["x"], [], ["x", "2 - x"])
    lift = lift_semialgebraic(inst)
    rel = build_relaxation(lift.lifted, 0.01, r)
    p = lift.lift_point([x])
    y = MomentVector.dirac(p, 2 * r)
    assert np.all(np.abs(rel.rows @ y.values) <= 1e-12)
    assert rel.moment_objective(y) == pytest.approx(evaluate(rel.objective, p), abs=1e-12)
    assert rel.is_feasible(y, tol=1e-9)


def test_objective_monotone_in_eps():
    base = [build_relaxation(MOTZKIN, eps, 4) for eps in (0.0, 0.01, 0.1)]
    vals = []
    for rel in base:
        sol = solve(to_standard_form(rel))
        assert sol.optimal or rel.eps == 0.0
        vals.append(sol.objective_primal)
        y = sol.moments
        # L_y(theta_r) >= n y0 for PSD-feasible y
        assert linear_functional(y, theta(2, 4)) >= 2 - 1e-7
    # y fixed: objective affine in eps with slope L_y(theta_r) > 0
    y = MomentVector.dirac([0.3, -0.2], 8)
    objs = [rel.moment_objective(y) for rel in base]
    assert objs[0] < objs[1] < objs[2]
    # optimal values, where certified, follow the same order
    assert vals[1] <= vals[2] + 1e-7
