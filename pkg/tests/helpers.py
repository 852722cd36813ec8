"""Shared instances and a small escalation helper for the tests."""

from __future__ import annotations

import math
from fractions import Fraction

import numpy as np

from perturbsos.moment import build_basis
from perturbsos.poly import Polynomial, ProblemInstance, instance_from_strings
from perturbsos.relax import build_relaxation, lift_semialgebraic, min_relaxation_order
from perturbsos.sdp import SolverOptions, solve_with_restarts, to_standard_form

LINE = instance_from_strings("x", ["x"], ["x^2 - 1"])
AFFINE = instance_from_strings("x1^2 + x2^2", ["x1", "x2"], ["x1 + x2 - 1"])
MOTZKIN = instance_from_strings("x1^4*x2^2 + x1^2*x2^4 - 3*x1^2*x2^2 + 1", ["x1", "x2"])
HALFLINE = instance_from_strings("x", ["x"], [], ["x"])
DISK = instance_from_strings("x1 + x2", ["x1", "x2"], [], ["1 - x1^2 - x2^2"])
SQUARE = instance_from_strings("x^2", ["x"])

# the 6x6 M_2(y) for n = 2, entry by entry as (i, j) exponent pairs
M2_LAYOUT = [
    ["00", "10", "01", "20", "11", "02"],
    ["10", "20", "11", "30", "21", "12"],
    ["01", "11", "02", "21", "12", "03"],
    ["20", "30", "21", "40", "31", "22"],
    ["11", "21", "12", "31", "22", "13"],
    ["02", "12", "03", "22", "13", "04"],
]


def theta_exact(point, r: int) -> Fraction:
    """sum_i sum_{k<=r} x_i^(2k)/k! in rationals, independent of the package."""
    total = Fraction(0)
    for x in point:
        x2 = Fraction(x) ** 2
        total += sum(x2 ** k / math.factorial(k) for k in range(r + 1))
    return total


def first_optimal(inst, eps: float, r_max: int = 8, opts: SolverOptions | None = None, **kw):
    """(relax, sol) at the smallest order whose solve is Optimal, else (None, last sol)."""
    work = lift_semialgebraic(inst).lifted if inst.inequalities else inst
    sol = None
    for r in range(min_relaxation_order(inst), r_max + 1):
        relax = build_relaxation(work, eps, r, **kw)
        sol = solve_with_restarts(to_standard_form(relax), opts or SolverOptions())
        if sol.optimal:
            return relax, sol
    return None, sol


def random_instances(seed: int, count: int = 50):
    """(instance, eps, r) with n <= 2, deg <= 4, r <= 3 and at most one equality.

    Each equality is shifted to vanish at a random point, so the feasible set
    is never empty.
    """
    rng = np.random.default_rng(seed)

    def poly(n, d):
        b = build_basis(n, d)
        coeffs = np.round(rng.standard_normal(len(b)), 3)
        return Polynomial(n, {e: float(c) for e, c in zip(b.monomials, coeffs)})

    out = []
    for _ in range(count):
        n = int(rng.integers(1, 3))
        f = poly(n, int(rng.integers(1, 5)))
        x0 = rng.uniform(-1, 1, n)
        eqs = []
        for _ in range(int(rng.integers(0, 2))):
            g = poly(n, int(rng.integers(1, 3)))
            eqs.append(g - Polynomial(n, {(0,) * n: g(x0)}))
        inst = ProblemInstance(f, tuple(eqs), (), tuple(f"x{i + 1}" for i in range(n)))
        r = int(rng.integers(min_relaxation_order(inst), 4))
        out.append((inst, float(rng.choice([0.01, 0.1])), r))
    return out
