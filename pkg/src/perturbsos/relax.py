"""Moment relaxations of perturbed polynomial problems.

For ``f`` over ``V = {g_j = 0}`` the order-``r`` relaxation is

    minimize    L_y(f + eps * theta_r)
    subject to  M_r(y) PSD,  L_y(g_j^2) <= 0,  y_0 = 1,

whose dual asks for the largest ``gamma`` such that
``f + eps * theta_r - gamma + sum_j lambda_j g_j^2`` is a sum of squares
with ``lambda >= 0``. Inequalities ``g_j >= 0`` are first lifted to
equalities ``g_j - z_j^2 = 0`` in extra slack variables.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .moment import (DEFAULT_SIZE_CAP, MomentMatrixIndex, MomentVector,
                     build_moment_index, linear_functional)
from .poly import Polynomial, ProblemInstance, perturb, theta


class RelaxationError(ValueError):
    pass


def _embed(p: Polynomial, nvars: int) -> Polynomial:
    pad = (0,) * (nvars - p.nvars)
    return Polynomial(nvars, {e + pad: c for e, c in p.terms.items()})


def _slack_names(names: tuple[str, ...], m: int) -> tuple[str, ...]:
    taken = set(names)
    out = []
    for j in range(m):
        name = f"z{j + 1}"
        while name in taken:
            name += "_"
        taken.add(name)
        out.append(name)
    return tuple(out)


@dataclass(frozen=True)
class LiftedInstance:
    original: ProblemInstance
    lifted: ProblemInstance

    @property
    def n(self) -> int:
        return self.original.nvars

    @property
    def m(self) -> int:
        return len(self.original.inequalities)

    def perturbation(self, r: int) -> Polynomial:
        """``theta_r(x) + phi_r(z)``; identical to ``theta`` over all n+m variables."""
        return theta(self.n + self.m, r)

    def lift_point(self, x) -> np.ndarray:
        """``(x, sqrt(g_1(x)), ..., sqrt(g_m(x)))``; negative ``g_j`` clip to 0."""
        x = np.asarray(x, dtype=float).reshape(-1)
        z = [np.sqrt(max(g(x), 0.0)) for g in self.original.inequalities]
        return np.concatenate([x, np.asarray(z, dtype=float)])


def lift_semialgebraic(inst: ProblemInstance) -> LiftedInstance:
    """Replace each ``g_j >= 0`` by ``g_j - z_j^2 = 0`` with a fresh slack ``z_j``.

    Existing equalities pass through unchanged (embedded in the larger ring).
    With no inequalities the lift is the identity.
    """
    n, m = inst.nvars, len(inst.inequalities)
    if m == 0:
        return LiftedInstance(inst, inst)
    N = n + m
    eqs = [_embed(g, N) for g in inst.equalities]
    for j, g in enumerate(inst.inequalities):
        z = [0] * N
        z[n + j] = 2
        eqs.append(_embed(g, N) - Polynomial(N, {tuple(z): 1.0}))
    lifted = ProblemInstance(_embed(inst.objective, N), tuple(eqs), (),
                             inst.names + _slack_names(inst.names, m))
    return LiftedInstance(inst, lifted)


def min_relaxation_order(inst: ProblemInstance) -> int:
    """Smallest ``r`` with ``2r >= max(deg f, deg g_j^2)`` after lifting."""
    work = lift_semialgebraic(inst).lifted if inst.inequalities else inst
    d = max([work.objective.degree] + [2 * g.degree for g in work.equalities])
    return (d + 1) // 2


@dataclass(frozen=True)
class Relaxation:
    instance: ProblemInstance
    r: int
    eps: float
    objective: Polynomial                    # f + eps * theta_r
    c: np.ndarray = field(repr=False)        # objective over the degree-2r basis
    constraint_polys: tuple[Polynomial, ...] = field(repr=False)
    rows: np.ndarray = field(repr=False)     # (m, s(2r)) coefficients of g_j^2
    moment_index: MomentMatrixIndex = field(repr=False)
    single_lambda: bool = False
    normalization: int = 0

    @property
    def n(self) -> int:
        return self.instance.nvars

    @property
    def m(self) -> int:
        return self.rows.shape[0]

    @property
    def basis2r(self):
        return self.moment_index.basis2r

    def moment_objective(self, y: MomentVector) -> float:
        return linear_functional(y, self.objective)

    def is_feasible(self, y: MomentVector, tol: float = 1e-9) -> bool:
        from .moment import assemble_moment_matrix
        if abs(y.values[self.normalization] - 1.0) > tol:
            return False
        if np.any(self.rows @ y.values > tol):
            return False
        M = assemble_moment_matrix(self.moment_index, y)
        return bool(np.linalg.eigvalsh(M).min() >= -tol * max(1.0, np.abs(M).max()))


def build_relaxation(inst: ProblemInstance, eps: float, r: int, *,
                     single_lambda: bool = False,
                     size_cap: int = DEFAULT_SIZE_CAP) -> Relaxation:
    if inst.inequalities:
        raise RelaxationError("instance has inequalities; lift it first")
    if eps < 0:
        raise RelaxationError(f"eps must be nonnegative, got {eps}")
    rmin = min_relaxation_order(inst)
    if r < rmin:
        raise RelaxationError(f"order r={r} is below the minimum {rmin} for this instance")
    idx = build_moment_index(inst.nvars, r, size_cap)
    basis2r = idx.basis2r
    f_eps = perturb(inst.objective, eps, r)
    squares = [g * g for g in inst.equalities]
    if single_lambda and squares:
        total = squares[0]
        for sq in squares[1:]:
            total = total + sq
        squares = [total]
    rows = np.array([basis2r.coefficients(sq) for sq in squares]).reshape(len(squares), len(basis2r))
    return Relaxation(inst, r, float(eps), f_eps, basis2r.coefficients(f_eps),
                      tuple(squares), rows, idx, single_lambda)


@dataclass(frozen=True)
class DualTemplate:
    """Coefficient-match equations of the SOS side.

    For every monomial ``mu`` of degree <= 2r::

        sum_{alpha_i + alpha_j = mu} Q_ij - sum_j lambda_j coeff(g_j^2, mu)
            + gamma * [mu = 1] = coeff(f_eps, mu)
    """

    relaxation: Relaxation

    def residual(self, gamma: float, lam, Q) -> np.ndarray:
        relax = self.relaxation
        Q = np.asarray(Q, dtype=float)
        lam = np.asarray(lam, dtype=float).reshape(-1)
        N = len(relax.basis2r)
        gram = np.bincount(relax.moment_index.entry_index.ravel(), weights=Q.ravel(), minlength=N)
        out = gram - relax.rows.T @ lam - relax.c
        out[relax.normalization] += gamma
        return out

    def contract(self, y, gamma: float, lam, Q) -> float:
        """``<residual, y>``; equals ``<M(y), Q> - sum lam_j L_y(g_j^2) + gamma y0 - L_y(f_eps)``."""
        values = y.values if isinstance(y, MomentVector) else np.asarray(y, dtype=float)
        return float(self.residual(gamma, lam, Q) @ values)


def dual_sos_form(relax: Relaxation) -> DualTemplate:
    return DualTemplate(relax)
