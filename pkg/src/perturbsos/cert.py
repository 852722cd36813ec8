"""SOS certificates: extraction, independent verification, and reports.

A certificate ``(gamma, lam, Q)`` over the monomial basis ``v`` asserts

    f + eps * theta_r - gamma + sum_j lam_j g_j^2 = v^T Q v,   Q PSD, lam >= 0,

so ``f + eps * theta_r >= gamma`` on the zero set of the ``g_j``.
Verification rebuilds every polynomial from the problem text and expands
the Gram form with correctly rounded sums; nothing is read from solver
internals.
"""

from __future__ import annotations

import json
import math
from collections import defaultdict
from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

import numpy as np
from scipy import optimize
from scipy.stats import qmc

from .poly import Exponent, Polynomial, ProblemInstance, perturb, theta
from .relax import LiftedInstance, Relaxation, lift_semialgebraic
from .sdp import SdpSolution, Status

CLAMP_TOL = 1e-8


class CertificateError(ValueError):
    pass


@dataclass
class Certificate:
    gamma: float
    lam: np.ndarray
    gram: np.ndarray
    eps: float
    r: int
    basis: tuple[Exponent, ...]
    residual_linf: float
    gram_min_eig: float
    lambda_min: float
    witness: Exponent | None = None

    @property
    def nvars(self) -> int:
        return len(self.basis[0])


@dataclass(frozen=True)
class VerificationResult:
    passed: bool
    residual_linf: float
    witness: Exponent | None
    gram_min_eig: float
    lambda_min: float
    failures: tuple[str, ...] = ()


def _constraint_squares(eqs: Sequence[Polynomial], lam: np.ndarray) -> list[Polynomial]:
    squares = [g * g for g in eqs]
    if len(lam) == len(squares):
        return squares
    if len(lam) == 1 and squares:
        # one multiplier shared by all rows
        total = squares[0]
        for sq in squares[1:]:
            total = total + sq
        return [total]
    raise CertificateError(f"certificate has {len(lam)} multipliers for {len(squares)} constraints")


def identity_residual(basis: Sequence[Exponent], Q: np.ndarray,
                      target: Sequence[Polynomial]) -> tuple[float, Exponent | None]:
    """Largest coefficient of ``v^T Q v - sum(target)`` and the monomial where it occurs.

    Each coefficient is a correctly rounded sum (``math.fsum``) of the Gram
    entries and the target coefficients, so huge cancelling terms do not
    bury the mismatch in rounding.
    """
    parts: dict[Exponent, list[float]] = defaultdict(list)
    s = len(basis)
    for i in range(s):
        ai = basis[i]
        row = Q[i]
        for j in range(s):
            q = float(row[j])
            if q != 0.0:
                parts[tuple(a + b for a, b in zip(ai, basis[j]))].append(q)
    for p in target:
        for e, c in p.terms.items():
            parts[e].append(-c)
    worst, witness = -1.0, None
    for e, vals in parts.items():
        d = abs(math.fsum(vals))
        if d > worst:
            worst, witness = d, e
    return max(worst, 0.0), witness


def _target(objective: Polynomial, eqs: Sequence[Polynomial], eps: float, r: int,
            gamma: float, lam: np.ndarray) -> list[Polynomial]:
    """Summands of ``f + eps * theta_r - gamma + sum_j lam_j g_j^2``, kept apart."""
    nv = objective.nvars
    out = [objective, Polynomial.constant(nv, -gamma)]
    if eps:
        out.append(theta(nv, r).scale(eps))
    for l, sq in zip(lam, _constraint_squares(eqs, lam)):
        if l != 0.0:
            out.append(sq.scale(float(l)))
    return out


def _min_eig(Q: np.ndarray) -> float:
    return float(np.linalg.eigvalsh(Q)[0]) if Q.size else 0.0


def extract_certificate(relax: Relaxation, sol: SdpSolution,
                        clamp_tol: float = CLAMP_TOL) -> Certificate:
    if sol.status is not Status.OPTIMAL:
        raise CertificateError(f"no certificate from a {sol.status} solve")
    lam = np.asarray(sol.lam, dtype=float).copy()
    lam_min = float(lam.min()) if lam.size else 0.0
    lam[(lam < 0.0) & (lam >= -clamp_tol)] = 0.0
    Q = 0.5 * (sol.Q + sol.Q.T)
    basis = tuple(tuple(int(v) for v in e) for e in relax.moment_index.basis.exponents)
    inst = relax.instance
    target = _target(inst.objective, inst.equalities, relax.eps, relax.r, float(sol.gamma), lam)
    res, witness = identity_residual(basis, Q, target)
    return Certificate(float(sol.gamma), lam, Q, relax.eps, relax.r, basis, res,
                       _min_eig(Q), lam_min, witness)


def _working_instance(inst: ProblemInstance) -> ProblemInstance:
    return lift_semialgebraic(inst).lifted if inst.inequalities else inst


def verify_certificate(inst: ProblemInstance, cert: Certificate,
                       tol: float = 1e-5) -> VerificationResult:
    """Recheck ``cert`` against ``inst`` from scratch.

    Inequalities in ``inst`` are lifted first, so the certificate is
    expected over ``(x, z)``.
    """
    work = _working_instance(inst)
    Q = np.asarray(cert.gram, dtype=float)
    lam = np.asarray(cert.lam, dtype=float).reshape(-1)
    if not cert.basis:
        raise CertificateError("empty basis")
    if cert.nvars != work.nvars:
        raise CertificateError(f"certificate is over {cert.nvars} variables, problem has {work.nvars}")
    if Q.shape != (len(cert.basis), len(cert.basis)):
        raise CertificateError(f"Gram matrix {Q.shape} does not match basis of size {len(cert.basis)}")
    if any(len(e) != work.nvars for e in cert.basis):
        raise CertificateError("basis exponents have inconsistent length")
    target = _target(work.objective, work.equalities, cert.eps, cert.r, cert.gamma, lam)
    res, witness = identity_residual(cert.basis, Q, target)
    eig = _min_eig(0.5 * (Q + Q.T))
    lam_min = float(lam.min()) if lam.size else 0.0
    failures = []
    if not res <= tol:
        failures.append(f"coefficient mismatch {res:.3e} > {tol:.1e}")
    if not np.allclose(Q, Q.T, rtol=0.0, atol=tol):
        failures.append("Gram matrix is not symmetric")
    if not eig >= -tol:
        failures.append(f"Gram matrix has eigenvalue {eig:.3e} < -{tol:.1e}")
    if not lam_min >= -tol:
        failures.append(f"multiplier {lam_min:.3e} < -{tol:.1e}")
    return VerificationResult(not failures, res, witness, eig, lam_min, tuple(failures))


# -- error budget ------------------------------------------------------------------------

def epsilon_for_error(eta: float, rho: float, n: int) -> float:
    """``eta / (n * exp(rho^2))``: the perturbation size for target accuracy ``eta``
    when the minimizer satisfies ``max_i |x_i| <= rho``."""
    if not eta > 0:
        raise ValueError(f"eta must be positive, got {eta}")
    if not rho >= 0:
        raise ValueError(f"rho must be nonnegative, got {rho}")
    if n < 1:
        raise ValueError(f"n must be at least 1, got {n}")
    return eta / (n * math.exp(rho * rho))


# -- sandwich report ---------------------------------------------------------------------

@dataclass
class SandwichReport:
    lower_bound: float
    upper_probe: float
    eps: float
    r: int
    theta_at_probe: float
    bound_gap: float
    probe: list[float]
    probe_violation: float
    feasible_probe: bool
    consistent: bool | None
    predicted_width: float | None = None
    heuristic_probe: bool = False


def constraint_violation(inst: ProblemInstance, x) -> float:
    x = np.asarray(x, dtype=float)
    v = [abs(g(x)) for g in inst.equalities] + [max(0.0, -g(x)) for g in inst.inequalities]
    return float(max(v, default=0.0))


def _project(inst: ProblemInstance, x: np.ndarray, iters: int = 50, tol: float = 1e-12) -> np.ndarray:
    """Gauss-Newton steps onto the violated constraints."""
    for _ in range(iters):
        rows, vals = [], []
        for g in inst.equalities:
            rows.append(g)
            vals.append(g(x))
        for g in inst.inequalities:
            gv = g(x)
            if gv < 0:
                rows.append(g)
                vals.append(gv)
        vals = np.asarray(vals)
        if not rows or np.max(np.abs(vals)) <= tol:
            break
        J = np.array([[_partial(g, i)(x) for i in range(inst.nvars)] for g in rows])
        x = x - np.linalg.lstsq(J, vals, rcond=None)[0]
    return x


def _partial(p: Polynomial, i: int) -> Polynomial:
    terms = {}
    for e, c in p.terms.items():
        if e[i]:
            d = list(e)
            d[i] -= 1
            terms[tuple(d)] = c * e[i]
    return Polynomial(p.nvars, terms)


def find_probe(inst: ProblemInstance, objective: Polynomial | None = None, *,
               restarts: int = 20, box: float = 5.0, seed: int = 0) -> np.ndarray | None:
    """Heuristic feasible point with small objective (multistart Nelder-Mead).

    The objective is penalized by the squared constraint violation; each
    local result is projected back onto the constraints. Returns the best
    point with violation at most 1e-6, or None. No global guarantee.
    """
    f = objective or inst.objective
    rng = np.random.default_rng(seed)
    n = inst.nvars

    def penalized(x, w):
        pen = sum(g(x) ** 2 for g in inst.equalities)
        pen += sum(min(0.0, g(x)) ** 2 for g in inst.inequalities)
        return f(x) + w * pen

    best, best_val = None, np.inf
    for _ in range(restarts):
        x = rng.uniform(-box, box, n)
        for w in (1e1, 1e3, 1e5):
            x = optimize.minimize(penalized, x, args=(w,), method="Nelder-Mead",
                                  options={"xatol": 1e-10, "fatol": 1e-12, "maxiter": 4000}).x
        x = _project(inst, x)
        if constraint_violation(inst, x) <= 1e-6:
            val = f(x)
            if val < best_val:
                best, best_val = x, val
    return best


def sandwich_report(relax: Relaxation, sol: SdpSolution, probe=None, *,
                    lift: LiftedInstance | None = None, minimizer: bool = False,
                    gap_tol: float = 1e-8) -> SandwichReport:
    """Lower bound from ``sol`` against ``f + eps * theta_r`` at a feasible point.

    ``probe`` is in the original coordinates; with ``lift`` it is extended by
    the slack values ``sqrt(g_j)``. Without a probe one is searched for with
    :func:`find_probe`. With ``minimizer=True`` the caller asserts the probe
    is a global minimizer and the predicted width ``eps * theta_r(probe)``
    is reported.
    """
    if sol.status is not Status.OPTIMAL:
        raise CertificateError(f"no bound from a {sol.status} solve")
    base = lift.original if lift is not None else relax.instance
    heuristic = probe is None
    if heuristic:
        probe = find_probe(base, perturb(base.objective, relax.eps, relax.r))
        if probe is None:
            raise CertificateError("no feasible probe point found")
    x = np.asarray(probe, dtype=float).reshape(-1)
    if x.size != base.nvars:
        raise CertificateError(f"probe has {x.size} coordinates, problem has {base.nvars}")
    violation = constraint_violation(base, x)
    point = lift.lift_point(x) if lift is not None else x
    upper = relax.objective(point)
    th = theta(relax.n, relax.r)(point)
    feasible = violation <= 1e-6
    lower = float(sol.gamma)
    consistent = (lower <= upper + gap_tol * (1.0 + abs(lower) + abs(upper))) if feasible else None
    return SandwichReport(lower, float(upper), relax.eps, relax.r, float(th), float(upper - lower),
                          [float(v) for v in x], violation, feasible, consistent,
                          relax.eps * th if minimizer else None, heuristic)


# -- lifted coincidence ------------------------------------------------------------------

@dataclass
class CoincidenceReport:
    max_deviation: float
    points: list[list[float]]
    deviations: list[float]
    split_checked: bool = False


def _exact_eval(p: Polynomial, point: Sequence[Fraction]) -> Fraction:
    total = Fraction(0)
    for e, c in p.terms.items():
        term = Fraction(c)
        for xi, k in zip(point, e):
            if k:
                term *= xi ** k
        total += term
    return total


def _exact_gram(basis: Sequence[Exponent], Q: np.ndarray, point: Sequence[Fraction]) -> Fraction:
    v = []
    for e in basis:
        t = Fraction(1)
        for xi, k in zip(point, e):
            if k:
                t *= xi ** k
        v.append(t)
    Qv = [sum((Fraction(float(Q[i, j])) * v[j] for j in range(len(v)) if Q[i, j] != 0.0),
              Fraction(0)) for i in range(len(v))]
    return sum((vi * qi for vi, qi in zip(v, Qv)), Fraction(0))


def sample_points(inst: ProblemInstance, count: int = 16, box: float = 2.0,
                  seed: int = 0, max_draws: int = 4096) -> np.ndarray:
    """Quasi-random (Halton) points of ``[-box, box]^n`` that lie in the feasible set.

    Points are projected onto the equalities first, then rejected if any
    constraint is violated by more than 1e-9.
    """
    sampler = qmc.Halton(d=inst.nvars, scramble=True, seed=seed)
    out = []
    drawn = 0
    while len(out) < count and drawn < max_draws:
        batch = qmc.scale(sampler.random(64), -box, box)
        drawn += 64
        for x in batch:
            if inst.equalities:
                x = _project(inst, x)
            if constraint_violation(inst, x) <= 1e-9 and np.all(np.abs(x) <= 10 * box):
                out.append(x)
                if len(out) == count:
                    break
    if len(out) < count:
        raise CertificateError(f"found only {len(out)} of {count} sample points in the feasible set")
    return np.array(out)


def lifted_coincidence_check(inst: ProblemInstance, cert: Certificate, samples=None, *,
                             count: int = 16, seed: int = 0) -> CoincidenceReport:
    """Compare both sides of the lifted identity at points of the feasible set.

    At ``x`` with all ``g_j(x) >= 0`` and slacks ``z_j = sqrt(g_j(x))``,

        f(x) + eps*theta_r(x) + eps*sum_j sum_{k<=r} g_j(x)^k / k!  -  gamma
            =  v(x, z)^T Q v(x, z),

    because every lifted constraint ``g_j - z_j^2`` vanishes there. Both sides
    are evaluated in exact rational arithmetic at the floating-point sample,
    so the deviation reflects the certificate and not cancellation among
    large Gram entries. Splitting the SOS part by a Putinar-form input is not
    supported, so ``split_checked`` is always False.
    """
    work = _working_instance(inst)
    if cert.nvars != work.nvars:
        raise CertificateError(f"certificate is over {cert.nvars} variables, lifted problem has {work.nvars}")
    pts = sample_points(inst, count, seed=seed) if samples is None else np.atleast_2d(
        np.asarray(samples, dtype=float))
    if pts.shape[1] != inst.nvars:
        raise CertificateError(f"samples have {pts.shape[1]} coordinates, problem has {inst.nvars}")
    lift = lift_semialgebraic(inst)
    th = theta(inst.nvars, cert.r)
    inv_fact = [Fraction(1, math.factorial(k)) for k in range(cert.r + 1)]
    eps = Fraction(cert.eps)
    gamma = Fraction(cert.gamma)
    Q = np.asarray(cert.gram, dtype=float)
    devs = []
    for x in pts:
        viol = constraint_violation(inst, x)
        if viol > 1e-6:
            raise CertificateError(f"sample {list(x)} is outside the feasible set (violation {viol:.2e})")
        xf = [Fraction(float(v)) for v in x]
        lhs = _exact_eval(inst.objective, xf) + eps * _exact_eval(th, xf)
        for g in inst.inequalities:
            gv = max(_exact_eval(g, xf), Fraction(0))
            lhs += eps * sum((gv ** k * inv_fact[k] for k in range(cert.r + 1)), Fraction(0))
        zf = [Fraction(float(v)) for v in lift.lift_point(x)]
        rhs = _exact_gram(cert.basis, Q, zf)
        devs.append(float(abs(lhs - gamma - rhs)))
    return CoincidenceReport(max(devs, default=0.0), [list(map(float, p)) for p in pts], devs)


# -- serialization -----------------------------------------------------------------------

def certificate_to_dict(cert: Certificate) -> dict:
    Q = np.asarray(cert.gram, dtype=float)
    s = Q.shape[0]
    lower = [float(Q[i, j]) for i in range(s) for j in range(i + 1)]
    return {
        "gamma": float(cert.gamma),
        "lambda": [float(v) for v in np.asarray(cert.lam).reshape(-1)],
        "gram": {"dim": s, "lower": lower},
        "eps": float(cert.eps),
        "r": int(cert.r),
        "basis": [list(map(int, e)) for e in cert.basis],
        "residual_linf": float(cert.residual_linf),
        "gram_min_eig": float(cert.gram_min_eig),
    }


def certificate_to_json(cert: Certificate, indent: int | None = 2) -> str:
    # json writes floats with repr, the shortest string that round-trips exactly
    return json.dumps(certificate_to_dict(cert), indent=indent, allow_nan=False)


def certificate_from_dict(data: dict) -> Certificate:
    try:
        g = data["gram"]
        s = int(g["dim"])
        lower = [float(v) for v in g["lower"]]
        if len(lower) != s * (s + 1) // 2:
            raise CertificateError(f"gram has {len(lower)} entries, expected {s * (s + 1) // 2}")
        Q = np.zeros((s, s))
        Q[np.tril_indices(s)] = lower
        Q = Q + np.tril(Q, -1).T
        lam = np.array([float(v) for v in data["lambda"]], dtype=float)
        basis = tuple(tuple(int(v) for v in e) for e in data["basis"])
        if len(basis) != s:
            raise CertificateError(f"basis has {len(basis)} monomials, gram has dimension {s}")
        return Certificate(float(data["gamma"]), lam, Q, float(data["eps"]), int(data["r"]), basis,
                           float(data["residual_linf"]), float(data["gram_min_eig"]),
                           float(lam.min()) if lam.size else 0.0)
    except CertificateError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise CertificateError(f"malformed certificate: {exc!r}") from exc


def certificate_from_json(text: str) -> Certificate:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CertificateError(f"certificate is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise CertificateError("certificate JSON must be an object")
    return certificate_from_dict(data)
