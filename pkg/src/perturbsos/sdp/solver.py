"""Dense primal-dual path-following solver for :class:`SdpProblem`.

Infeasible-start Mehrotra predictor-corrector with the HKM search direction.
Each iteration factors the Schur complement once (dense Cholesky) and
reuses it for the predictor and corrector solves. "Primal" below refers to
the moment side (variables ``y``, slack ``Z``), "dual" to the SOS side
(``X = diag(Q, lam)``).

Inequality rows ``L_y(g^2) <= 0`` have no strictly feasible point, because
``M_r(y) PSD`` already forces ``L_y(g^2) = g^T M_r(y) g >= 0``. On such
problems the SOS multiplier runs off to infinity and the plain iteration
stalls well short of the tolerances. When the row factors are known the
solver therefore works on the face the rows define: ``M_r(y) g = 0`` is
imposed as linear equalities and eliminated, the LMI is restricted to the
orthogonal complement of the ``g`` vectors, and the certificate for the
original rows is rebuilt afterwards with a multiplier large enough to make
the Gram matrix PSD.
"""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.linalg as sla

from ..moment import MomentVector
from .kernels import group_entries, schur_moment
from .problem import SdpProblem

log = logging.getLogger(__name__)
_REFINE_PASSES = 3
_DUAL_CANDIDATES = 12


class Status(str, enum.Enum):
    OPTIMAL = "Optimal"
    MAX_ITERATIONS = "MaxIterations"
    NUMERICAL_FAILURE = "NumericalFailure"
    UNBOUNDED = "Unbounded"
    INFEASIBLE = "Infeasible"

    def __str__(self) -> str:
        return self.value


@dataclass(frozen=True)
class SolverOptions:
    gap_tol: float = 1e-8
    feas_tol: float = 1e-8
    max_iter: int = 200
    verbosity: int = 0
    reg: float = 0.0
    step_fraction: float = 0.98
    divergence: float = 1e12
    backend: str | None = None
    facial_reduction: bool = True
    rescale: bool = True


@dataclass
class IterationRecord:
    iteration: int
    primal_obj: float
    dual_obj: float
    gap: float
    primal_infeas: float
    dual_infeas: float
    mu: float
    step_primal: float
    step_dual: float


@dataclass
class SdpSolution:
    status: Status
    y: np.ndarray                      # free moments (y_0 = 1 excluded)
    objective_primal: float            # L_y(f_eps)
    gamma: float                       # SOS lower bound = dual objective
    lam: np.ndarray
    Q: np.ndarray
    Z: np.ndarray                      # moment matrix at the returned iterate
    iterations: int
    gap: float
    primal_infeas: float
    dual_infeas: float
    complementarity: tuple[float, float] = (0.0, 0.0)
    history: list[IterationRecord] = field(default_factory=list, repr=False)
    message: str = ""
    attempts: list[str] = field(default_factory=list)
    moments: MomentVector | None = field(default=None, repr=False)

    @property
    def objective_dual(self) -> float:
        return self.gamma

    @property
    def optimal(self) -> bool:
        return self.status is Status.OPTIMAL

    def summary(self) -> str:
        return (f"{self.status}: primal={self.objective_primal:.10g} dual={self.gamma:.10g} "
                f"gap={self.gap:.2e} pinf={self.primal_infeas:.2e} dinf={self.dual_infeas:.2e} "
                f"iters={self.iterations}")


# -- linear maps of the PSD block ------------------------------------------------------

class _PatternOperator:
    """``F_k`` is the 0/1 pattern of moment ``k`` in the moment matrix."""

    def __init__(self, entry_index: np.ndarray, nvar: int, backend: str | None, grouped=None):
        self.entry_index = entry_index
        self.flat = entry_index.ravel()
        self.ptr, self.rows, self.cols = grouped or group_entries(entry_index, nvar)
        self.nvar = nvar
        self.size = entry_index.shape[0]
        self.backend = backend
        counts = np.diff(self.ptr).astype(float)
        self.inv_counts = np.where(counts > 0, 1.0 / np.maximum(counts, 1.0), 0.0)

    def apply(self, X: np.ndarray) -> np.ndarray:
        return np.bincount(self.flat, weights=X.ravel(), minlength=self.nvar + 1)[1:]

    def adjoint(self, dy: np.ndarray) -> np.ndarray:
        return np.concatenate([[0.0], dy])[self.entry_index]

    def schur(self, X: np.ndarray, Zinv: np.ndarray) -> np.ndarray:
        return schur_moment(X, Zinv, self.ptr, self.rows, self.cols, self.entry_index,
                            self.nvar, backend=self.backend)

    def lift_residual(self, err: np.ndarray) -> np.ndarray:
        """Least-norm ``D`` with ``apply(D) = err`` (the patterns are disjoint)."""
        return self.adjoint(err * self.inv_counts)


class _DenseOperator:
    """General symmetric ``F_k`` stored as a (K, s, s) stack."""

    def __init__(self, F: np.ndarray):
        self.F = F
        self.nvar, self.size = F.shape[0], F.shape[1]
        self.Ff = F.reshape(self.nvar, self.size * self.size)
        self.gram_pinv = np.linalg.pinv(self.Ff @ self.Ff.T) if self.nvar else np.zeros((0, 0))

    def apply(self, X: np.ndarray) -> np.ndarray:
        return self.Ff @ X.ravel()

    def adjoint(self, dy: np.ndarray) -> np.ndarray:
        if not self.nvar:
            return np.zeros((self.size, self.size))
        return np.tensordot(dy, self.F, axes=1)

    def schur(self, X: np.ndarray, Zinv: np.ndarray) -> np.ndarray:
        if not self.nvar:
            return np.zeros((0, 0))
        W = X @ self.F @ Zinv
        M = self.Ff @ W.transpose(0, 2, 1).reshape(self.nvar, -1).T
        return 0.5 * (M + M.T)

    def lift_residual(self, err: np.ndarray) -> np.ndarray:
        return self.adjoint(self.gram_pinv @ err)


# -- numerics helpers ------------------------------------------------------------------

class _CholeskyFailure(Exception):
    pass


def _chol(A: np.ndarray) -> np.ndarray:
    try:
        return np.linalg.cholesky(A)
    except np.linalg.LinAlgError as exc:
        raise _CholeskyFailure(str(exc)) from exc


def _is_pd(A: np.ndarray) -> bool:
    try:
        np.linalg.cholesky(A)
        return True
    except np.linalg.LinAlgError:
        return False


class _SchurSolver:
    """Newton system of the PSD block plus the diagonal inequality block.

    Eliminating the multiplier step through ``lam / z`` amplifies rounding
    without bound once ``z -> 0``; the new multiplier ``lam+`` is kept as an
    unknown of the quasi-definite system

        [ M0   G^T          ] [dy  ]   [ a     ]
        [ G   -diag(z/lam)  ] [lam+] = [ -b/lam]
    """

    def __init__(self, M0: np.ndarray, G: np.ndarray, xl: np.ndarray, zl: np.ndarray,
                 reg: float = 0.0):
        self.n = M0.shape[0]
        self.G, self.xl, self.zl = G, xl, zl
        if not self.n:
            return
        self.cf = self._factor(M0, reg)
        if G.shape[0]:
            self.W = sla.cho_solve(self.cf, G.T, check_finite=False)
            K = np.diag(zl / xl) + G @ self.W
            self.ck = sla.cho_factor(0.5 * (K + K.T), lower=True, check_finite=False)

    @staticmethod
    def _factor(M0: np.ndarray, reg: float):
        # a diagonal shift only when plain Cholesky fails; iterative refinement
        # against the unshifted matrix recovers the accuracy it costs
        top = 1.0 + np.max(np.abs(np.diag(M0)))
        for shift in (reg, 1e-14, 1e-12, 1e-10):
            if shift < reg:
                continue
            A = M0 + (shift * top) * np.eye(M0.shape[0]) if shift else M0
            try:
                cf = sla.cho_factor(A, lower=True, check_finite=False)
            except np.linalg.LinAlgError:
                continue
            if np.all(np.isfinite(cf[0])):
                return cf
        raise np.linalg.LinAlgError("Schur complement is not positive definite")

    def solve(self, a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        if not self.n:
            return np.zeros(0), b / self.zl
        u = sla.cho_solve(self.cf, a, check_finite=False)
        if not self.G.shape[0]:
            return u, np.zeros(0)
        lam_new = sla.cho_solve(self.ck, self.G @ u + b / self.xl, check_finite=False)
        return u - self.W @ lam_new, lam_new


def _max_step_psd(L: np.ndarray, D: np.ndarray) -> float:
    """Largest ``a`` with ``L L^T + a D`` PSD, given the Cholesky factor ``L``."""
    B = sla.solve_triangular(L, D, lower=True)
    B = sla.solve_triangular(L, B.T, lower=True)
    lmin = np.linalg.eigvalsh(0.5 * (B + B.T))[0]
    return np.inf if lmin >= 0 else -1.0 / lmin


def _max_step_lp(x: np.ndarray, dx: np.ndarray) -> float:
    neg = dx < 0
    if not np.any(neg):
        return np.inf
    return float(np.min(-x[neg] / dx[neg]))


# -- core iteration ----------------------------------------------------------------------

@dataclass
class _Raw:
    status: Status
    message: str
    y: np.ndarray
    X: np.ndarray
    xl: np.ndarray
    Z: np.ndarray
    zl: np.ndarray
    iterations: int
    pobj: float
    dobj: float
    gap: float
    pinf: float
    dinf: float
    history: list[IterationRecord]
    duals: list[tuple[np.ndarray, float, float]] = field(default_factory=list)


def _ipm(op, c: np.ndarray, offset: float, F0: np.ndarray, G0: np.ndarray, Gf: np.ndarray,
         opts: SolverOptions, keep_duals: int = 0) -> _Raw:
    """Solve ``min offset + c @ y`` s.t. ``F0 + op.adjoint(y) PSD``, ``-G0 - Gf @ y >= 0``.

    The dual is ``max offset - <F0, X> + G0 @ xl`` s.t. ``op.apply(X) - Gf^T xl = c``.
    With ``keep_duals`` the last that many ``(X, dobj, dinf)`` are returned too.
    """
    s, m, N = op.size, Gf.shape[0], op.nvar
    nu = s + m
    norm_c = 1.0 + np.linalg.norm(c)
    norm_f0 = 1.0 + np.sqrt(np.sum(F0 ** 2) + np.sum(G0 ** 2))

    tau = 1.0 + np.max(np.abs(c), initial=0.0)
    X = tau * np.eye(s)
    xl = tau * np.ones(m)
    Z = tau * np.eye(s)
    zl = tau * np.ones(m)
    y = np.zeros(N)

    def measures():
        Rd_m = F0 + op.adjoint(y) - Z
        Rd_l = -G0 - Gf @ y - zl
        rp = c - op.apply(X) + Gf.T @ xl
        pobj = float(offset + c @ y)
        dobj = float(offset - np.sum(F0 * X) + G0 @ xl)
        mu = (np.sum(X * Z) + xl @ zl) / nu
        gap = abs(pobj - dobj) / (1.0 + abs(pobj) + abs(dobj))
        pinf = np.sqrt(np.sum(Rd_m ** 2) + np.sum(Rd_l ** 2)) / norm_f0
        dinf = np.linalg.norm(rp) / norm_c
        return Rd_m, Rd_l, rp, pobj, dobj, mu, gap, pinf, dinf

    history: list[IterationRecord] = []
    duals: list[tuple[np.ndarray, float, float]] = []
    status, message = Status.MAX_ITERATIONS, "iteration limit reached"
    best = None
    best_merit = np.inf
    it = 0
    ap = ad = 0.0
    stalled = 0

    for it in range(opts.max_iter + 1):
        Rd_m, Rd_l, rp, pobj, dobj, mu, gap, pinf, dinf = measures()
        history.append(IterationRecord(it, pobj, dobj, gap, pinf, dinf, mu, ap, ad))
        if keep_duals:
            duals.append((X.copy(), dobj, dinf))
            del duals[:-keep_duals]
        if opts.verbosity:
            log.info("%3d pobj=% .10e dobj=% .10e gap=%.2e pinf=%.2e dinf=%.2e mu=%.2e",
                     it, pobj, dobj, gap, pinf, dinf, mu)
        if not (np.isfinite(pobj) and np.isfinite(dobj)):
            status, message = Status.NUMERICAL_FAILURE, "non-finite objective"
            break
        merit = max(gap, pinf, dinf)
        if merit < best_merit:
            best_merit = merit
            best = (y.copy(), X.copy(), xl.copy(), Z.copy(), zl.copy(), it)
        if gap <= opts.gap_tol and pinf <= opts.feas_tol and dinf <= opts.feas_tol:
            status, message = Status.OPTIMAL, "converged"
            best = None
            break
        if pobj < -opts.divergence and pinf <= 1e-6:
            status, message = Status.UNBOUNDED, "moment objective diverges to -inf (SOS side infeasible)"
            best = None
            break
        if dobj > opts.divergence and dinf <= 1e-6:
            status, message = Status.INFEASIBLE, "SOS bound diverges to +inf (moment side infeasible)"
            best = None
            break
        if it == opts.max_iter:
            break

        try:
            LZ = _chol(Z)
            LX = _chol(X)
        except _CholeskyFailure:
            status, message = Status.NUMERICAL_FAILURE, "iterate left the PSD cone"
            break
        Zinv = sla.cho_solve((LZ, True), np.eye(s))
        Zinv = 0.5 * (Zinv + Zinv.T)

        M = op.schur(X, Zinv)
        try:
            schur = _SchurSolver(M, Gf, xl, zl, opts.reg)
        except np.linalg.LinAlgError:
            status, message = Status.NUMERICAL_FAILURE, "Schur complement Cholesky failed"
            break
        XRZ = X @ Rd_m @ Zinv

        def direction(sigma, Dm, Dl):
            Tm = sigma * mu * Zinv - XRZ - Dm
            a = op.apply(Tm) - c
            b = sigma * mu - Dl - xl * Rd_l
            dy, lam_new = schur.solve(a, b)

            def build(dy, lam_new):
                dZm = op.adjoint(dy) + Rd_m
                dZl = -(Gf @ dy) + Rd_l
                dXm = sigma * mu * Zinv - X - X @ dZm @ Zinv - Dm
                dXm = 0.5 * (dXm + dXm.T)
                dXl = lam_new - xl
                err = rp - op.apply(dXm) + Gf.T @ dXl
                return dZm, dZl, dXm, dXl, err

            dZm, dZl, dXm, dXl, err = build(dy, lam_new)
            # iterative refinement: err is the residual of the Newton equations
            # (the Schur matrix is formed and factored in floating point)
            for _ in range(_REFINE_PASSES):
                enorm = np.linalg.norm(err)
                if enorm <= 1e-15 * (1.0 + np.linalg.norm(c)):
                    break
                res2 = -b / xl - (Gf @ dy - (zl / xl) * lam_new) if m else np.zeros(0)
                ddy, dlam = schur.solve(-err, -res2 * xl) if m else schur.solve(-err, np.zeros(0))
                cand = build(dy + ddy, lam_new + dlam if m else lam_new)
                if np.linalg.norm(cand[4]) >= enorm:
                    break
                dy = dy + ddy
                if m:
                    lam_new = lam_new + dlam
                dZm, dZl, dXm, dXl, err = cand
            # least-norm correction so the dual equations hold to rounding
            dXm = dXm + op.lift_residual(err)
            return dy, dXm, dXl, dZm, dZl

        def steps(dXm, dXl, dZm, dZl):
            a_p = min(_max_step_psd(LX, dXm), _max_step_lp(xl, dXl) if m else np.inf)
            a_d = min(_max_step_psd(LZ, dZm), _max_step_lp(zl, dZl) if m else np.inf)
            return min(1.0, opts.step_fraction * a_p), min(1.0, opts.step_fraction * a_d)

        dy, dXm, dXl, dZm, dZl = direction(0.0, 0.0, np.zeros(m))
        ap, ad = steps(dXm, dXl, dZm, dZl)
        mu_aff = (np.sum((X + ap * dXm) * (Z + ad * dZm))
                  + (xl + ap * dXl) @ (zl + ad * dZl)) / nu
        sigma = float(np.clip((mu_aff / mu) ** 3, 0.0, 1.0)) if mu > 0 else 0.0
        Dm = dXm @ dZm @ Zinv
        Dl = dXl * dZl
        dy, dXm, dXl, dZm, dZl = direction(sigma, Dm, Dl)
        if not (np.all(np.isfinite(dy)) and np.all(np.isfinite(dXm)) and np.all(np.isfinite(dXl))):
            status, message = Status.NUMERICAL_FAILURE, "non-finite search direction"
            break
        ap, ad = steps(dXm, dXl, dZm, dZl)

        # backtrack until both updated iterates factor
        for _ in range(30):
            Xn = X + ap * dXm
            Zn = Z + ad * dZm
            okx = _is_pd(0.5 * (Xn + Xn.T)) and (not m or np.all(xl + ap * dXl > 0))
            okz = _is_pd(0.5 * (Zn + Zn.T)) and (not m or np.all(zl + ad * dZl > 0))
            if okx and okz:
                break
            if not okx:
                ap *= 0.8
            if not okz:
                ad *= 0.8
        else:
            status, message = Status.NUMERICAL_FAILURE, "no step keeps the iterates PSD"
            break
        if opts.verbosity > 1:
            log.info("    sigma=%.2e ap=%.2e ad=%.2e", sigma, ap, ad)

        stalled = stalled + 1 if max(ap, ad) < 1e-8 else 0
        if stalled >= 3:
            status, message = Status.NUMERICAL_FAILURE, "lack of progress"
            break

        X = 0.5 * (Xn + Xn.T)
        xl = xl + ap * dXl
        y = y + ad * dy
        Z = 0.5 * (Zn + Zn.T)
        zl = zl + ad * dZl

    if best is not None and status in (Status.MAX_ITERATIONS, Status.NUMERICAL_FAILURE):
        # report the most accurate iterate seen rather than the last one
        y, X, xl, Z, zl, best_it = best
        message += f" (returning iterate {best_it})"
    _, _, _, pobj, dobj, mu, gap, pinf, dinf = measures()
    return _Raw(status, message, y, X, xl, Z, zl, it, pobj, dobj, gap, pinf, dinf, history, duals)


# -- public entry points ---------------------------------------------------------------

def solve(prob: SdpProblem, opts: SolverOptions | None = None, **kw) -> SdpSolution:
    """Solve the moment SDP and its SOS dual simultaneously.

    When an optimal solution has moments of a large scale, the moment matrix
    is badly conditioned and the SOS dual is only accurate relative to it.
    The problem is then solved once more in rescaled variables, and that
    solution is kept if it is optimal too.
    """
    opts = replace(opts or SolverOptions(), **kw)
    sol = _solve_once(prob, opts)
    s = _variable_scale(prob, sol) if opts.rescale else None
    if s is not None:
        trial = _unscale_variables(prob, _solve_once(prob.variable_scaled(s), opts), s)
        if trial.optimal:
            trial.message += f" (variables rescaled by 1/{s:g})"
            sol = trial
    if opts.verbosity:
        log.info("%s", sol.summary())
    return sol


def _solve_once(prob: SdpProblem, opts: SolverOptions) -> SdpSolution:
    if prob.m and prob.factors is not None and opts.facial_reduction:
        return _solve_on_face(prob, opts)
    op = _PatternOperator(prob.entry_index, prob.nfree, opts.backend,
                          (prob.ptr, prob.rows, prob.cols))
    F0m, _ = prob.f0()
    raw = _ipm(op, prob.c, prob.offset, F0m, prob.G[:, 0], prob.G[:, 1:], opts)
    Zm, _ = prob.lmi(raw.y)
    return SdpSolution(
        status=raw.status, y=raw.y.copy(), objective_primal=raw.pobj, gamma=raw.dobj,
        lam=raw.xl.copy(), Q=raw.X.copy(), Z=Zm, iterations=raw.iterations, gap=raw.gap,
        primal_infeas=raw.pinf, dual_infeas=raw.dinf,
        complementarity=(float(np.sum(raw.X * raw.Z)), float(raw.xl @ raw.zl)),
        history=raw.history, message=raw.message, moments=prob.moment_vector(raw.y),
    )


_RESCALE_FROM = 4.0


def _variable_scale(prob: SdpProblem, sol: SdpSolution) -> float | None:
    """A power of two near the radius ``max |y_k|^(1/deg k)`` of an optimal moment vector."""
    deg = prob.degrees()
    if deg is None or not sol.optimal or prob.nfree == 0:
        return None
    dm = deg[1][1:]
    mask = (dm > 0) & (sol.y != 0.0)
    if not mask.any():
        return None
    radius = float(np.max(np.abs(sol.y[mask]) ** (1.0 / dm[mask])))
    if not np.isfinite(radius) or radius < _RESCALE_FROM:
        return None
    # keep s^(2r) far from overflow
    top = max(1, int(deg[1].max()))
    return 2.0 ** min(round(np.log2(radius)), 900 // top)


def _unscale_variables(prob: SdpProblem, sol: SdpSolution, s: float) -> SdpSolution:
    db, dm = prob.degrees()
    y = sol.y * s ** dm[1:].astype(float)
    ds = s ** -db.astype(float)
    Q = sol.Q * ds[:, None] * ds[None, :]
    Zm, _ = prob.lmi(y)
    return replace(sol, y=y, Q=Q, Z=Zm, objective_primal=prob.moment_objective(y),
                   complementarity=(float(np.sum(Q * Zm)), sol.complementarity[1]),
                   moments=prob.moment_vector(y))


def _ideal_rows(prob: SdpProblem, W: np.ndarray) -> np.ndarray:
    """Rows ``y -> L_y(x^alpha g)`` of ``M_r(y) g = 0``, for every column ``g`` of ``W``."""
    s, N1 = prob.block_size, prob.nfree + 1
    p = W.shape[1]
    E = np.zeros((p * s, N1))
    ar = np.arange(s)[:, None]
    for col in range(p):
        nz = np.nonzero(W[:, col])[0]
        np.add.at(E[col * s:(col + 1) * s], (ar, prob.entry_index[:, nz]), W[nz, col][None, :])
    return E


def _solve_on_face(prob: SdpProblem, opts: SolverOptions) -> SdpSolution:
    s, m, N1 = prob.block_size, prob.m, prob.nfree + 1
    c_full = np.concatenate([[prob.offset], prob.c])
    W = np.hstack(prob.factors)
    E = _ideal_rows(prob, W)

    # y = y_p + K2 u parametrizes {E y = 0, y_0 = 1}
    K = sla.null_space(E)
    k0 = K[0, :]
    if K.shape[1] == 0 or np.linalg.norm(k0) < 1e-10:
        return _infeasible(prob, "the equality constraints force y_0 = 0")
    y_p = K @ (k0 / (k0 @ k0))
    K2 = K @ sla.null_space(k0[None, :]) if K.shape[1] > 1 else np.zeros((N1, 0))
    V = sla.null_space(W.T)
    U = sla.orth(W)
    if V.shape[1] == 0:
        return _infeasible(prob, "the inequality rows annihilate the whole moment matrix")

    F0 = V.T @ y_p[prob.entry_index] @ V
    if K2.shape[1]:
        F = np.einsum("ai,kab,bj->kij", V, np.moveaxis(K2[prob.entry_index], 2, 0), V)
    else:
        F = np.zeros((0, V.shape[1], V.shape[1]))
    F0 = 0.5 * (F0 + F0.T)
    F = 0.5 * (F + F.transpose(0, 2, 1))
    op = _DenseOperator(F)
    # the reconstruction below adds rounding of its own, so solve to half the gap budget
    raw = _ipm(op, K2.T @ c_full, float(c_full @ y_p), F0, np.zeros(0),
               np.zeros((0, op.nvar)), replace(opts, gap_tol=0.5 * opts.gap_tol),
               keep_duals=_DUAL_CANDIDATES)

    y_full = y_p + K2 @ raw.y
    y = y_full[1:]
    Zm, _ = prob.lmi(y)
    pobj = prob.moment_objective(y)
    eq_res = float(np.linalg.norm(E @ y_full) / (1.0 + np.linalg.norm(y_full)))
    pinf = max(raw.pinf, eq_res)
    status, message = raw.status, raw.message + " (solved on the face M g = 0)"

    if raw.status is Status.INFEASIBLE or raw.status is Status.UNBOUNDED:
        s_ = np.zeros((s, s))
        return SdpSolution(
            status=raw.status, y=y, objective_primal=pobj, gamma=raw.dobj, lam=np.zeros(m), Q=s_,
            Z=Zm, iterations=raw.iterations, gap=raw.gap, primal_infeas=pinf,
            dual_infeas=raw.dinf, history=raw.history, message=message,
            moments=prob.moment_vector(y))

    # The multiplier grows like 1 / lambda_min(Xr), and the last step usually
    # overshoots the gap target, so more interior dual points that still meet
    # it give smaller multipliers and a certificate that rounds less.
    best = None
    for X, dobj in _dual_candidates(raw, pobj, 0.5 * opts.gap_tol, opts.feas_tol):
        cand = _reconstruct(prob, E, V, U, W, X, dobj, pobj)
        if best is None or cand.key(opts) < best.key(opts):
            best = cand
    if not np.isfinite(best.lam_val):
        status, message = Status.NUMERICAL_FAILURE, "dual face solution is singular; no finite multiplier"
    elif status is Status.OPTIMAL and not best.accurate(opts):
        status = Status.NUMERICAL_FAILURE
        message = f"certificate reconstruction lost accuracy (gap={best.gap:.2e}, dinf={best.dinf:.2e})"
    return SdpSolution(
        status=status, y=y, objective_primal=pobj, gamma=best.gamma, lam=np.full(m, best.lam_val),
        Q=best.Q, Z=Zm, iterations=raw.iterations, gap=best.gap, primal_infeas=pinf,
        dual_infeas=best.dinf, complementarity=(float(np.sum(best.Qh * Zm)), 0.0),
        history=raw.history, message=message, moments=prob.moment_vector(y),
    )


def _dual_candidates(raw: _Raw, pobj: float, budget: float, feas_tol: float):
    """The final dual point, then its blends with earlier ones that keep the gap within budget."""
    Xf, df = raw.X, raw.dobj
    yield Xf, df
    scale = 1.0 + abs(pobj) + abs(df)
    room = budget * scale - (pobj - df)
    if room <= 0:
        return
    for X, d, dinf in reversed(raw.duals[:-1]):
        if not (dinf <= feas_tol and d < df):
            continue
        t = min(1.0, room / (df - d))
        yield (1.0 - t) * Xf + t * X, (1.0 - t) * df + t * d


@dataclass
class _Candidate:
    Q: np.ndarray
    Qh: np.ndarray
    lam_val: float
    gamma: float
    gap: float
    dinf: float
    floor: float

    def accurate(self, opts: SolverOptions) -> bool:
        return self.gap <= opts.gap_tol + self.floor and self.dinf <= opts.feas_tol

    def key(self, opts: SolverOptions) -> tuple:
        return (not np.isfinite(self.lam_val), not self.accurate(opts), self.dinf, self.gap)


def _reconstruct(prob: SdpProblem, E: np.ndarray, V: np.ndarray, U: np.ndarray, W: np.ndarray,
                 X: np.ndarray, dobj: float, pobj: float) -> _Candidate:
    """Certificate ``(Q, lam, gamma)`` for the original rows from a dual point on the face."""
    s, N1 = prob.block_size, prob.nfree + 1
    c_full = np.concatenate([[prob.offset], prob.c])
    # f_eps - gamma - v^T (V Xr V^T) v lies in the span of the x^alpha g, up to dinf
    Xr = 0.5 * (X + X.T)
    Q0 = V @ Xr @ V.T
    resid = c_full - np.bincount(prob.entry_index.ravel(), weights=Q0.ravel(), minlength=N1)
    resid[0] -= dobj
    h = np.linalg.lstsq(E.T, resid, rcond=None)[0]
    H = h.reshape(W.shape[1], s).T
    Qh = Q0 + 0.5 * (H @ W.T + W @ H.T)
    Qh = 0.5 * (Qh + Qh.T)
    lam_val = _safe_multiplier(Qh, V, U, W, Xr)
    finite = np.isfinite(lam_val)
    lam = np.full(prob.m, lam_val if finite else 0.0)
    Q, gamma, rp = _polish(prob, Qh + lam[0] * (W @ W.T) if prob.m else Qh, lam, dobj)
    dinf = float(np.linalg.norm(rp) / (1.0 + np.linalg.norm(prob.c)))
    scale = 1.0 + abs(pobj) + abs(gamma)
    # a bound stated through Q[0, 0] cannot be finer than one ulp of that entry
    floor = float(np.spacing(abs(Q[0, 0]))) / scale
    return _Candidate(Q, Qh, float(lam_val), gamma, abs(pobj - gamma) / scale, dinf, floor)


def _polish(prob: SdpProblem, Q: np.ndarray, lam: np.ndarray, gamma: float):
    """Make the coefficient equations hold to rounding for the stored ``Q`` and ``lam``.

    ``Q`` carries entries of size ``lam``, so forming it loses about
    ``eps * lam`` per entry. For every moment the mismatch is summed
    exactly (``math.fsum``) and moved onto the smallest entry of ``Q``
    holding that moment, where it is represented with little loss. ``Q[0, 0]``
    is rounded up, so the returned bound is at most one ulp of ``Q[0, 0]``
    below ``gamma`` and never above it. Returns ``(Q, gamma, residual)``
    with the residual of the polished data over moments ``1..nfree``.
    """
    Q = 0.5 * (Q + Q.T)
    N1 = prob.nfree + 1
    flat = prob.entry_index.ravel()
    order = np.argsort(flat, kind="stable")
    bounds = np.searchsorted(flat[order], np.arange(N1 + 1))
    s = prob.block_size
    c_full = np.concatenate([[prob.offset], prob.c])

    def exact_parts(k):
        ent = order[bounds[k]:bounds[k + 1]]
        terms = list(Q.ravel()[ent]) + [-v for v in lam * prob.G[:, k] if v != 0.0]
        return ent, terms

    for k in range(1, N1):
        ent, terms = exact_parts(k)
        d = c_full[k] - math.fsum(terms)
        if d == 0.0 or ent.size == 0:
            continue
        e = ent[np.argmin(np.abs(Q.ravel()[ent]))]
        i, j = divmod(int(e), s)
        if i == j:
            Q[i, i] += d
        else:
            Q[i, j] += 0.5 * d
            Q[j, i] = Q[i, j]
    lam_g0 = [v for v in lam * prob.G[:, 0] if v != 0.0]
    q00 = math.fsum([c_full[0], -gamma] + lam_g0)
    if math.fsum([c_full[0], -gamma, -q00] + lam_g0) > 0.0:
        q00 = float(np.nextafter(q00, np.inf))
    Q[0, 0] = q00
    gamma = math.fsum([c_full[0], -q00] + lam_g0)
    rp = np.array([c_full[k] - math.fsum(exact_parts(k)[1]) for k in range(1, N1)])
    return Q, gamma, rp


def _safe_multiplier(Qh: np.ndarray, V: np.ndarray, U: np.ndarray, W: np.ndarray,
                     Xr: np.ndarray) -> float:
    """A little more than the least ``lam >= 0`` with ``Qh + lam W W^T`` PSD.

    In the orthonormal basis ``[V U]`` the ``V`` block is ``Xr`` (interior,
    hence invertible), so by a Schur complement the condition reads
    ``U^T Qh U - B^T Xr^{-1} B + lam U^T W W^T U PSD`` with ``B = V^T Qh U``.
    The 25% margin keeps the result strictly inside the cone.
    """
    if U.shape[1] == 0:
        return 0.0
    B = V.T @ Qh @ U
    w, R = np.linalg.eigh(Xr)
    if w[0] <= 0.0:
        return np.inf
    T = R.T @ B
    S = U.T @ Qh @ U - T.T @ (T / w[:, None])
    P = U.T @ W @ W.T @ U
    pw, pv = np.linalg.eigh(0.5 * (P + P.T))
    Pih = pv @ np.diag(1.0 / np.sqrt(pw)) @ pv.T
    lmax = np.linalg.eigvalsh(-Pih @ (0.5 * (S + S.T)) @ Pih)[-1]
    return float(max(0.0, 1.25 * lmax))


def _infeasible(prob: SdpProblem, why: str) -> SdpSolution:
    s = prob.block_size
    y = np.zeros(prob.nfree)
    return SdpSolution(
        status=Status.INFEASIBLE, y=y, objective_primal=np.inf, gamma=np.inf,
        lam=np.zeros(prob.m), Q=np.zeros((s, s)), Z=prob.lmi(y)[0], iterations=0,
        gap=np.inf, primal_infeas=np.inf, dual_infeas=np.inf, message=why,
    )


def _badness(sol: SdpSolution) -> tuple:
    rank = {Status.OPTIMAL: 0, Status.UNBOUNDED: 1, Status.INFEASIBLE: 1,
            Status.MAX_ITERATIONS: 2, Status.NUMERICAL_FAILURE: 3}
    return (rank[sol.status], max(sol.gap, sol.primal_infeas, sol.dual_infeas))


def solve_with_restarts(prob: SdpProblem, opts: SolverOptions | None = None,
                        max_restarts: int = 3, **kw) -> SdpSolution:
    """:func:`solve`, retried after a numerical failure.

    Each retry rescales the objective to unit max-norm and forces a Schur
    complement shift of 1e-11, 1e-10, ... times its largest diagonal entry.
    The best attempt is returned, with the attempt log in ``attempts``.
    """
    opts = replace(opts or SolverOptions(), **kw)
    sol = solve(prob, opts)
    log_lines = [f"attempt 0 (reg={opts.reg:.0e}): {sol.summary()}"]
    best = sol
    if sol.status in (Status.NUMERICAL_FAILURE, Status.MAX_ITERATIONS):
        scale = max(np.max(np.abs(prob.c), initial=0.0), abs(prob.offset))
        factor = 1.0 / scale if scale > 0 else 1.0
        scaled = prob.scaled(factor)
        for k in range(1, max_restarts + 1):
            reg = max(opts.reg, 1e-12) * 10.0 ** k
            # gap and residual tolerances are relative, so they carry over unchanged
            trial = _unscale(solve(scaled, replace(opts, reg=reg)), factor)
            log_lines.append(f"attempt {k} (scaled x{factor:.3g}, reg={reg:.0e}): {trial.summary()}")
            if _badness(trial) < _badness(best):
                best = trial
            if trial.status not in (Status.NUMERICAL_FAILURE, Status.MAX_ITERATIONS):
                break
    best.attempts = log_lines
    return best


def _unscale(sol: SdpSolution, factor: float) -> SdpSolution:
    if factor == 1.0:
        return sol
    inv = 1.0 / factor
    sol.objective_primal *= inv
    sol.gamma *= inv
    sol.lam = sol.lam * inv
    sol.Q = sol.Q * inv
    return sol
