"""Command-line front end.

    perturbsos minimize PROBLEM [--eps E|auto] [--r R|auto] [--r-max K] ...
    perturbsos certify PROBLEM CERTIFICATE
    perturbsos lift PROBLEM [--out FILE]
    perturbsos export-sdpa PROBLEM --r R [--eps E] --out FILE

``minimize`` tries r = r_min .. r_max and stops at the first order whose
certificate passes independent verification. Exit status: 0 for a verified
certificate, 2 when every order up to r_max fails, 1 on any hard error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .cert import (CertificateError, certificate_from_dict, certificate_to_dict, epsilon_for_error,
                   extract_certificate, lifted_coincidence_check, sandwich_report, verify_certificate)
from .moment import BasisSizeError
from .poly import PolynomialError, ProblemInstance
from .problemfile import ProblemFileError, format_problem, load_problem
from .relax import RelaxationError, build_relaxation, lift_semialgebraic, min_relaxation_order
from .sdp import SolverOptions, Status, solve_with_restarts, to_standard_form, write_sdpa

EXIT_OK, EXIT_ERROR, EXIT_EXHAUSTED = 0, 1, 2
REPORT_VERSION = 1
log = logging.getLogger("perturbsos")


class UsageError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    """Usage errors exit with status 1; status 2 means r_max was exhausted."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_ERROR, f"{self.prog}: error: {message}\n")


@dataclass(frozen=True)
class RunConfig:
    eps: float | str = 0.01
    eta: float = 0.1
    rho: float = 1.0
    r: int | str = "auto"
    r_max: int = 8
    gap_tol: float = 1e-8
    feas_tol: float = 1e-8
    tol: float = 1e-5
    single_lambda: bool = False
    jobs: int = 1

    def resolve_eps(self, n: int) -> float:
        if self.eps == "auto":
            if not self.eta > 0 or not self.rho >= 0:
                raise UsageError("--eps auto needs --eta > 0 and --rho >= 0")
            return epsilon_for_error(self.eta, self.rho, n)
        eps = float(self.eps)
        if not eps >= 0:
            raise UsageError(f"--eps must be nonnegative, got {eps}")
        return eps

    def orders(self, r_min: int) -> list[int]:
        if self.r != "auto":
            r = int(self.r)
            if r < r_min:
                raise UsageError(f"--r {r} is below the minimum order {r_min} for this problem")
            return [r]
        if self.r_max < r_min:
            raise UsageError(f"--r-max {self.r_max} is below the minimum order {r_min}")
        return list(range(r_min, self.r_max + 1))


def _finite(v) -> float | None:
    """JSON has no infinities; non-finite values are reported as null."""
    v = float(v)
    return v if np.isfinite(v) else None


# -- the escalation loop -----------------------------------------------------------------

def _attempt(work: ProblemInstance, original: ProblemInstance, eps: float, r: int,
             cfg: RunConfig) -> dict:
    t0 = time.perf_counter()
    try:
        relax = build_relaxation(work, eps, r, single_lambda=cfg.single_lambda)
        prob = to_standard_form(relax)
    except BasisSizeError as exc:
        rec = {"r": r, "status": "SizeLimit", "gamma": None, "primal": None, "gap": None,
               "primal_infeas": None, "dual_infeas": None, "iterations": 0,
               "message": str(exc), "verified": False, "seconds": time.perf_counter() - t0}
        return {"record": rec, "relax": None, "sol": None, "cert": None, "ver": None}
    sol = solve_with_restarts(prob, SolverOptions(gap_tol=cfg.gap_tol, feas_tol=cfg.feas_tol))
    rec = {
        "r": r,
        "status": str(sol.status),
        "gamma": _finite(sol.gamma),
        "primal": _finite(sol.objective_primal),
        "gap": _finite(sol.gap),
        "primal_infeas": _finite(sol.primal_infeas),
        "dual_infeas": _finite(sol.dual_infeas),
        "iterations": int(sol.iterations),
        "message": sol.message,
        "verified": False,
    }
    cert = ver = None
    if sol.status is Status.OPTIMAL:
        cert = extract_certificate(relax, sol)
        ver = verify_certificate(original, cert, cfg.tol)
        rec["verified"] = ver.passed
    rec["seconds"] = time.perf_counter() - t0
    return {"record": rec, "relax": relax, "sol": sol, "cert": cert, "ver": ver}


def run_minimize(inst: ProblemInstance, cfg: RunConfig, probe=None,
                 minimizer: bool = False) -> tuple[dict, int]:
    t0 = time.perf_counter()
    lift = lift_semialgebraic(inst)
    work = lift.lifted
    eps = cfg.resolve_eps(work.nvars)
    orders = cfg.orders(min_relaxation_order(inst))
    attempts, found = [], None
    jobs = max(1, int(cfg.jobs))
    with ThreadPoolExecutor(max_workers=jobs) if jobs > 1 else _Inline() as pool:
        for start in range(0, len(orders), jobs):
            batch = orders[start:start + jobs]
            results = list(pool.map(lambda r: _attempt(work, inst, eps, r, cfg), batch))
            stop = False
            for res in results:
                attempts.append(res)
                if res["record"]["verified"]:
                    found = res
                # larger orders only grow, so a size failure ends the search too
                stop = found is not None or res["record"]["status"] == "SizeLimit"
                if stop:
                    break
            if stop:
                break

    report = {
        "version": REPORT_VERSION,
        "vars": list(inst.names),
        "lifted_vars": list(work.names),
        "eps": eps,
        "eps_mode": "auto" if cfg.eps == "auto" else "fixed",
        "eta": cfg.eta if cfg.eps == "auto" else None,
        "rho": cfg.rho if cfg.eps == "auto" else None,
        "r_range": [orders[0], orders[-1]],
        "status": "verified" if found else "exhausted",
        "r": found["record"]["r"] if found else None,
        "lower_bound": found["cert"].gamma if found else None,
        "certificate": certificate_to_dict(found["cert"]) if found else None,
        "verification": None,
        "sandwich": None,
        "attempts": [a["record"] for a in attempts],
    }
    if found:
        ver = found["ver"]
        report["verification"] = {
            "passed": ver.passed, "tol": cfg.tol, "residual_linf": ver.residual_linf,
            "witness": list(ver.witness) if ver.witness is not None else None,
            "gram_min_eig": ver.gram_min_eig, "lambda_min": ver.lambda_min,
        }
        if probe is not None:
            sw = sandwich_report(found["relax"], found["sol"], probe,
                                 lift=lift if inst.inequalities else None,
                                 minimizer=minimizer, gap_tol=cfg.gap_tol)
            report["sandwich"] = {
                "lower_bound": sw.lower_bound, "upper_probe": sw.upper_probe,
                "probe": sw.probe, "probe_violation": sw.probe_violation,
                "feasible_probe": sw.feasible_probe, "consistent": sw.consistent,
                "theta_at_probe": sw.theta_at_probe, "bound_gap": sw.bound_gap,
                "predicted_width": sw.predicted_width,
            }
    report["elapsed_seconds"] = time.perf_counter() - t0
    return report, EXIT_OK if found else EXIT_EXHAUSTED


class _Inline:
    """Stand-in for an executor that runs tasks in the calling thread."""

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        return False

    def map(self, fn, items):
        return map(fn, items)


# -- output ------------------------------------------------------------------------------

def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_fmt(x) for x in v) + "]"
    if v is None:
        return "-"
    return str(v)


def format_text(report: dict) -> str:
    lines = []
    for key in ("status", "lower_bound", "r", "eps", "eps_mode", "r_range", "vars", "lifted_vars"):
        lines.append(f"{key}: {_fmt(report[key])}")
    if report["verification"]:
        for k, v in report["verification"].items():
            lines.append(f"verification.{k}: {_fmt(v)}")
    if report["sandwich"]:
        for k, v in report["sandwich"].items():
            lines.append(f"sandwich.{k}: {_fmt(v)}")
    cert = report["certificate"]
    if cert:
        lines.append(f"certificate.gamma: {_fmt(cert['gamma'])}")
        lines.append(f"certificate.lambda: {_fmt(cert['lambda'])}")
        lines.append(f"certificate.gram_dim: {cert['gram']['dim']}")
        lines.append(f"certificate.residual_linf: {_fmt(cert['residual_linf'])}")
        lines.append(f"certificate.gram_min_eig: {_fmt(cert['gram_min_eig'])}")
    for a in report["attempts"]:
        lines.append(
            f"attempt r={a['r']}: {a['status']} gamma={_fmt(a['gamma'])} primal={_fmt(a['primal'])} "
            f"gap={_fmt(a['gap'])} primal_infeas={_fmt(a['primal_infeas'])} "
            f"dual_infeas={_fmt(a['dual_infeas'])} iterations={a['iterations']} "
            f"verified={a['verified']} seconds={_fmt(a['seconds'])}")
    lines.append(f"elapsed_seconds: {_fmt(report['elapsed_seconds'])}")
    return "\n".join(lines) + "\n"


def _emit(text: str, out) -> None:
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


# -- subcommands -------------------------------------------------------------------------

def _parse_probe(text: str | None):
    if text is None:
        return None
    try:
        return np.array([float(v) for v in text.split(",")], dtype=float)
    except ValueError as exc:
        raise UsageError(f"--probe expects comma-separated numbers, got {text!r}") from exc


def _eps_arg(text: str):
    return "auto" if text == "auto" else float(text)


def _r_arg(text: str):
    return "auto" if text == "auto" else int(text)


def cmd_minimize(args) -> int:
    inst = load_problem(args.problem)
    cfg = RunConfig(eps=args.eps, eta=args.eta, rho=args.rho, r=args.r, r_max=args.r_max,
                    gap_tol=args.gap_tol, feas_tol=args.feas_tol, tol=args.tol,
                    single_lambda=args.single_lambda, jobs=args.jobs)
    probe = _parse_probe(args.probe)
    report, code = run_minimize(inst, cfg, probe, args.minimizer)
    report["problem"] = str(args.problem)
    if args.format == "json":
        _emit(json.dumps(report, indent=2) + "\n", args.out)
    else:
        _emit(format_text(report), args.out)
    return code


def cmd_certify(args) -> int:
    inst = load_problem(args.problem)
    try:
        data = json.loads(Path(args.certificate).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise CertificateError(f"certificate is not valid JSON: {exc}") from exc
    if isinstance(data, dict) and "certificate" in data and "gram" not in data:
        data = data["certificate"]
        if data is None:
            raise CertificateError("report holds no certificate")
    if not isinstance(data, dict):
        raise CertificateError("certificate JSON must be an object")
    cert = certificate_from_dict(data)
    ver = verify_certificate(inst, cert, args.tol)
    lines = [f"verified: {ver.passed}",
             f"residual_linf: {ver.residual_linf!r}",
             f"witness: {_monomial(ver.witness, lift_semialgebraic(inst).lifted.names)}",
             f"gram_min_eig: {ver.gram_min_eig!r}",
             f"lambda_min: {ver.lambda_min!r}"]
    lines += [f"failure: {f}" for f in ver.failures]
    passed = ver.passed
    if inst.inequalities and ver.passed:
        co = lifted_coincidence_check(inst, cert)
        ok = co.max_deviation <= args.tol
        passed = passed and ok
        lines.append(f"lifted_max_deviation: {co.max_deviation!r} ({len(co.points)} points)")
    sys.stdout.write("\n".join(lines) + "\n")
    return EXIT_OK if passed else EXIT_ERROR


def _monomial(exps, names) -> str:
    if exps is None:
        return "-"
    parts = [n if e == 1 else f"{n}^{e}" for n, e in zip(names, exps) if e]
    return "*".join(parts) or "1"


def cmd_lift(args) -> int:
    inst = load_problem(args.problem)
    if not inst.inequalities:
        log.warning("problem has no inequalities; writing it unchanged")
    lifted = lift_semialgebraic(inst).lifted
    _emit(format_problem(lifted, f"lifted from {args.problem}"), args.out)
    return EXIT_OK


def cmd_export_sdpa(args) -> int:
    inst = load_problem(args.problem)
    work = lift_semialgebraic(inst).lifted
    cfg = RunConfig(eps=args.eps, eta=args.eta, rho=args.rho)
    eps = cfg.resolve_eps(work.nvars)
    r = min_relaxation_order(inst) if args.r == "auto" else int(args.r)
    relax = build_relaxation(work, eps, r, single_lambda=args.single_lambda)
    text = write_sdpa(to_standard_form(relax), comment=f"{args.problem} eps={eps!r} r={r}")
    _emit(text, args.out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="perturbsos", description="Certified lower bounds for polynomial minimization.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp):
        sp.add_argument("problem", help="problem file")
        sp.add_argument("--eps", type=_eps_arg, default=0.01, help="perturbation size or 'auto'")
        sp.add_argument("--eta", type=float, default=0.1, help="target accuracy for --eps auto")
        sp.add_argument("--rho", type=float, default=1.0, help="bound on max|x_i| for --eps auto")
        sp.add_argument("--r", type=_r_arg, default="auto", help="relaxation order or 'auto'")
        sp.add_argument("--single-lambda", action="store_true",
                        help="one multiplier for the sum of squared constraints")
        sp.add_argument("--out", help="output file (default: stdout)")

    m = sub.add_parser("minimize", help="compute and verify a certified lower bound")
    common(m)
    m.add_argument("--r-max", type=int, default=8)
    m.add_argument("--tol", type=float, default=1e-5, help="verification tolerance")
    m.add_argument("--gap-tol", type=float, default=1e-8)
    m.add_argument("--feas-tol", type=float, default=1e-8)
    m.add_argument("--probe", help="comma-separated feasible point for the sandwich report")
    m.add_argument("--minimizer", action="store_true",
                   help="assert that --probe is a global minimizer")
    m.add_argument("--format", choices=("json", "text"), default="json")
    m.add_argument("--jobs", type=int, default=1, help="relaxation orders solved concurrently")
    m.set_defaults(func=cmd_minimize)

    c = sub.add_parser("certify", help="verify a certificate against a problem")
    c.add_argument("problem")
    c.add_argument("certificate", help="certificate JSON, or a minimize report")
    c.add_argument("--tol", type=float, default=1e-5)
    c.set_defaults(func=cmd_certify)

    li = sub.add_parser("lift", help="rewrite inequalities as equalities with slacks")
    li.add_argument("problem")
    li.add_argument("--out")
    li.set_defaults(func=cmd_lift)

    e = sub.add_parser("export-sdpa", help="write the moment relaxation in SDPA sparse format")
    common(e)
    e.set_defaults(func=cmd_export_sdpa)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s: %(message)s")
    try:
        return args.func(args)
    except (OSError, ProblemFileError, PolynomialError, RelaxationError, BasisSizeError,
            CertificateError, UsageError) as exc:
        sys.stderr.write(f"perturbsos: error: {exc}\n")
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
