import json
import math
from dataclasses import replace
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, strategies as st

from helpers import AFFINE, DISK, HALFLINE, LINE, MOTZKIN, SQUARE, first_optimal, theta_exact
from perturbsos.cert import (Certificate, CertificateError, certificate_from_json, certificate_to_dict,
                             certificate_to_json, epsilon_for_error, extract_certificate, find_probe,
                             lifted_coincidence_check, sample_points, sandwich_report,
                             verify_certificate)
from perturbsos.poly import instance_from_strings, l1_norm, perturb
from perturbsos.relax import build_relaxation, lift_semialgebraic
from perturbsos.sdp import SolverOptions, Status, solve, to_standard_form


def certified(inst, eps, r_max=8, **kw):
    relax, sol = first_optimal(inst, eps, r_max, **kw)
    assert relax is not None, sol.summary()
    return relax, sol, extract_certificate(relax, sol)


@pytest.fixture(scope="module")
def line_cert():
    relax = build_relaxation(LINE, 0.01, 4)
    sol = solve(to_standard_form(relax))
    assert sol.optimal
    return relax, sol, extract_certificate(relax, sol)


@pytest.fixture(scope="module")
def motzkin_cert():
    return certified(MOTZKIN, 0.01)


@pytest.fixture(scope="module")
def halfline_cert():
    return certified(HALFLINE, 0.01)


# -- extraction ----------------------------------------------------------------------------

def test_square_is_its_own_certificate():
    relax = build_relaxation(SQUARE, 0.0, 1)
    sol = solve(to_standard_form(relax))
    cert = extract_certificate(relax, sol)
    assert abs(cert.gamma) <= 1e-7
    assert np.allclose(cert.gram, np.diag([0.0, 1.0]), atol=1e-6)
    assert cert.residual_linf <= 1e-7


def test_line_certificate(line_cert):
    _, _, cert = line_cert
    assert np.all(cert.lam >= 0)
    assert cert.residual_linf <= 1e-6
    width = 0.01 * float(theta_exact([1], 4))
    assert width == pytest.approx(0.01 * 2.708333, abs=1e-8)
    assert -1 - 1e-6 <= cert.gamma <= -1 + width + 1e-6


def test_motzkin_certificate(motzkin_cert):
    _, _, cert = motzkin_cert
    assert cert.gram_min_eig >= -1e-7 * (1 + np.trace(cert.gram))
    assert cert.residual_linf <= 1e-6
    assert verify_certificate(MOTZKIN, cert).passed


def test_extract_rejects_non_optimal():
    relax = build_relaxation(MOTZKIN, 0.01, 4)
    sol = solve(to_standard_form(relax), SolverOptions(max_iter=2))
    assert sol.status is not Status.OPTIMAL
    with pytest.raises(CertificateError):
        extract_certificate(relax, sol)


def test_tiny_negative_multiplier_is_clamped(line_cert):
    relax, sol, _ = line_cert
    bent = replace(sol, lam=np.array([-5e-9]))
    cert = extract_certificate(relax, bent)
    assert cert.lam[0] == 0.0 and cert.lambda_min == -5e-9
    far = replace(sol, lam=np.array([-1e-3]))
    assert extract_certificate(relax, far).lam[0] == -1e-3


# -- verification --------------------------------------------------------------------------

@pytest.mark.parametrize("inst", [LINE, AFFINE, MOTZKIN, HALFLINE, DISK])
def test_extracted_certificates_verify(inst):
    relax, _, cert = certified(inst, 0.01)
    res = verify_certificate(inst, cert, tol=1e-5)
    assert res.passed, res.failures
    f_eps = perturb(relax.instance.objective, relax.eps, relax.r)
    assert res.residual_linf <= 1e-5 * (1 + l1_norm(f_eps))
    assert res.residual_linf == cert.residual_linf


def test_raised_gamma_detected(line_cert):
    _, _, cert = line_cert
    res = verify_certificate(LINE, replace(cert, gamma=cert.gamma + 0.1))
    assert not res.passed
    assert res.witness == (0,)
    assert res.residual_linf == pytest.approx(0.1, abs=1e-6)


def test_negated_multiplier_detected(line_cert):
    _, _, cert = line_cert
    assert cert.lam[0] > 1e-3
    res = verify_certificate(LINE, replace(cert, lam=-cert.lam))
    assert not res.passed
    assert any("multiplier" in f for f in res.failures)


def test_perturbed_gram_entry_detected(motzkin_cert):
    _, _, cert = motzkin_cert
    Q = cert.gram.copy()
    Q[1, 2] += 1e-3
    Q[2, 1] += 1e-3
    res = verify_certificate(MOTZKIN, replace(cert, gram=Q))
    assert not res.passed
    e1, e2 = cert.basis[1], cert.basis[2]
    assert res.witness == tuple(a + b for a, b in zip(e1, e2))
    assert res.residual_linf == pytest.approx(2e-3, rel=1e-3)


def test_dimension_mismatch(line_cert):
    _, _, cert = line_cert
    with pytest.raises(CertificateError):
        verify_certificate(MOTZKIN, cert)
    with pytest.raises(CertificateError):
        verify_certificate(LINE, replace(cert, gram=cert.gram[:-1, :-1]))


def test_single_multiplier_mode():
    two = instance_from_strings("x + y", ["x", "y"], ["x^2 - 1", "y^2 - 1"])
    relax, _, cert = certified(two, 0.01, single_lambda=True)
    assert cert.lam.shape == (1,)
    assert verify_certificate(two, cert).passed


# -- error budget --------------------------------------------------------------------------

def test_epsilon_for_error_examples():
    assert epsilon_for_error(0.1, 1, 2) == pytest.approx(0.0183940, abs=1e-7)
    assert epsilon_for_error(0.1, 1, 2) == pytest.approx(0.1 / (2 * math.e), rel=1e-15)
    assert epsilon_for_error(0.3, 0, 3) == pytest.approx(0.1, rel=1e-15)
    assert epsilon_for_error(1, 0, 1) == 1.0


@pytest.mark.parametrize("args", [(0, 1, 1), (-1, 1, 1), (1, -1, 1), (1, 1, 0)])
def test_epsilon_for_error_rejects(args):
    with pytest.raises(ValueError):
        epsilon_for_error(*args)


@given(st.floats(1e-6, 10), st.floats(0, 3), st.integers(1, 10))
def test_epsilon_budget_spends_eta(eta, rho, n):
    # the perturbation at any point of the rho-box is at most eta
    eps = epsilon_for_error(eta, rho, n)
    assert eps * n * math.exp(rho ** 2) == pytest.approx(eta, rel=1e-12)


# -- sandwich ------------------------------------------------------------------------------

def test_sandwich_line(line_cert):
    relax, sol, _ = line_cert
    rep = sandwich_report(relax, sol, [-1.0], minimizer=True)
    assert rep.predicted_width == pytest.approx(0.0270833, abs=1e-7)
    assert rep.theta_at_probe == pytest.approx(float(theta_exact([1], 4)), rel=1e-15)
    assert rep.feasible_probe and rep.consistent
    assert rep.upper_probe == pytest.approx(-1 + rep.predicted_width, rel=1e-14)
    assert rep.lower_bound <= rep.upper_probe
    assert rep.bound_gap == rep.upper_probe - rep.lower_bound


def test_sandwich_affine():
    relax, sol, _ = certified(AFFINE, 0.01)
    rep = sandwich_report(relax, sol, [0.5, 0.5], minimizer=True)
    expected = float(Fraction(1, 100) * theta_exact([Fraction(1, 2)] * 2, relax.r))
    assert rep.predicted_width == pytest.approx(expected, rel=1e-14)
    assert rep.predicted_width <= 0.01 * 2 * math.exp(0.25)
    assert 0.5 - 1e-5 <= rep.lower_bound <= 0.5 + expected + 1e-5


@pytest.mark.parametrize("eps", [0.01, 0.1])
def test_sandwich_origin_width_is_eps_n(eps):
    relax = build_relaxation(SQUARE, eps, 2)
    sol = solve(to_standard_form(relax))
    rep = sandwich_report(relax, sol, [0.0], minimizer=True)
    assert rep.predicted_width == eps * 1


def test_sandwich_infeasible_probe_reported(line_cert):
    relax, sol, _ = line_cert
    rep = sandwich_report(relax, sol, [0.5])
    assert not rep.feasible_probe and rep.consistent is None
    assert rep.probe_violation == pytest.approx(0.75)


def test_sandwich_heuristic_probe(line_cert):
    relax, sol, _ = line_cert
    rep = sandwich_report(relax, sol)
    assert rep.heuristic_probe and rep.feasible_probe and rep.consistent
    assert rep.probe[0] == pytest.approx(-1.0, abs=1e-6)
    assert rep.predicted_width is None


def test_sandwich_lifted_probe(halfline_cert):
    relax, sol, _ = halfline_cert
    lift = lift_semialgebraic(HALFLINE)
    rep = sandwich_report(relax, sol, [0.0], lift=lift, minimizer=True)
    assert rep.predicted_width == pytest.approx(0.01 * 2)
    assert rep.consistent


def test_find_probe():
    x = find_probe(AFFINE)
    assert x is not None and np.allclose(x, [0.5, 0.5], atol=1e-4)
    assert find_probe(instance_from_strings("x", ["x"], ["x^2 + 1"]), restarts=3) is None


# -- lifted coincidence --------------------------------------------------------------------

def test_coincidence_halfline(halfline_cert):
    _, _, cert = halfline_cert
    rep = lifted_coincidence_check(HALFLINE, cert, [[0.0], [0.5], [1.0], [2.0]])
    assert rep.max_deviation <= 1e-6
    assert len(rep.deviations) == 4 and not rep.split_checked


def test_coincidence_default_samples(halfline_cert):
    _, _, cert = halfline_cert
    rep = lifted_coincidence_check(HALFLINE, cert)
    assert len(rep.points) == 16 and all(p[0] >= 0 for p in rep.points)
    assert rep.max_deviation <= 1e-6


def test_coincidence_disk():
    _, _, cert = certified(DISK, 0.01)
    pts = sample_points(DISK, 16)
    assert np.all(1 - (pts ** 2).sum(axis=1) >= -1e-9)
    assert lifted_coincidence_check(DISK, cert, pts).max_deviation <= 1e-6


def test_coincidence_tracks_gram_corruption(halfline_cert):
    _, _, cert = halfline_cert
    i, j, delta = 1, 2, 1e-4
    Q = cert.gram.copy()
    Q[i, j] += delta
    Q[j, i] += delta
    bad = replace(cert, gram=Q)
    pts = [[0.5], [1.0], [1.7]]
    rep = lifted_coincidence_check(HALFLINE, bad, pts)
    good = lifted_coincidence_check(HALFLINE, cert, pts)
    lift = lift_semialgebraic(HALFLINE)
    for p, dev, base in zip(pts, rep.deviations, good.deviations):
        xz = lift.lift_point(np.array(p))
        vi = np.prod(xz ** np.array(cert.basis[i]))
        vj = np.prod(xz ** np.array(cert.basis[j]))
        assert dev == pytest.approx(2 * delta * abs(vi * vj), abs=base + 1e-12)


def test_coincidence_without_inequalities(motzkin_cert):
    _, _, cert = motzkin_cert
    pts = np.array([[0.0, 0.0], [1.0, -1.0], [0.3, 1.2]])
    rep = lifted_coincidence_check(MOTZKIN, cert, pts)
    nmono = len({tuple(a + b for a, b in zip(e1, e2)) for e1 in cert.basis for e2 in cert.basis})
    for p, dev in zip(pts, rep.deviations):
        scale = max(np.prod(np.abs(p) ** np.array(e)) for e in cert.basis) ** 2
        assert dev <= cert.residual_linf * nmono * max(scale, 1.0) + 1e-12


def test_coincidence_rejects_outside_points(halfline_cert):
    _, _, cert = halfline_cert
    with pytest.raises(CertificateError):
        lifted_coincidence_check(HALFLINE, cert, [[-0.5]])
    with pytest.raises(CertificateError):
        lifted_coincidence_check(LINE, cert, [[1.0]])


# -- serialization -------------------------------------------------------------------------

def test_json_round_trip(motzkin_cert):
    _, _, cert = motzkin_cert
    text = certificate_to_json(cert)
    data = json.loads(text)
    assert list(data) == ["gamma", "lambda", "gram", "eps", "r", "basis", "residual_linf",
                          "gram_min_eig"]
    assert list(data["gram"]) == ["dim", "lower"]
    back = certificate_from_json(text)
    assert back.gamma == cert.gamma and back.eps == cert.eps and back.r == cert.r
    assert np.array_equal(back.gram, cert.gram)
    assert back.basis == cert.basis
    assert certificate_to_json(back) == text
    assert verify_certificate(MOTZKIN, back).residual_linf == cert.residual_linf


def test_json_lower_triangle_row_major(line_cert):
    _, _, cert = line_cert
    d = certificate_to_dict(cert)
    Q = cert.gram
    assert d["gram"]["lower"][:3] == [Q[0, 0], Q[1, 0], Q[1, 1]]


@given(st.lists(st.floats(allow_nan=False, allow_infinity=False), min_size=6, max_size=6),
       st.floats(allow_nan=False, allow_infinity=False))
def test_json_lossless(entries, gamma):
    Q = np.zeros((3, 3))
    Q[np.tril_indices(3)] = entries
    Q = Q + np.tril(Q, -1).T
    cert = Certificate(gamma, np.array([gamma]), Q, 0.01, 1, ((0,), (1,), (2,)), 0.0, 0.0, gamma)
    back = certificate_from_json(certificate_to_json(cert))
    assert back.gamma == gamma and np.array_equal(back.gram, Q)


@pytest.mark.parametrize("text", [
    "not json", "[]", "{}",
    '{"gamma": 0, "lambda": [], "gram": {"dim": 2, "lower": [1, 0]}, "eps": 0, "r": 1,'
    ' "basis": [[0], [1]], "residual_linf": 0, "gram_min_eig": 0}',
    '{"gamma": "abc", "lambda": [], "gram": {"dim": 1, "lower": [1]}, "eps": 0, "r": 1,'
    ' "basis": [[0]], "residual_linf": 0, "gram_min_eig": 0}',
    '{"gamma": 0, "lambda": [], "gram": {"dim": 1, "lower": [1]}, "eps": 0, "r": 1,'
    ' "basis": [[0], [1]], "residual_linf": 0, "gram_min_eig": 0}',
])
def test_malformed_json(text):
    with pytest.raises(CertificateError):
        certificate_from_json(text)
