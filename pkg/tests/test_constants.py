import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cage_homog.constants import (apriori_bounds, coercivity_constant, constant_report, form_matrix,
                                  form_matrix_eigenvalues, printed_discriminant, regularized_ellipticity_constant,
                                  closed_form_estimate)

pos = st.floats(1e-2, 1e2, allow_nan=False, allow_infinity=False)


def test_unit_triple():
    mu = form_matrix_eigenvalues(1, 1, 1)
    assert mu["mu_minus"] == pytest.approx((3 - math.sqrt(5)) / 2, rel=1e-14)
    assert mu["mu_plus"] == pytest.approx((3 + math.sqrt(5)) / 2, rel=1e-14)
    assert coercivity_constant(1, 1, 1) == pytest.approx(0.618034, abs=1e-6)


def test_trace_determinant_example():
    mu = form_matrix_eigenvalues(2, 3, 5)
    assert mu["mu_minus"] * mu["mu_plus"] == pytest.approx(36, rel=1e-12)
    assert mu["mu_minus"] + mu["mu_plus"] == pytest.approx(38, rel=1e-12)


def test_singular_limit():
    assert form_matrix_eigenvalues(1e-8, 1, 1)["mu_minus"] < 1e-15


def test_large_k3_limit():
    assert coercivity_constant(1, 1, 1e8) == pytest.approx(1e-8, rel=1e-6)


@settings(max_examples=300, deadline=None)
@given(pos, pos, pos)
def test_eigenvalues_match_dense_solver(k1, k2, k3):
    mu = form_matrix_eigenvalues(k1, k2, k3)
    ref = np.linalg.eigvalsh(np.array(form_matrix(k1, k2, k3)))
    assert 0 < mu["mu_minus"] <= mu["mu_plus"]
    assert mu["mu_plus"] == pytest.approx(ref[1], rel=1e-12)
    # the dense solver loses the small eigenvalue to cancellation; compare through the determinant
    assert mu["mu_minus"] * mu["mu_plus"] == pytest.approx((k1 * k2) ** 2, rel=1e-12)
    assert mu["mu_minus"] == pytest.approx(ref[0], rel=1e-6, abs=1e-10 * ref[1])


@settings(max_examples=200, deadline=None)
@given(pos, pos, pos, st.floats(1.0, 10.0))
def test_beta1_monotone_in_k1(k1, k2, k3, s):
    assert coercivity_constant(s * k1, k2, k3) >= coercivity_constant(k1, k2, k3) * (1 - 1e-14)


def test_printed_discriminant_only_agrees_when_k1_equals_k3():
    assert printed_discriminant(1.0, 2.0, 1.0) == pytest.approx(form_matrix_eigenvalues(1, 2, 1)["disc"])
    assert printed_discriminant(0.5, 1.0, 1.0) != pytest.approx(form_matrix_eigenvalues(0.5, 1, 1)["disc"])


def test_regularized_constant_reference_point():
    r = regularized_ellipticity_constant(1.0, 1.0, 1.0, 0.5)
    mu = (2.25 - math.sqrt(2.25**2 - 1)) / 2
    assert mu == pytest.approx(0.117218, abs=1e-6)
    assert r["C_prime"] == pytest.approx(math.sqrt(mu), rel=1e-12)
    assert r["C_prime"] == pytest.approx(0.342371, abs=1e-6)
    assert r["C_prime_printed"] == pytest.approx(closed_form_estimate(1, 1, 1, 0.5))
    assert r["discrepancy"] > 1e-9


def test_small_theta_is_linear():
    alpha, tau = 2.0, 3.0
    vals = [regularized_ellipticity_constant(alpha, tau, 1.0, t)["C_prime"] for t in (1e-3, 1e-4, 1e-5)]
    assert vals[0] / vals[1] == pytest.approx(10.0, rel=1e-5)
    assert vals[1] / vals[2] == pytest.approx(10.0, rel=1e-7)
    # slope alpha omega^2 / sqrt(alpha^2 + omega^4 tau^2), below the alpha/tau of the first branch
    assert vals[2] / 1e-5 == pytest.approx(alpha / math.sqrt(alpha**2 + tau**2), rel=1e-8)
    assert all(v < alpha * t / tau for v, t in zip(vals, (1e-3, 1e-4, 1e-5)))


@settings(max_examples=300, deadline=None)
@given(pos, pos, pos)
def test_square_root_branch_always_active(k1, k2, k3):
    # mu_+ >= k3^2 + k1^2 > k3^2, hence mu_- = k1^2 k2^2 / mu_+ < (k1 k2 / k3)^2
    assert math.sqrt(form_matrix_eigenvalues(k1, k2, k3)["mu_minus"]) < k1 * k2 / k3


def test_apriori_bounds():
    alpha, tau, omega, diam = 2.0, 1.5, 1.0, 3.0
    theta = tau * omega * diam / alpha
    assert apriori_bounds(alpha, tau, omega, theta, diam, 1.0)["h1"] == pytest.approx(1.0)
    assert apriori_bounds(alpha, tau, omega, theta, diam, 0.0) == {"gradient": 0.0, "h1": 0.0}


@pytest.mark.parametrize("bad", [(0, 1, 1), (1, -1, 1), (1, 1, float("nan"))])
def test_rejects_non_positive(bad):
    with pytest.raises(ValueError):
        form_matrix_eigenvalues(*bad)


def test_report_json_round_trip():
    import json

    rep = constant_report(1, 1, 1, 0.5, 2.0)
    d = json.loads(rep.to_json())
    assert d["beta1"] == pytest.approx(0.342371, abs=1e-6)
    assert d["mu_minus"] * d["mu_plus"] == pytest.approx(0.25, rel=1e-12)
