import math

import numpy as np
import pytest

from lyapnet.cert import (GlobalBudget, LayerBudget, PlanningPolicy, build_cascade_matrix, certify,
                          check_planning_constraints, comparison_matrix, conic_from_slopes, corollary_bound,
                          is_positive_definite, is_quasi_dominant, plan_parameters, residual_effective_budget,
                          slopes_from_budget, spectral_cap, table_bound)
from lyapnet.errors import (BudgetError, ComplexSlopesError, DegenerateConeError, PlanningError, SizeError)
from oracles import lp_quasi_dominance

FORWARD = [(0.92, 0.27), (0.78, 0.32), (1.08, 0.23)]
G = GlobalBudget(1.0, 0.24)


@pytest.mark.parametrize("delta,nu,cap", [(0.92, 0.27, 1.768), (0.78, 0.32, 2.464), (1.08, 0.23, 1.283)])
def test_published_caps(delta, nu, cap):
    assert spectral_cap(LayerBudget(delta, nu)) == pytest.approx(cap, abs=0.002)


def test_cap_collapses_without_nu():
    assert spectral_cap(LayerBudget(1.0, 0.0)) == 1.0


def test_cap_rejects_nonpositive_delta():
    with pytest.raises(BudgetError):
        spectral_cap(LayerBudget(0.0, 0.1))


def test_cascade_matrix_follows_formula():
    negA = -build_cascade_matrix(FORWARD, G)
    # nu1 - nu, delta1 + nu2, delta2 + nu3, delta3 - delta
    np.testing.assert_allclose(np.diag(negA), [0.03, 1.24, 1.01, 0.08], atol=1e-12)
    np.testing.assert_array_equal(np.diag(negA, 1), [-0.5] * 3)
    assert negA[0, 3] == negA[3, 0] == 0.5
    assert np.linalg.norm(negA) == pytest.approx(2.136586, abs=1e-6)


def test_cascade_matrix_zero_budgets_pattern():
    A = build_cascade_matrix([(0, 0)] * 4, GlobalBudget(0, 0))
    expected = np.zeros((5, 5))
    for i in range(4):
        expected[i, i + 1] = expected[i + 1, i] = 0.5
    expected[0, 4] = expected[4, 0] = -0.5
    np.testing.assert_array_equal(A, expected)


def test_cascade_matrix_needs_three_layers():
    with pytest.raises(SizeError):
        build_cascade_matrix(FORWARD[:2], G)


def test_comparison_matrix():
    np.testing.assert_array_equal(comparison_matrix(np.eye(3)), np.eye(3))
    np.testing.assert_array_equal(comparison_matrix([[2, -3], [1, 2]]), [[2, -3], [-1, 2]])
    M = np.random.default_rng(0).standard_normal((4, 4))
    C = comparison_matrix(M)
    for i in range(4):
        for j in range(4):
            assert C[i, j] == (M[i, j] if i == j else -abs(M[i, j]))


def test_quasi_dominance_analytic_cases():
    tri = np.array([[3.0, -1, 0], [-1, 3, -1], [0, -1, 3]])
    verdict = is_quasi_dominant(tri)
    assert verdict.passed
    assert lp_quasi_dominance(tri) > 0
    # P = I already works for a strictly diagonally dominant matrix
    assert np.all(np.diag(tri) > np.abs(tri).sum(axis=1) - np.diag(tri))
    bad = np.array([[0.1, 1.0], [1.0, 0.1]])
    assert not is_quasi_dominant(bad).passed
    assert lp_quasi_dominance(bad) <= 0


def test_witness_is_a_dominant_scaling():
    M = np.array([[1.0, -2.0, 0.0], [0.1, 1.0, 0.3], [0.0, 0.2, 0.5]])
    v = is_quasi_dominant(M)
    assert v.passed
    p = v.witness
    assert np.all(p > 0)
    assert np.all(np.diag(M) * p > (np.abs(M) * p).sum(axis=1) - np.abs(np.diag(M)) * p)


def _random_matrix(rng, symmetric):
    n = int(rng.choice([3, 4]))
    M = rng.uniform(-1, 1, (n, n)) * rng.uniform(0.2, 1.5)
    if symmetric:
        M = 0.5 * (M + M.T)
    np.fill_diagonal(M, rng.uniform(-0.2, 2.0, n))
    return M


@pytest.mark.parametrize("symmetric", [True, False])
def test_quasi_dominance_matches_lp_oracle(symmetric):
    rng = np.random.default_rng(42 + symmetric)
    checked = passed = 0
    while checked < 1000:
        M = _random_matrix(rng, symmetric)
        margin = lp_quasi_dominance(M)
        if abs(margin) < 1e-9:
            continue
        verdict = is_quasi_dominant(M)
        assert verdict.passed == (margin > 0), M
        if verdict.passed and symmetric:
            assert is_positive_definite(M)
        checked += 1
        passed += verdict.passed
    assert 100 < passed < 900  # both outcomes well represented


def test_published_cascade_matrix_is_not_quasi_dominant():
    negA = -build_cascade_matrix(FORWARD, G)
    assert lp_quasi_dominance(negA) < 0
    assert not is_quasi_dominant(negA).passed
    assert not is_positive_definite(negA)


def test_planning_constraint_examples():
    assert check_planning_constraints(FORWARD, G) == []
    names = [v.constraint for v in check_planning_constraints(FORWARD, GlobalBudget(1.2, 0.24))]
    assert names == ["delta_n > delta"]
    names = [v.constraint for v in check_planning_constraints([(0.6, 0.5), (0.9, 0.2), (1.2, 0.2)], G)]
    assert "delta*nu <= 0.25" in names


def test_certify_forward_configuration():
    cert = certify(FORWARD, G)
    np.testing.assert_allclose(cert.caps, [1.768, 2.464, 1.283], atol=0.002)
    assert cert.coefficient == pytest.approx(1.48, abs=1e-12)
    assert cert.status == "pass"
    assert certify(FORWARD, G, strict=True).status == "fail"


def test_certify_nonpositive_delta_fails_with_name():
    cert = certify([(0.0, 0.3), (0.9, 0.2), (1.2, 0.2)], G)
    assert cert.status == "fail"
    assert any(v.constraint == "delta_l > 0" and v.layer == 1 for v in cert.planning_violations)
    assert cert.caps[0] is None


def test_certify_caps_match_individual_calls():
    rng = np.random.default_rng(0)
    for _ in range(200):
        n = int(rng.integers(3, 7))
        budgets = [LayerBudget(rng.uniform(0.05, 2), rng.uniform(-0.5, 0.5)) for _ in range(n)]
        cert = certify(budgets, GlobalBudget(rng.uniform(0.1, 1), rng.uniform(0.01, 0.2)))
        assert cert.caps == [1 / b.delta ** 2 + 2 * abs(b.nu) / b.delta for b in budgets]


def test_corollary_bound_examples():
    assert corollary_bound(GlobalBudget(1.0, 1e-15), 0.5) == pytest.approx(0.5, abs=1e-12)
    assert corollary_bound(GlobalBudget(0.89, 0.28), 0.1) == pytest.approx(0.13754, abs=1e-5)
    g = GlobalBudget(0.95, 0.26)
    assert corollary_bound(g, 0.4) == pytest.approx(2 * corollary_bound(g, 0.2), rel=1e-15)


@pytest.mark.parametrize("delta,nu,eps,value", [(0.89, 0.28, 0.1, 0.435), (0.95, 0.26, 0.2, 0.576)])
def test_table_bound_examples(delta, nu, eps, value):
    assert table_bound(GlobalBudget(delta, nu), eps) == pytest.approx(value, abs=0.002)


def test_bounds_need_positive_budget():
    for g in (GlobalBudget(0.0, 0.2), GlobalBudget(1.0, 0.0)):
        with pytest.raises(BudgetError):
            table_bound(g, 0.1)
    with pytest.raises(BudgetError):
        corollary_bound(G, -0.1)


@pytest.mark.parametrize("delta,nu,expected", [(0.2, 0.8, 0.0), (0.351, 0.711, 0.20805), (0.37, 0.66, 0.11538)])
def test_residual_effective_budget_examples(delta, nu, expected):
    out = residual_effective_budget(LayerBudget(delta, nu))
    assert out.delta == out.nu == pytest.approx(expected, abs=1e-5)


def test_residual_effective_budget_random():
    rng = np.random.default_rng(7)
    for _ in range(100):
        d = rng.uniform(0.01, 0.49)
        v = rng.uniform(1 - d, 0.25 / d)
        out = residual_effective_budget(LayerBudget(d, v))
        assert out.delta == out.nu == pytest.approx((v + d - 1) / (1 - 2 * d), rel=1e-14, abs=1e-15)


@pytest.mark.parametrize("b", [LayerBudget(0.6, 0.5), LayerBudget(0.3, 0.5), LayerBudget(0.4, 0.7)])
def test_residual_effective_budget_preconditions(b):
    with pytest.raises(BudgetError):
        residual_effective_budget(b)


def test_conic_examples():
    assert conic_from_slopes(1, 1) == (0.5, 0.5)
    assert conic_from_slopes(0.5, 1.5) == (0.5, 0.375)
    assert conic_from_slopes(0, 3)[1] == 0
    with pytest.raises(DegenerateConeError):
        conic_from_slopes(1, -1)


def test_slopes_examples():
    assert slopes_from_budget(0.5, 0.5) == pytest.approx((1.0, 1.0), abs=1e-12)
    assert slopes_from_budget(0.5, 0.375) == pytest.approx((0.5, 1.5), abs=1e-12)
    with pytest.raises(ComplexSlopesError):
        slopes_from_budget(1.0, 0.3)
    with pytest.raises(DegenerateConeError):
        slopes_from_budget(0.0, 0.1)


def test_conic_round_trip():
    rng = np.random.default_rng(3)
    n = 0
    while n < 1000:
        a, b = sorted(rng.uniform(-3, 3, 2))
        if b - a < 1e-3 or abs(a + b) < 0.1:
            continue
        a2, b2 = slopes_from_budget(*conic_from_slopes(a, b))
        assert abs(a2 - a) <= 1e-10 * max(1, abs(a)) and abs(b2 - b) <= 1e-10 * max(1, abs(b))
        d, v = rng.uniform(0.1, 3), rng.uniform(-1, 1)
        if d * v <= 0.25:
            d2, v2 = conic_from_slopes(*slopes_from_budget(d, v))
            assert d2 == pytest.approx(d, abs=1e-10) and v2 == pytest.approx(v, abs=1e-10)
        n += 1


def test_plan_explicit_forward_budgets():
    out = plan_parameters(3, G, PlanningPolicy("explicit", budgets=FORWARD))
    np.testing.assert_allclose([spectral_cap(b) for b in out], [1.768, 2.464, 1.283], atol=0.002)


@pytest.mark.parametrize("n", [3, 4, 6, 10])
def test_plan_default_is_admissible(n):
    assert check_planning_constraints(plan_parameters(n, G), G) == []


def test_plan_infeasible_product():
    with pytest.raises(PlanningError, match="0.25"):
        plan_parameters(3, GlobalBudget(10.0, 10.0))


def test_plan_explicit_names_violation():
    with pytest.raises(PlanningError, match="delta_n > delta"):
        plan_parameters(3, GlobalBudget(1.2, 0.2), PlanningPolicy("explicit", budgets=FORWARD))


def test_planning_constraints_guarantee_nothing_about_quasi_dominance():
    # admissible plan, yet the cascade matrix fails the dominance test
    budgets = plan_parameters(3, G)
    assert not is_quasi_dominant(-build_cascade_matrix(budgets, G)).passed
    assert math.isfinite(certify(budgets, G).coefficient)
