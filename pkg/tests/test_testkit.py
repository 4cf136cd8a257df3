import numpy as np
import pytest

from groupoidlin.averaging import ClosedFormMap, Perturbation, ZeroMap, reference_map
from groupoidlin.groupoid import (
    Cocycle,
    PolynomialField,
    TrivialAction,
    action_groupoid,
    adjoint_action,
    twisted_groupoid,
)
from groupoidlin.liegroup import LieGroup
from groupoidlin.testkit import (
    InsufficientData,
    bch_stability,
    c1_defect_estimate,
    contraction_constant,
    fit_convergence_order,
    gkr_case,
    random_triples,
    verify_bch_bounds,
    verify_cocycle_identity,
)


@pytest.fixture(scope="module")
def su2_twisted():
    G = LieGroup("su2")
    base = action_groupoid(adjoint_action(G), 0.2)
    twist = PolynomialField(np.array([[1, 0, 0], [0, 1, 1]]), np.array([[0.3, 0.0, 0.1], [0.0, -0.2, 0.2]]))
    return twisted_groupoid(base, Cocycle(G, twist))


def perturbed(chart, eps, seed=0):
    eta = Perturbation(chart, seed=seed)
    return ClosedFormMap(chart, lambda p: eps * eta(p))


def test_cocycle_identity_holds_for_any_map(su2_twisted):
    triples = random_triples(su2_twisted, 2000, seed=0)
    for phi in (ZeroMap(su2_twisted), perturbed(su2_twisted, 1e-2), perturbed(su2_twisted, 0.1, seed=3)):
        assert verify_cocycle_identity(phi, su2_twisted, triples) <= 1e-12


def test_cocycle_identity_detects_wrong_factor(su2_twisted):
    from groupoidlin.averaging import psi
    from groupoidlin.testkit import cocycle_factors

    phi = perturbed(su2_twisted, 0.05)
    p, q, r = random_triples(su2_twisted, 200, seed=1)
    _, A2, A3, psi_pq = cocycle_factors(phi, su2_twisted, p, q, r)
    G = su2_twisted.group
    # dropping the conjugation by psi(p, q) breaks the identity at second order
    unconjugated = psi(phi, su2_twisted.product(p, q), r)
    assert G.distance(unconjugated @ A2 @ A3, G.inverse(psi_pq)).max() > 1e-6


def test_cocycle_identity_trivial_for_homomorphism(su2_twisted):
    ref = reference_map(su2_twisted, ZeroMap(su2_twisted))
    triples = random_triples(su2_twisted, 500, seed=2)
    assert verify_cocycle_identity(ref, su2_twisted, triples) <= 1e-13


def test_gkr_exact_input():
    res = gkr_case("su2", 0.0)
    assert res.result.status == "converged" and res.result.steps == 0
    assert res.identity_distance < 1e-14


def test_gkr_abelian_one_step():
    for eps in (0.03, 0.05):
        res = gkr_case("u1", eps, resolution=17, sample_resolution=17)
        assert res.result.status == "converged" and res.result.steps == 1
        assert res.homomorphism_residual <= 1e-12


def test_gkr_su2():
    res = gkr_case("su2", 0.05)
    assert res.result.status == "converged"
    assert res.homomorphism_residual <= 1e-9
    assert res.identity_distance <= 0.1
    assert res.sample_size >= 1000
    with pytest.raises(ValueError):
        gkr_case("su2", 0.2)


def test_bch_second_argument_zero_and_abelian():
    G = LieGroup("su2")
    rng = np.random.default_rng(0)
    f = G.random_coords(rng, 100, 0.3)
    assert np.abs(G.log_coords(G.exp_coords(f) @ G.identity()) - f).max() < 1e-15
    assert verify_bch_bounds("u1", 10_000).max_residual < 1e-15


def test_bch_su2_constant_is_stable():
    cals, ratio = bch_stability("su2", 10_000)
    assert all(c.sample_size == 10_000 for c in cals)
    assert 0.1 < cals[0].constant < 10.0
    assert 1 / 1.5 <= ratio <= 1.5
    with pytest.raises(ValueError):
        verify_bch_bounds("su2", 100, norm_cap=0.6)


def test_order_fit_synthetic():
    quad = [0.05]
    for _ in range(4):
        quad.append(3 * quad[-1] ** 2)
    fit = fit_convergence_order(quad)
    assert fit.order == pytest.approx(2.0, abs=1e-6)
    assert fit.usable == 5 and fit.used[0] == 1
    lin = [0.1 * 0.5**k for k in range(8)]
    assert fit_convergence_order(lin).order == pytest.approx(1.0, abs=1e-6)
    with pytest.raises(InsufficientData):
        fit_convergence_order([1e-2, 1e-4])
    # values at the floor end the usable run
    fit = fit_convergence_order([1e-2, 1e-4, 1e-8, 1e-14, 1e-15], floor=1e-13)
    assert fit.usable == 3


def test_contraction_constant():
    assert contraction_constant([0.1, 0.003]) == pytest.approx(0.3)


def test_c1_estimate():
    G = LieGroup("su2")
    chart = action_groupoid(TrivialAction(G, 2), 0.2)
    zero = c1_defect_estimate(ZeroMap(chart), chart, size=16)
    assert zero.total < 1e-8
    small = c1_defect_estimate(perturbed(chart, 1e-3), chart, size=16).total
    large = c1_defect_estimate(perturbed(chart, 2e-3), chart, size=16).total
    assert small > 1e-5
    assert large / small == pytest.approx(2.0, rel=0.05)
    with pytest.raises(ValueError):
        c1_defect_estimate(ZeroMap(chart), chart, fd_step=0)
