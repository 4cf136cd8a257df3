import numpy as np
import pytest

from groupoidlin.averaging import ZeroMap, defect, reference_map, sample_composable_pairs
from groupoidlin.groupoid import (
    Arrows,
    BaseBoxError,
    Cocycle,
    CompositionError,
    MutatedGroupoid,
    PolynomialField,
    TrivialAction,
    WarpedAction,
    action_groupoid,
    adjoint_action,
    ball_sample,
    check_axioms,
    fiber_t,
    linear_action,
    make_action,
    orbit,
    sample_triples,
    saturate,
    standard_action,
    twisted_groupoid,
)
from groupoidlin.liegroup import LieGroup, haar_quadrature

ROTATION = [[0, -1], [1, 0]]


def twist_field(coef):
    return PolynomialField(np.array([[1, 0], [0, 1]]), np.asarray(coef, dtype=float))


@pytest.fixture
def su2():
    return LieGroup("su2")


@pytest.fixture
def u1():
    return LieGroup("u1")


def test_trivial_action_product_is_group_product(su2):
    chart = action_groupoid(TrivialAction(su2, 2), 0.2)
    rng = np.random.default_rng(0)
    x = rng.uniform(-0.2, 0.2, (5, 2))
    g, h = su2.random(rng, 5), su2.random(rng, 5)
    pq = chart.product(chart.arrows(g, x), chart.arrows(h, x))
    assert np.array_equal(pq.x, x)
    assert np.abs(pq.g - g @ h).max() < 1e-15
    rep = check_axioms(chart, 128)
    assert rep.passed and max(rep.residuals.values()) < 1e-12


def test_so2_rotation_chart_axioms():
    G = LieGroup("so2")
    chart = action_groupoid(standard_action(G), 0.2)
    rep = check_axioms(chart, 256)
    assert max(rep.residuals.values()) <= 1e-12


def test_adjoint_action_matches_group_adjoint(su2):
    act = adjoint_action(su2)
    rng = np.random.default_rng(1)
    g = su2.random(rng, 6)
    v = rng.normal(size=(6, 3)) * 0.1
    assert np.abs(act(g, v) - su2.adjoint_coords(g, v)).max() < 1e-15
    assert check_axioms(action_groupoid(act, 0.2), 128).passed


def test_linear_action_rejects_non_representation(u1):
    with pytest.raises(ValueError):
        linear_action(u1, [[0, -0.5], [0.5, 0]])
    with pytest.raises(ValueError):
        linear_action(LieGroup("su2"), ROTATION)


def test_make_action_checks_dimension(u1):
    with pytest.raises(ValueError):
        make_action(u1, 3, {"type": "linear", "generator": ROTATION})
    with pytest.raises(ValueError):
        make_action(u1, 2, {"type": "spiral"})


def test_warped_action_is_an_action(u1):
    act = WarpedAction(linear_action(u1, ROTATION), 0.5)
    chart = action_groupoid(act, 0.2)
    rep = check_axioms(chart, 256)
    assert rep.passed
    x = np.array([[0.1, 0.05]])
    assert np.abs(act.unwarp(act.warp(x)) - x).max() < 1e-16


def test_action_box_check(u1):
    act = WarpedAction(linear_action(u1, ROTATION), 40.0)
    with pytest.raises(BaseBoxError):
        action_groupoid(act, 0.2)


def test_twist_with_unit_cocycle_is_base(su2):
    base = action_groupoid(adjoint_action(su2), 0.2)
    zero = PolynomialField(np.zeros((0, 3), dtype=int), np.zeros((0, 3)))
    chart = twisted_groupoid(base, Cocycle(su2, zero))
    rng = np.random.default_rng(2)
    p, q, _ = sample_triples(chart, 32, rng)
    assert np.array_equal(chart.product(p, q).g, base.product(p, q).g)


def test_twisted_u1_naive_defect(u1):
    """With ``c(x) = exp(i x_1)`` the naive projection has a closed-form defect."""
    base = action_groupoid(TrivialAction(u1, 2), 0.2)
    chart = twisted_groupoid(base, Cocycle(u1, twist_field([[u1.lam], [0.0]])))
    pts = ball_sample(2, 0.2, 5)
    pairs = sample_composable_pairs(chart, pts, 5, seed=0)
    naive = defect(ZeroMap(chart), pairs).sup
    # trivial action: psi(p, q) = g c(x) g^-1, so the defect is the scaled sup of |x_1|
    assert naive == pytest.approx(u1.lam * np.abs(pts[:, 0]).max(), rel=1e-12)
    assert naive > 0
    ref = defect(reference_map(chart, ZeroMap(chart)), pairs).sup
    assert ref < 1e-15


def test_transported_homomorphism_on_rotation_twist(u1):
    base = action_groupoid(linear_action(u1, ROTATION), 0.2)
    chart = twisted_groupoid(base, Cocycle(u1, twist_field([[0.3], [-0.2]])))
    pairs = sample_composable_pairs(chart, ball_sample(2, 0.2, 4), 9, seed=0)
    assert defect(ZeroMap(chart), pairs).sup > 1e-2
    assert defect(reference_map(chart, ZeroMap(chart)), pairs).sup < 1e-14
    assert check_axioms(chart, 256).passed


def test_mutated_product_fails_associativity(su2):
    base = action_groupoid(TrivialAction(su2, 2), 0.2)
    chart = MutatedGroupoid(base, su2.exp_coords(np.array([0.05, -0.03, 0.02])))
    rep = check_axioms(chart, 256)
    assert not rep.passed
    assert rep.residuals["associativity"] > 1e-3
    assert "associativity" in rep.failures


def test_unit_law_with_identity_group_part(su2):
    chart = action_groupoid(adjoint_action(su2), 0.2)
    x = np.random.default_rng(3).uniform(-0.1, 0.1, (8, 3))
    p = chart.arrows(su2.identity((8,)), x)
    u = chart.unit(x)
    assert np.array_equal(chart.product(u, p).g, p.g)
    assert np.array_equal(chart.product(p, u).x, p.x)


def test_product_rejects_non_composable(su2):
    chart = action_groupoid(TrivialAction(su2, 2), 0.2)
    a = chart.arrows(su2.identity((1,)), np.array([[0.1, 0.0]]))
    b = chart.arrows(su2.identity((1,)), np.array([[0.0, 0.1]]))
    with pytest.raises(CompositionError):
        chart.product(a, b)


def test_orbits():
    G = LieGroup("so2")
    chart = action_groupoid(standard_action(G), 0.2)
    assert np.abs(orbit(chart, np.zeros(2), 8)).max() == 0
    pts = orbit(chart, np.array([0.15, 0.0]), 16)
    assert np.abs(np.linalg.norm(pts, axis=-1) - 0.15).max() < 1e-9
    triv = action_groupoid(TrivialAction(LieGroup("su2"), 2), 0.2)
    assert np.array_equal(orbit(triv, np.array([0.1, 0.1]), 3), np.broadcast_to([0.1, 0.1], (len(orbit(triv, np.zeros(2), 3)), 2)))


def test_saturation_radius():
    su2 = LieGroup("su2")
    assert saturate(action_groupoid(TrivialAction(su2, 2), 0.2), 0.1, 5) == pytest.approx(0.1)
    assert saturate(action_groupoid(adjoint_action(su2), 0.2), 0.1, 5) == pytest.approx(0.1, abs=1e-12)
    # a non-isometric linear action of the circle: radius <= max singular value * delta
    u1 = LieGroup("u1")
    P = np.array([[1.0, 0.3], [0.0, 1.0]])
    A = P @ np.array(ROTATION, dtype=float) @ np.linalg.inv(P)
    act = linear_action(u1, A)
    chart = action_groupoid(act, 0.2, safety=3.0)
    kappa = max(np.linalg.norm(act.matrix(g), 2) for g in haar_quadrature(u1, 64).nodes)
    r = saturate(chart, 0.1, 32)
    assert 0.1 < r <= kappa * 0.1 + 1e-12


def test_saturation_outside_box_raises():
    u1 = LieGroup("u1")
    P = np.array([[1.0, 0.3], [0.0, 1.0]])
    act = linear_action(u1, P @ np.array(ROTATION, dtype=float) @ np.linalg.inv(P))
    chart = action_groupoid(act, 0.2, safety=3.0)
    with pytest.raises(BaseBoxError):
        saturate(chart, 0.2, 16)
    with pytest.raises(ValueError):
        saturate(chart, 0.5, 5)


def test_fibers(su2):
    chart = action_groupoid(adjoint_action(su2), 0.2)
    quad = haar_quadrature(su2, 5)
    arrows, w = fiber_t(chart, np.zeros(3), quad)
    assert np.array_equal(arrows.g, quad.nodes) and np.array_equal(arrows.x, np.zeros((len(quad), 3)))
    y = np.array([0.05, -0.1, 0.02])
    arrows, _ = fiber_t(chart, y, quad)
    assert np.abs(chart.target(arrows) - y).max() <= 1e-10
    triv = action_groupoid(TrivialAction(su2, 2), 0.2)
    arrows, _ = fiber_t(triv, np.array([0.1, 0.0]), quad)
    assert np.array_equal(arrows.g, quad.nodes)


def test_polynomial_field_roundtrip():
    f = PolynomialField(np.array([[1, 0], [1, 1]]), np.array([[0.1, 0.2, 0.3], [0.4, 0.5, 0.6]]))
    g = PolynomialField.from_dict(f.to_dict(), 2, 3)
    x = np.array([[0.1, -0.2]])
    assert np.array_equal(f(x), g(x))
    assert f.vanishes_at_origin
    with pytest.raises(ValueError):
        PolynomialField.from_dict(f.to_dict(), 3, 3)


def test_arrows_zero_dimensional_base(su2):
    a = Arrows(su2.identity((2, 3)), np.zeros((2, 3, 0)))
    assert a.reshape(-1).x.shape == (6, 0)
