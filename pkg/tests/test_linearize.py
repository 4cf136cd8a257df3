import numpy as np
import pytest

from groupoidlin.averaging import ZeroMap, reference_map
from groupoidlin.groupoid import (
    Cocycle,
    PolynomialField,
    TrivialAction,
    WarpedAction,
    action_groupoid,
    adjoint_action,
    linear_action,
    standard_action,
    twisted_groupoid,
)
from groupoidlin.liegroup import LieGroup, haar_quadrature
from groupoidlin.linearize import (
    LinearPart,
    PerturbedLinearAction,
    action_samples,
    bochner_linearize,
    check_action_axioms,
    conjugacy_halving,
    induced_action,
    invert_trivialization,
    representation_check,
)

ROTATION = [[0, -1], [1, 0]]


class Offset:
    """An action shifted off its fixed point."""

    def __init__(self, inner, shift):
        self.inner, self.group, self.d, self.shift = inner, inner.group, inner.d, shift

    def __call__(self, g, x):
        return self.inner(g, x) + self.shift


def test_newton_on_projection_recovers_arrow():
    G = LieGroup("su2")
    chart = action_groupoid(adjoint_action(G), 0.2)
    g, _, x = action_samples(G, 3, 0.2, 10, seed=0)
    p = invert_trivialization(ZeroMap(chart), g, x)
    assert np.array_equal(p.x, x)
    assert G.distance(p.g, g).max() < 1e-14


def test_induced_action_of_twisted_u1_is_base_action():
    G = LieGroup("u1")
    act = WarpedAction(linear_action(G, ROTATION), 0.5)
    base = action_groupoid(act, 0.2)
    twist = PolynomialField(np.array([[1, 0], [0, 1], [1, 1]]), np.array([[0.3], [-0.2], [0.4]]))
    chart = twisted_groupoid(base, Cocycle(G, twist))
    a = induced_action(reference_map(chart, ZeroMap(chart)))
    g, h, x = action_samples(G, 2, 0.15, 32, seed=1)
    assert np.abs(a(g, x) - act(g, x)).max() <= 1e-8
    res = check_action_axioms(a, G, g, h, x)
    assert res.max <= 1e-8
    assert np.abs(a(G.identity((32,)), x) - x).max() < 1e-14


def test_action_axiom_residuals():
    G = LieGroup("so2")
    act = standard_action(G)
    g, h, x = action_samples(G, 2, 0.2, 64, seed=2)
    assert check_action_axioms(act, G, g, h, x).max <= 1e-10
    bad = check_action_axioms(Offset(act, np.array([1e-3, 0.0])), G, g, h, x)
    assert bad.fixed_point >= 5e-4 and bad.unit >= 5e-4
    assert check_action_axioms(act, G, g, h, np.zeros((64, 0))).max == 0


def test_linear_action_is_its_own_linearisation():
    G = LieGroup("su2")
    act = adjoint_action(G)
    model = bochner_linearize(act, haar_quadrature(G, 9), 0.2)
    g, h, x = action_samples(G, 3, 0.2, 32, seed=3)
    assert np.abs(model.h(x) - x).max() <= 1e-9
    assert np.abs(model.R(g) - G.adjoint_matrix(g)).max() <= 1e-9
    assert np.abs(model.R(G.identity()) - np.eye(3)).max() <= 1e-9
    assert representation_check(model, g, h) <= 1e-9


def test_so2_representation_exact():
    G = LieGroup("so2")
    model = bochner_linearize(standard_action(G), haar_quadrature(G, 9), 0.2)
    g, h, _ = action_samples(G, 2, 0.2, 64, seed=4)
    assert representation_check(model, g, h) <= 1e-12
    assert model.to_dict()["R_identity_error"] <= 1e-12


def test_warped_action_linearised_by_averaging():
    G = LieGroup("u1")
    act = WarpedAction(linear_action(G, ROTATION), 0.5)
    model = bochner_linearize(act, haar_quadrature(G, 17), 0.2)
    g, _, x = action_samples(G, 2, 0.15, 32, seed=5)
    assert model.conjugacy_residuals(g, x).max() <= 1e-10
    # the linearising map is tangent to the identity
    assert np.abs(model.h(1e-4 * np.eye(2)) - 1e-4 * np.eye(2)).max() <= 1e-8


@pytest.mark.parametrize("name,act", [("u1", "rot"), ("su2", "adj")])
def test_conjugacy_residual_halves_quadratically(name, act):
    G = LieGroup(name)
    lin = linear_action(G, ROTATION) if act == "rot" else adjoint_action(G)
    quad = haar_quadrature(G, 9)
    # the linear part of a linear action, recovered by finite differences
    linear = LinearPart(bochner_linearize(lin, quad, 0.2))
    fixture = PerturbedLinearAction(linear, 0.5)
    model = bochner_linearize(fixture, quad, 0.2)
    res = conjugacy_halving(model, 0.1)
    assert res.residual > 1e-6
    assert res.ratio == pytest.approx(4.0, rel=0.2)


def test_trivial_action_zero_dimensional_model():
    G = LieGroup("su2")
    model = bochner_linearize(TrivialAction(G, 0), haar_quadrature(G, 5), 1.0)
    g, h, _ = action_samples(G, 0, 1.0, 4)
    assert representation_check(model, g, h) == 0.0
    assert model.R(g).shape == (4, 0, 0)
