"""From a homomorphism to a linear action.

Given a homomorphism ``phi`` with ``phi = id`` over the fixed point, the map
``p -> (phi(p), s(p))`` identifies the groupoid with an action groupoid.  Its
inverse ``theta`` yields the induced action ``a(g, x) = t(theta(g, x))``,
which Bochner averaging then conjugates to its linear part.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .averaging import CandidateMap
from .groupoid import Arrows, GroupoidChart
from .liegroup import GroupQuadrature, LieGroup


class NewtonFailure(RuntimeError):
    """Newton inversion of ``(phi, s)`` did not converge."""


def invert_trivialization(phi: CandidateMap, g, x, tol=1e-10, max_iter=50, fd_step=1e-6) -> Arrows:
    """Arrows ``p`` with ``s(p) = x`` and ``phi(p) = g``.

    Newton iteration on the group part in left-trivialised algebra
    coordinates, with a central-difference Jacobian and initial guess ``g``.
    Iterates until the Newton update has norm ``<= tol``.
    """
    G = phi.group
    g = np.asarray(g)
    x = np.asarray(x, dtype=float)
    shape = np.broadcast_shapes(g.shape[:-2], x.shape[:-1])
    g = np.broadcast_to(g, shape + g.shape[-2:]).reshape((-1,) + g.shape[-2:])
    x = np.broadcast_to(x, shape + (phi.chart.d,)).reshape(len(g), phi.chart.d)
    ginv = G.inverse(g)
    k = g.copy()
    eye = np.eye(G.dim)

    def resid(kk):
        return G.log_coords(ginv @ phi(Arrows(kk, x)))

    for _ in range(max_iter):
        r = resid(k)
        cols = []
        for e in eye:
            plus = resid(G.multiply(k, G.exp_coords(fd_step * e)))
            minus = resid(G.multiply(k, G.exp_coords(-fd_step * e)))
            cols.append((plus - minus) / (2 * fd_step))
        J = np.stack(cols, axis=-1)
        delta = -np.linalg.solve(J, r[..., None])[..., 0]
        k = G.multiply(k, G.exp_coords(delta))
        if np.abs(delta).max(initial=0.0) <= tol:
            return Arrows(k.reshape(shape + k.shape[-2:]), x.reshape(shape + (phi.chart.d,)))
    raise NewtonFailure(
        f"Newton inversion did not converge in {max_iter} iterations (last step {np.abs(delta).max():.3g}); "
        "the base neighbourhood is probably too large"
    )


class InducedAction:
    """``a(g, x) = t(theta(g, x))`` for a homomorphism ``phi``."""

    def __init__(self, phi: CandidateMap, chart: GroupoidChart | None = None):
        self.phi = phi
        self.chart = phi.chart if chart is None else chart
        self.group = self.chart.group
        self.d = self.chart.d

    def __call__(self, g, x):
        return self.chart.target(invert_trivialization(self.phi, g, x))


def induced_action(phi: CandidateMap, chart: GroupoidChart | None = None) -> InducedAction:
    return InducedAction(phi, chart)


@dataclass(frozen=True)
class ActionResiduals:
    composition: float
    unit: float
    fixed_point: float

    @property
    def max(self):
        return max(self.composition, self.unit, self.fixed_point)

    def to_dict(self):
        return {"composition": self.composition, "unit": self.unit, "fixed_point": self.fixed_point}


def action_samples(group: LieGroup, d: int, radius: float, size: int, seed: int = 0):
    """Seeded ``(g, h, x)`` with ``x`` uniform in the ball of the given radius."""
    rng = np.random.default_rng(seed)
    g = group.random(rng, size)
    h = group.random(rng, size)
    if d:
        u = rng.normal(size=(size, d))
        u /= np.linalg.norm(u, axis=-1, keepdims=True)
        x = u * (radius * rng.uniform(size=size) ** (1.0 / d))[:, None]
    else:
        x = np.zeros((size, 0))
    return g, h, x


def check_action_axioms(a, group: LieGroup, g, h, x) -> ActionResiduals:
    """Sup of ``|a(g, a(h, x)) - a(gh, x)|``, ``|a(1, x) - x|`` and ``|a(g, 0)|``."""
    if x.shape[-1] == 0:
        return ActionResiduals(0.0, 0.0, 0.0)
    comp = np.linalg.norm(a(g, a(h, x)) - a(group.multiply(g, h), x), axis=-1)
    unit = np.linalg.norm(a(group.identity(x.shape[:-1]), x) - x, axis=-1)
    fixed = np.linalg.norm(a(g, np.zeros_like(x)), axis=-1)
    return ActionResiduals(float(comp.max()), float(unit.max()), float(fixed.max()))


def action_jacobian(a, g, d, step):
    """``D_x a(g, x)`` at ``x = 0`` by central differences (..., d, d)."""
    g = np.asarray(g)
    if d == 0:
        return np.zeros(g.shape[:-2] + (0, 0))
    cols = []
    for e in np.eye(d):
        xp = np.broadcast_to(step * e, g.shape[:-2] + (d,))
        cols.append((a(g, xp) - a(g, -xp)) / (2 * step))
    return np.stack(cols, axis=-1)


class LinearModel:
    """Bochner linearisation ``h(x) = sum_i w_i R(g_i)^-1 a(g_i, x)``."""

    def __init__(self, action, group: LieGroup, quadrature: GroupQuadrature, d: int, step: float, max_condition=1e3):
        self.action = action
        self.group = group
        self.quadrature = quadrature
        self.d = d
        self.step = step
        self.R_nodes = self.R(quadrature.nodes)
        cond = np.linalg.cond(self.R_nodes) if d else np.ones(1)
        if np.max(cond) > max_condition:
            raise np.linalg.LinAlgError(f"ill-conditioned representation (condition {np.max(cond):.3g})")
        self.R_inv_nodes = np.linalg.inv(self.R_nodes) if d else self.R_nodes

    def R(self, g):
        """Derivative of the action at the fixed point."""
        return action_jacobian(self.action, g, self.d, self.step)

    def h(self, x):
        x = np.asarray(x, dtype=float)
        nodes = self.quadrature.nodes
        ax = self.action(nodes[:, None], np.broadcast_to(x, (len(nodes),) + x.shape))
        terms = np.einsum("nij,n...j->n...i", self.R_inv_nodes, ax)
        return np.tensordot(self.quadrature.weights, terms, axes=([0], [0]))

    def conjugacy_residuals(self, g, x):
        """``|h(a(g, x)) - R(g) h(x)|`` per sample."""
        lhs = self.h(self.action(g, x))
        rhs = np.einsum("...ij,...j->...i", self.R(g), self.h(x))
        return np.linalg.norm(lhs - rhs, axis=-1)

    def to_dict(self):
        return {
            "R_identity_error": float(np.abs(self.R(self.group.identity()) - np.eye(self.d)).max(initial=0.0)),
            "max_condition": float(np.max(np.linalg.cond(self.R_nodes))) if self.d else 1.0,
            "nodes": len(self.quadrature),
        }


def bochner_linearize(a, quadrature: GroupQuadrature, rho: float, d: int | None = None, step=None) -> LinearModel:
    """Linear model of an action near its fixed point (derivative step ``1e-5 * rho``)."""
    d = a.d if d is None else d
    step = 1e-5 * rho if step is None else step
    return LinearModel(a, quadrature.group, quadrature, d, step)


def representation_check(model: LinearModel, g, h) -> float:
    """Sup of ``|R(g) R(h) - R(gh)|`` (Frobenius) over samples."""
    G = model.group
    if model.d == 0:
        return 0.0
    diff = model.R(g) @ model.R(h) - model.R(G.multiply(g, h))
    return float(np.linalg.norm(diff, axis=(-2, -1)).max())


@dataclass(frozen=True)
class HalvingResult:
    radius: float
    residual: float
    residual_half: float

    @property
    def ratio(self):
        return self.residual / self.residual_half if self.residual_half > 0 else float("inf")


def conjugacy_halving(model: LinearModel, radius: float, size: int = 64, seed: int = 0) -> HalvingResult:
    """Conjugacy residual on a sphere of radius ``r`` and on the same directions at ``r/2``."""
    rng = np.random.default_rng(seed)
    g = model.group.random(rng, size)
    u = rng.normal(size=(size, model.d))
    u /= np.linalg.norm(u, axis=-1, keepdims=True)
    full = model.conjugacy_residuals(g, radius * u).max()
    half = model.conjugacy_residuals(g, 0.5 * radius * u).max()
    return HalvingResult(radius, float(full), float(half))


class LinearPart:
    """The linear action ``(g, x) -> R(g) x`` of a linear model."""

    def __init__(self, model: LinearModel):
        self.model = model
        self.group = model.group
        self.d = model.d

    def __call__(self, g, x):
        return np.einsum("...ij,...j->...i", self.model.R(g), np.asarray(x, dtype=float))


class PerturbedLinearAction:
    """Fixture ``a(g, x) = R(g) (x + beta q(x))`` around a linear action.

    ``q(x) = (x_2^2, x_1 x_2)`` on the plane and ``|x|^2 e_1`` otherwise.  The
    Bochner residual of this map is exactly ``beta q(a(g, x))``, hence
    quadratic in ``|x|``.
    """

    def __init__(self, linear, beta):
        self.linear = linear
        self.group = linear.group
        self.d = linear.d
        self.beta = float(beta)

    def q(self, x):
        if self.d == 2:
            return np.stack([x[..., 1] ** 2, x[..., 0] * x[..., 1]], axis=-1)
        out = np.zeros_like(x)
        out[..., 0] = np.sum(x * x, axis=-1)
        return out

    def __call__(self, g, x):
        x = np.asarray(x, dtype=float)
        return self.linear(g, x + self.beta * self.q(x))
