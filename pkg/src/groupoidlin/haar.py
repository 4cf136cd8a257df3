"""Haar systems: translation-invariant probability measures on target fibers.

A fiber ``T(y) = t^-1(y)`` is sampled through the chart's fiber
parameterisation ``h -> fiber_t(y, h)`` at the nodes of a group quadrature.
A Haar system then only has to supply one weight per node and fiber.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .groupoid import Arrows, GroupoidChart, as_points
from .liegroup import GroupQuadrature


@dataclass(frozen=True)
class FiberDensity:
    """Positive density on arrows, relative to Haar measure in fiber coordinates."""

    func: object
    name: str = "density"

    def __call__(self, arrows: Arrows):
        vals = np.asarray(self.func(arrows), dtype=float)
        if vals.size and not np.all(vals > 0):
            raise ValueError(f"density {self.name!r} is not strictly positive")
        return vals

    @classmethod
    def constant(cls):
        return cls(lambda a: np.ones(a.shape), "constant")

    @classmethod
    def smooth(cls, group, seed=0, amplitude=0.5):
        """A fixed non-invariant density ``exp(amp * (Re tr(A g) + b . x))``."""
        rng = np.random.default_rng(seed)
        n = group.n
        A = rng.normal(size=(n, n)) / n
        if group.dtype is complex:
            A = A + 1j * rng.normal(size=(n, n)) / n
        b = rng.normal(size=16)

        def f(a):
            x = a.x
            lin = x @ b[: x.shape[-1]] if x.shape[-1] else 0.0
            coef = np.real(np.trace(A @ a.g, axis1=-2, axis2=-1))
            return np.exp(amplitude * (coef + lin))

        return cls(f, f"smooth(seed={seed})")


class HaarSystem:
    """Nodes and weights on each target fiber of a chart."""

    def __init__(self, chart: GroupoidChart, quadrature: GroupQuadrature, provenance: str, tolerance: float):
        self.chart = chart
        self.quadrature = quadrature
        self.provenance = provenance
        self.tolerance = float(tolerance)

    def fiber(self, y):
        """Arrows (..., K) in ``t^-1(y)`` with their weights (..., K)."""
        y = np.asarray(y, dtype=float)
        arrows = self.chart.fiber_t(y[..., None, :], self.quadrature.nodes)
        return arrows, self.weights(y)

    def weights(self, y):  # pragma: no cover - abstract
        raise NotImplementedError

    def integrate(self, y, func):
        """``sum_k w_k func(r_k)`` over the fiber over each ``y``."""
        arrows, w = self.fiber(y)
        return np.sum(w * func(arrows), axis=-1)


class DirectHaarSystem(HaarSystem):
    """Push-forward of the group quadrature through the fiber parameterisation."""

    def __init__(self, chart, quadrature):
        super().__init__(chart, quadrature, "direct", quadrature.tolerance)

    def weights(self, y):
        y = np.asarray(y)
        return np.broadcast_to(self.quadrature.weights, y.shape[:-1] + (len(self.quadrature),))


class TabulatedHaarSystem(HaarSystem):
    """Weights computed per fiber by a callable (cached on exact base points)."""

    def __init__(self, chart, quadrature, provenance, tolerance, weight_fn):
        super().__init__(chart, quadrature, provenance, tolerance)
        self._weight_fn = weight_fn

    def weights(self, y):
        y = np.asarray(y, dtype=float)
        flat = as_points(y, self.chart.d) if y.ndim > 1 or self.chart.d else np.zeros((1, 0))
        out = self._weight_fn(flat)
        return out.reshape(y.shape[:-1] + (len(self.quadrature),))


def direct_haar_system(chart: GroupoidChart, quadrature: GroupQuadrature) -> HaarSystem:
    return DirectHaarSystem(chart, quadrature)


def _left_log_jacobian(G, func, h, step):
    """Central-difference Jacobian of ``func`` in left-trivialised coordinates at ``h``.

    ``func`` maps group elements (..., n, n) to group elements; the result has
    shape (..., dim, dim).
    """
    base = func(h)
    binv = G.inverse(base)
    cols = []
    for e in np.eye(G.dim):
        plus = func(G.multiply(h, G.exp_coords(step * e)))
        minus = func(G.multiply(h, G.exp_coords(-step * e)))
        dp = G.log_coords(binv @ plus, check=False)
        dm = G.log_coords(binv @ minus, check=False)
        cols.append((dp - dm) / (2 * step))
    return np.stack(cols, axis=-1)


def lemma_weights(chart, quadrature, mu0: FiberDensity, nu0: FiberDensity, y, step=1e-5):
    """Weights of the normalised measure ``f mu0`` on the target fibers over ``y``.

    For each fiber node ``r`` the unnormalised density is

        f(r) = (1 / m0(r)) * sum_p w_p nu0(p) m0(p) |det D tau_{p r^-1}(r)|,

    summing over the source fiber through ``r``; ``tau`` is left translation,
    whose Jacobian is taken by central differences in fiber coordinates.
    """
    G = chart.group
    y = as_points(y, chart.d)
    h = quadrature.nodes
    w = quadrature.weights
    K = len(w)
    r = chart.fiber_t(y[:, None, :], h[None])  # (B, K)
    m0_r = mu0(r)
    src = np.broadcast_to(r.x[:, :, None, :], r.x.shape[:2] + (K, chart.d))
    p = chart.fiber_s(src, h[None, None])  # (B, K, K)
    m0_p = mu0(p)
    nu_p = nu0(p)
    rinv = chart.invert(r)
    shift = chart.product(p, Arrows(rinv.g[:, :, None], rinv.x[:, :, None]), check=False)
    ybc = y[:, None, None, :]

    def tau(hh):
        z = chart.fiber_t(ybc, hh)
        return chart.fiber_param_t(chart.product(shift, z, check=False))

    hr = np.broadcast_to(h[None, :, None], shift.g.shape)
    J = _left_log_jacobian(G, tau, hr, step)
    det = np.linalg.det(J)
    if not np.all(det > 0):
        raise ValueError("nonpositive translation Jacobian; finite differences too coarse")
    ftilde = np.einsum("m,bkm->bk", w, nu_p * m0_p * det) / m0_r
    dens = w[None, :] * m0_r * ftilde
    return dens / dens.sum(axis=-1, keepdims=True)


def lemma_haar_system(chart, mu0: FiberDensity, nu0: FiberDensity, quadrature, step=1e-5, tolerance=None) -> HaarSystem:
    """Haar system built from arbitrary positive densities by averaging over source fibers."""
    tol = quadrature.tolerance + 1e-8 if tolerance is None else tolerance
    return TabulatedHaarSystem(
        chart,
        quadrature,
        "lemma",
        tol,
        lambda y: lemma_weights(chart, quadrature, mu0, nu0, y, step),
    )


def default_test_functions(chart: GroupoidChart, seed: int = 11):
    """Smooth test functions on arrows: matrix coefficients times affine base factors."""
    rng = np.random.default_rng(seed)
    G = chart.group
    n = G.n
    funcs = []
    for k in range(3):
        A = rng.normal(size=(n, n))
        if G.dtype is complex:
            A = A + 1j * rng.normal(size=(n, n))
        b = rng.normal(size=max(chart.d, 1)) / chart.rho

        def f(a, A=A, b=b, k=k):
            coef = np.real(np.trace(A @ a.g, axis1=-2, axis2=-1))
            lin = a.x @ b[: chart.d] if chart.d else 0.0
            return coef * (1.0 + 0.1 * lin) if k < 2 else coef**2 + 0.1 * lin
        funcs.append(f)
    return funcs


def check_invariance(system: HaarSystem, chart: GroupoidChart, q: Arrows, tests=None) -> float:
    """Largest translation-invariance residual over arrows ``q`` and test functions.

    Compares ``sum_{r in T(s(q))} w h(q r)`` with ``sum_{r in T(q)} w h(r)`` and
    also reports departures of the total mass from 1.
    """
    tests = default_test_functions(chart) if tests is None else tests
    lhs_arrows, lw = system.fiber(q.x)
    qb = Arrows(q.g[..., None, :, :], q.x[..., None, :])
    moved = chart.product(qb, lhs_arrows, check=False)
    rhs_arrows, rw = system.fiber(chart.target(q))
    worst = max(float(np.abs(lw.sum(axis=-1) - 1).max()), float(np.abs(rw.sum(axis=-1) - 1).max()))
    for f in tests:
        lhs = np.sum(lw * f(moved), axis=-1)
        rhs = np.sum(rw * f(rhs_arrows), axis=-1)
        worst = max(worst, float(np.abs(lhs - rhs).max()))
    return worst


def total_variation(w1, w2):
    """Total-variation distance between weight vectors on the same nodes."""
    return 0.5 * np.sum(np.abs(np.asarray(w1) - np.asarray(w2)), axis=-1)
