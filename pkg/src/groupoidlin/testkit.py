"""Independent checks: proof identities, special cases and convergence diagnostics."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .averaging import (
    ROUNDOFF_FLOOR,
    ConvergenceTrace,
    IterationResult,
    Perturbation,
    initial_map,
    iterate,
    noise_floor,
    psi,
    sample_composable_pairs,
)
from .groupoid import Arrows, TrivialAction, action_groupoid, sample_triples
from .haar import direct_haar_system
from .interp import ChebyshevGrid, GroupBasis
from .liegroup import LieGroup, haar_quadrature


def cocycle_factors(phi, chart, p, q, r):
    """The three factors ``A1, A2, A3`` and ``psi(p, q)`` on composable triples."""
    G = phi.group
    inv = G.inverse
    pq = chart.product(p, q, check=False)
    qr = chart.product(q, r, check=False)
    psi_pq = psi(phi, p, q)
    fp = phi(p)
    A1 = inv(psi_pq) @ psi(phi, pq, r) @ psi_pq
    A2 = fp @ inv(psi(phi, q, r)) @ inv(fp)
    A3 = inv(psi(phi, p, qr))
    return A1, A2, A3, psi_pq


def verify_cocycle_identity(phi, chart, triples) -> float:
    """Sup of ``d(A1 A2 A3, psi(p, q)^-1)`` over composable triples ``(p, q, r)``."""
    G = phi.group
    A1, A2, A3, psi_pq = cocycle_factors(phi, chart, *triples)
    lhs = A1 @ A2 @ A3
    return float(G.distance(lhs, G.inverse(psi_pq)).max(initial=0.0))


def random_triples(chart, size, seed=0, radius=None):
    return sample_triples(chart, size, np.random.default_rng(seed), radius)


@dataclass
class GKRResult:
    """Averaging a near-identity self-map of a compact group."""

    result: IterationResult
    homomorphism_residual: float
    identity_distance: float
    sample_size: int

    @property
    def trace(self):
        return self.result.trace

    @property
    def map(self):
        return self.result.map


def gkr_chart(group: LieGroup):
    """Degenerate chart with a one-point base: arrows are group elements."""
    return action_groupoid(TrivialAction(group, 0), 1.0)


def gkr_case(group, eps, seed=0, tol=1e-9, resolution=9, sample_resolution=7, max_iter=12, C0=0.25, workers=1) -> GKRResult:
    """Run the averaging on ``G -> G`` for ``phi0(g) = g exp(eps * eta(g))``.

    ``eta`` has unit sup norm, so the initial defect is about ``2 eps``; the
    admissibility threshold ``C0`` accommodates ``eps <= 0.1``.
    """
    if isinstance(group, str):
        group = LieGroup(group)
    if eps > 0.1:
        raise ValueError("the group case expects eps <= 0.1")
    chart = gkr_chart(group)
    quad = haar_quadrature(group, resolution)
    basis = GroupBasis(quad)
    grid = ChebyshevGrid(0, 1.0, 1)
    haar = direct_haar_system(chart, quad)
    eta = Perturbation(chart, seed=seed, pinned=False) if eps > 0 else None
    phi0 = initial_map(chart, eps, eta, "grid", basis, grid, pinned=False)
    pairs = sample_composable_pairs(chart, np.zeros((1, 0)), sample_resolution, seed=seed + 1)
    floor = noise_floor(chart, phi0, pairs, workers)
    res = iterate(phi0, haar, pairs, tol=tol, max_iter=max_iter, C0=C0, floor=floor, workers=workers)
    arrows = pairs.arrows()
    dist = group.distance(res.map(arrows), arrows.g)
    return GKRResult(res, res.final_defect, float(dist.max()), len(pairs))


@dataclass(frozen=True)
class BCHCalibration:
    constant: float
    norm_cap: float
    sample_size: int
    max_residual: float


def verify_bch_bounds(group, sample_size=10000, norm_cap=0.3, seed=0) -> BCHCalibration:
    """Calibrate ``C`` in ``|log(e^f1 e^f2) - f1 - f2| <= C |f1| |f2|`` by sampling."""
    if isinstance(group, str):
        group = LieGroup(group)
    if norm_cap > 0.5:
        raise ValueError("norm_cap must be <= 0.5")
    rng = np.random.default_rng(seed)
    f1 = group.random_coords(rng, sample_size, norm_cap)
    f2 = group.random_coords(rng, sample_size, norm_cap)
    prod = group.multiply(group.exp_coords(f1), group.exp_coords(f2))
    res = np.linalg.norm(group.log_coords(prod) - f1 - f2, axis=-1)
    denom = np.linalg.norm(f1, axis=-1) * np.linalg.norm(f2, axis=-1)
    ok = denom > 0
    ratio = np.where(ok, res / np.where(ok, denom, 1.0), 0.0)
    return BCHCalibration(float(ratio.max()), norm_cap, sample_size, float(res.max()))


def bch_stability(group, sample_size=10000, caps=(0.3, 0.15), seed=0):
    """Calibrated constants at each cap and the ratio of the first to the last."""
    cals = [verify_bch_bounds(group, sample_size, c, seed) for c in caps]
    return cals, cals[0].constant / cals[-1].constant if cals[-1].constant > 0 else 1.0


class InsufficientData(ValueError):
    """Too few iterates above the noise floor for an order fit."""


@dataclass(frozen=True)
class OrderFit:
    order: float
    intercept: float
    used: tuple
    residual: float

    @property
    def usable(self):
        return len(self.used)

    def to_dict(self):
        return {"order": self.order, "intercept": self.intercept, "used": list(self.used), "residual": self.residual}


def fit_convergence_order(trace, floor=0.0) -> OrderFit:
    """Least-squares slope of ``log D_{n+1}`` against ``log D_n``.

    Uses the leading run of iterates with ``D_n > 3 max(floor, 1e-15)``; at
    least three are required.  ``trace`` is a :class:`ConvergenceTrace` or a
    sequence of defects.
    """
    vals = trace.defects if isinstance(trace, ConvergenceTrace) else np.asarray(trace, dtype=float)
    thresh = 3.0 * max(float(floor), ROUNDOFF_FLOOR)
    used = []
    for i, v in enumerate(vals):
        if not v > thresh:
            break
        used.append(i)
    if len(used) < 3:
        raise InsufficientData(f"only {len(used)} iterates above the noise floor; need 3")
    logs = np.log(vals[used])
    x, y = logs[:-1], logs[1:]
    A = np.stack([x, np.ones_like(x)], axis=1)
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = float(np.abs(A @ coef - y).max())
    return OrderFit(float(coef[0]), float(coef[1]), tuple(int(i) + 1 for i in used), resid)


def contraction_constant(trace) -> float:
    """``D_1 / D_0^2`` from the first two iterates."""
    d = trace.defects if isinstance(trace, ConvergenceTrace) else np.asarray(trace)
    return float(d[1] / d[0] ** 2)


@dataclass(frozen=True)
class C1Estimate:
    total: float
    spatial: float
    group: float


def c1_defect_estimate(phi, chart, size=64, fd_step=1e-5, seed=0, radius=None) -> C1Estimate:
    """Finite-difference sup of first derivatives of the logged defect field.

    Composable pairs are parameterised by ``(g, h, x)`` through
    ``q = (h, x)``, ``p = (g, t(q))``; group directions use right translation.
    """
    if fd_step <= 0:
        raise ValueError("fd_step must be positive")
    G = chart.group
    rng = np.random.default_rng(seed)
    radius = 0.5 * chart.rho if radius is None else radius
    g = G.random(rng, size)
    h = G.random(rng, size)
    if chart.d:
        x = rng.uniform(-radius, radius, size=(size, chart.d))
    else:
        x = np.zeros((size, 0))

    def field(g, h, x):
        q = chart.fiber_s(x, h)
        p = chart.fiber_s(chart.target(q), g)
        return G.log_coords(psi(phi, p, q))

    spatial = 0.0
    for e in np.eye(chart.d):
        dv = (field(g, h, x + fd_step * e) - field(g, h, x - fd_step * e)) / (2 * fd_step)
        spatial = max(spatial, float(np.abs(dv).max()))
    grp = 0.0
    for e in np.eye(G.dim):
        up, dn = G.exp_coords(fd_step * e), G.exp_coords(-fd_step * e)
        for which in (0, 1):
            a = [g, h]
            b = [g, h]
            a[which] = G.multiply(a[which], up)
            b[which] = G.multiply(b[which], dn)
            dv = (field(a[0], a[1], x) - field(b[0], b[1], x)) / (2 * fd_step)
            grp = max(grp, float(np.abs(dv).max()))
    return C1Estimate(max(spatial, grp), spatial, grp)


def telescoping_residual(records) -> float:
    """``d(Psi_n ... Psi_1, phi_{n+1} phi_1^-1)`` from :func:`iterate` records (chordal)."""
    steps = records["steps"]
    first = records["phi_1"]
    final = records["phi_final"]
    prod = np.broadcast_to(np.eye(first.shape[-1], dtype=first.dtype), first.shape).copy()
    for s in steps:
        prod = s @ prod
    target = final @ np.conj(np.swapaxes(first, -1, -2))
    return float(np.abs(prod - target).max(initial=0.0))


__all__ = [
    "Arrows",
    "BCHCalibration",
    "C1Estimate",
    "GKRResult",
    "InsufficientData",
    "OrderFit",
    "bch_stability",
    "c1_defect_estimate",
    "cocycle_factors",
    "contraction_constant",
    "fit_convergence_order",
    "gkr_case",
    "random_triples",
    "telescoping_residual",
    "verify_bch_bounds",
    "verify_cocycle_identity",
]
