"""Defect of a candidate map, the averaging step, and the iteration driver.

A candidate map has the form ``phi(p) = g(p) exp(u(p))`` where ``g(p)`` is
the group part of the arrow in the chart and ``u`` is a correction field in
scaled algebra coordinates.  One averaging step replaces ``phi`` by

    phi_hat(p) = exp( sum_q w_q log psi(p, q) ) phi(p),
    psi(p, q) = phi(p q) phi(q)^-1 phi(p)^-1,

with ``q`` running over the Haar-weighted target fiber over ``s(p)``.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .groupoid import Arrows, GroupoidChart, as_points
from .haar import HaarSystem
from .interp import ChebyshevGrid, GroupBasis, monomial_exponents, monomials
from .liegroup import OutOfChart, haar_quadrature

ROUNDOFF_FLOOR = 1e-15
STAGNATION_RATIO = 0.5
STATUSES = ("converged", "noise_floor", "max_iter", "diverged")


def pmap(func, items, workers=1):
    """Ordered map, optionally on a thread pool; the result order never depends on ``workers``."""
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [func(it) for it in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(func, items))


def _expand(p: Arrows, axis=-1):
    """Insert a broadcast axis so ``p`` pairs with a stack of fiber arrows."""
    return Arrows(np.expand_dims(p.g, axis - 2), np.expand_dims(p.x, axis - 1))


# ---------------------------------------------------------------------------
# candidate maps


class CandidateMap:
    """A map ``phi: M -> G`` of the form ``g exp(u)``."""

    mode = "abstract"

    def __init__(self, chart: GroupoidChart, pinned: bool = True):
        self.chart = chart
        self.group = chart.group
        self.pinned = pinned

    def correction(self, p: Arrows):
        """Algebra coordinates of ``u`` at ``p`` (..., dim)."""
        raise NotImplementedError

    def __call__(self, p: Arrows):
        G = self.group
        u = self.correction(p)
        out = G.multiply(p.g, G.exp_coords(u))
        keep = np.all(u == 0.0, axis=-1)
        if self.pinned and self.chart.d:
            keep |= np.all(p.x == 0.0, axis=-1)
        elif self.pinned:
            keep |= True
        if keep.any():
            out = np.where(keep[..., None, None], p.g, out)
        return out


class ZeroMap(CandidateMap):
    """The naive projection ``phi(p) = g``."""

    mode = "closed_form"

    def correction(self, p):
        return np.zeros(p.shape + (self.group.dim,))


class ClosedFormMap(CandidateMap):
    """Correction given by an evaluable function of the arrow."""

    mode = "closed_form"

    def __init__(self, chart, func, pinned=True):
        super().__init__(chart, pinned)
        self.func = func

    def correction(self, p):
        return np.asarray(self.func(p), dtype=float)


class GridMap(CandidateMap):
    """Correction stored as group-polynomial coefficients on a Chebyshev base grid.

    ``coef`` has shape (grid points, basis size, dim).  When ``pinned`` the
    coefficients at the origin node are zero, so ``phi`` is exactly the
    identity over the fixed point.
    """

    mode = "grid"

    def __init__(self, chart, basis: GroupBasis, grid: ChebyshevGrid, coef, pinned=True):
        super().__init__(chart, pinned)
        self.basis = basis
        self.grid = grid
        coef = np.array(coef, dtype=float)
        if pinned:
            c = grid.center_index
            if c is None:
                raise ValueError("a pinned grid map needs the origin as a grid node")
            coef[c] = 0.0
        self.coef = coef

    @classmethod
    def from_function(cls, chart, basis, grid, func, pinned=True):
        nodes = basis.quadrature.nodes
        coef = []
        for x in grid.points:
            p = chart.arrows(nodes, np.broadcast_to(x, (len(nodes), chart.d)))
            vals = np.zeros((len(nodes), chart.group.dim)) if func is None else func(p)
            coef.append(basis.fit(vals))
        return cls(chart, basis, grid, np.array(coef), pinned)

    def with_coef(self, coef):
        return GridMap(self.chart, self.basis, self.grid, coef, self.pinned)

    def correction(self, p):
        shape = p.shape
        g = p.g.reshape((-1,) + p.g.shape[-2:])
        x = p.x.reshape(len(g), self.chart.d)
        F = self.basis.features(g)
        out = np.zeros((len(g), self.group.dim))
        idx = self.grid.node_index(x)
        if np.all(idx >= 0):
            for j in np.unique(idx):
                m = idx == j
                out[m] = F[m] @ self.coef[j]
        else:
            W = self.grid.weights(x)
            for j in range(len(self.grid)):
                wj = W[:, j]
                if np.any(wj != 0.0):
                    out += wj[:, None] * (F @ self.coef[j])
        return out.reshape(shape + (self.group.dim,))


class AveragedMap(CandidateMap):
    """The averaged map ``phi_hat`` evaluated directly from ``phi`` (no grid)."""

    mode = "closed_form"

    def __init__(self, inner: CandidateMap, haar: HaarSystem):
        super().__init__(inner.chart, inner.pinned)
        self.inner = inner
        self.haar = haar

    def __call__(self, p):
        out = averaged_values(self.inner, self.haar, p)
        if self.pinned:
            keep = np.all(p.x == 0.0, axis=-1) if self.chart.d else np.ones(p.shape, bool)
            out = np.where(keep[..., None, None], p.g, out)
        return out

    def correction(self, p):
        G = self.group
        return G.log_coords(G.inverse(p.g) @ self(p))


# ---------------------------------------------------------------------------
# perturbations


class Perturbation:
    """Random smooth field ``eta(g, x)`` with ``sup |eta| = 1`` on a probe set.

    ``eta`` is a polynomial of degree ``<= degree`` in the ambient real
    coordinates of ``g`` times a polynomial in ``x / rho`` with monomials of
    degree 1..``xdegree``, so ``eta(., x0) = 0``.  With ``d = 0`` (or
    ``pinned=False``) the base factor includes a constant term.
    """

    def __init__(self, chart: GroupoidChart, seed: int = 0, degree: int = 1, xdegree: int = 2, pinned: bool = True):
        G = chart.group
        self.chart = chart
        self.group = G
        self.degree = degree
        nv = G.features(G.identity()).shape[-1]
        self.gexp = monomial_exponents(nv, degree)
        lo = 1 if (pinned and chart.d) else 0
        self.xexp = [e for e in monomial_exponents(chart.d, xdegree) if len(e) >= lo]
        rng = np.random.default_rng(seed)
        self.coef = rng.normal(size=(len(self.gexp), len(self.xexp), G.dim))
        self.scale = 1.0
        self.scale = 1.0 / self._probe_sup()

    def _probe_sup(self):
        G, chart = self.group, self.chart
        try:
            nodes = haar_quadrature(G, 9).nodes
        except ValueError:
            nodes = G.random(np.random.default_rng(1), 200)
        if chart.d:
            t = np.linspace(-chart.rho, chart.rho, 5)
            xs = np.stack(np.meshgrid(*([t] * chart.d), indexing="ij"), -1).reshape(-1, chart.d)
        else:
            xs = np.zeros((1, 0))
        p = chart.arrows(nodes[:, None], xs[None])
        return float(np.linalg.norm(self(p), axis=-1).max())

    def __call__(self, p: Arrows):
        Fg = monomials(self.group.features(p.g), self.gexp)
        Fx = monomials(p.x / self.chart.rho, self.xexp) if self.chart.d else np.ones(p.shape + (1,))
        return self.scale * np.einsum("...a,...b,abk->...k", Fg, Fx, self.coef)


def initial_map(chart, eps, perturbation: Perturbation | None, mode="grid", basis=None, grid=None, pinned=True):
    """``phi_0 = proj exp(eps * eta)`` in the requested representation."""

    def u0(p):
        if perturbation is None or eps == 0:
            return np.zeros(p.shape + (chart.group.dim,))
        return eps * perturbation(p)

    if mode == "grid":
        return GridMap.from_function(chart, basis, grid, u0, pinned)
    if mode == "closed_form":
        return ClosedFormMap(chart, u0, pinned)
    raise ValueError(f"unknown map mode {mode!r}")


def reference_map(chart, like: CandidateMap):
    """The known homomorphism of the chart, in the same representation as ``like``."""
    func = chart.reference_correction
    if isinstance(like, GridMap):
        return GridMap.from_function(chart, like.basis, like.grid, lambda p: _ref_or_zero(chart, p), like.pinned)
    return ClosedFormMap(chart, lambda p: _ref_or_zero(chart, p), like.pinned) if func else ZeroMap(chart)


def _ref_or_zero(chart, p):
    u = chart.reference_correction(p)
    return np.zeros(p.shape + (chart.group.dim,)) if u is None else u


# ---------------------------------------------------------------------------
# defect


def psi(phi: CandidateMap, p: Arrows, q: Arrows, phi_p=None, phi_q=None):
    """Defect field ``phi(p q) phi(q)^-1 phi(p)^-1`` on composable pairs."""
    G = phi.group
    pq = phi.chart.product(p, q, check=False)
    fp = phi(p) if phi_p is None else phi_p
    fq = phi(q) if phi_q is None else phi_q
    return G.multiply(G.multiply(phi(pq), G.inverse(fq)), G.inverse(fp))


@dataclass
class PairSample:
    """Composable pairs: ``q`` over (base, Q) and ``p`` over (base, Q, P)."""

    q: Arrows
    p: Arrows

    def __len__(self):
        return int(np.prod(self.p.shape))

    @property
    def base_count(self):
        return self.q.shape[0]

    def slice(self, b):
        return self.q[b], self.p[b]

    def arrows(self):
        """Flattened distinct arrows of the sample (used for step norms)."""
        return Arrows.concatenate([self.q.reshape(-1), self.p.reshape(-1)])


def sample_composable_pairs(chart: GroupoidChart, base_points, group_resolution=None, seed=0, q_nodes=None, p_nodes=None):
    """Tensor sample of composable pairs.

    ``q = (h, x)`` runs over base points and group nodes, ``p`` over group nodes
    sourced at ``t(q)``.  Unless explicit nodes are given, the node sets are
    a quadrature rule translated by seeded random group elements, so that the
    sample does not coincide with any fitting nodes.
    """
    G = chart.group
    base_points = as_points(base_points, chart.d)
    if q_nodes is None or p_nodes is None:
        nodes = haar_quadrature(G, group_resolution).nodes
        rng = np.random.default_rng(seed)
        k = G.random(rng, 2)
        q_nodes = G.multiply(k[0], nodes) if q_nodes is None else q_nodes
        p_nodes = G.multiply(k[1], nodes) if p_nodes is None else p_nodes
    q = chart.fiber_s(base_points[:, None, :], np.asarray(q_nodes)[None])
    tq = chart.target(q)
    p = chart.fiber_s(tq[:, :, None, :], np.asarray(p_nodes)[None, None])
    return PairSample(q, p)


def defect_values(phi: CandidateMap, pairs: PairSample, workers=1):
    """Distances ``d(psi(p, q), 1)`` for every sampled pair (flat, fixed order)."""
    G = phi.group

    def one(b):
        q, p = pairs.slice(b)
        qb = _expand(q)
        fq = phi(q)[:, None]
        ps = psi(phi, p, qb.broadcast_to(p.shape), phi_q=np.broadcast_to(fq, p.g.shape))
        try:
            return np.linalg.norm(G.log_coords(ps), axis=-1).ravel()
        except OutOfChart as exc:
            raise OutOfChart(
                f"defect >= 1, averaging preconditions violated ({exc})", exc.index, exc.distance
            ) from exc

    return np.concatenate(pmap(one, range(pairs.base_count), workers))


@dataclass(frozen=True)
class DefectStats:
    sup: float
    p95: float
    count: int


def defect(phi: CandidateMap, pairs: PairSample, workers=1) -> DefectStats:
    """Sampled defect: supremum and 95th percentile of ``d(psi, 1)``."""
    vals = defect_values(phi, pairs, workers)
    if vals.size == 0:
        raise ValueError("empty pair sample")
    return DefectStats(float(vals.max()), float(np.percentile(vals, 95)), int(vals.size))


def noise_floor(chart, like: CandidateMap, pairs: PairSample, workers=1) -> float:
    """Defect of the chart's known homomorphism in the representation of ``like``."""
    return defect(reference_map(chart, like), pairs, workers).sup


# ---------------------------------------------------------------------------
# averaging step


def averaged_values(phi: CandidateMap, haar: HaarSystem, p: Arrows):
    """``phi_hat(p)`` for a stack of arrows ``p``."""
    G = phi.group
    q, w = haar.fiber(p.x)
    pb = _expand(p)
    fp = phi(p)
    ps = psi(phi, pb.broadcast_to(q.shape), q, phi_p=np.broadcast_to(fp[..., None, :, :], q.g.shape))
    avg = np.sum(w[..., None] * G.log_coords(ps), axis=-2)
    return G.multiply(G.exp_coords(avg), fp)


def average_step(phi: CandidateMap, haar: HaarSystem, workers=1) -> CandidateMap:
    """One averaging step.

    Grid maps are refitted from ``phi_hat`` at the fitting nodes, slice by
    slice over the base grid; other maps become an :class:`AveragedMap`.
    """
    if not isinstance(phi, GridMap):
        return AveragedMap(phi, haar)
    G, chart = phi.group, phi.chart
    nodes = phi.basis.quadrature.nodes

    def one(x):
        p = chart.arrows(nodes, np.broadcast_to(x, (len(nodes), chart.d)))
        new = averaged_values(phi, haar, p)
        return phi.basis.fit(G.log_coords(G.inverse(p.g) @ new))

    return phi.with_coef(np.array(pmap(one, phi.grid.points, workers)))


def average_step_variants(phi: CandidateMap, haar: HaarSystem, p: Arrows):
    """The three equivalent forms of the averaging step at arrows ``p``.

    1. ``exp(int_{q in T(s(p))} log(phi(pq) phi(q)^-1 phi(p)^-1)) phi(p)``
    2. ``exp(int_{r in T(p)} log(phi(r) phi(p^-1 r)^-1 phi(p)^-1)) phi(p)``
    3. ``phi(p) exp(int_{q in T(s(p))} log(phi(p)^-1 phi(pq) phi(q)^-1))``
    """
    G, chart = phi.group, phi.chart
    fp = phi(p)
    fpb = fp[..., None, :, :]
    v1 = averaged_values(phi, haar, p)

    r, wr = haar.fiber(chart.target(p))
    pinv = _expand(chart.invert(p)).broadcast_to(r.shape)
    s = chart.product(pinv, r, check=False)
    a2 = G.multiply(G.multiply(phi(r), G.inverse(phi(s))), G.inverse(np.broadcast_to(fpb, r.g.shape)))
    v2 = G.multiply(G.exp_coords(np.sum(wr[..., None] * G.log_coords(a2), axis=-2)), fp)

    q, wq = haar.fiber(p.x)
    pq = chart.product(_expand(p).broadcast_to(q.shape), q, check=False)
    a3 = G.multiply(G.multiply(G.inverse(np.broadcast_to(fpb, q.g.shape)), phi(pq)), G.inverse(phi(q)))
    v3 = G.multiply(fp, G.exp_coords(np.sum(wq[..., None] * G.log_coords(a3), axis=-2)))
    return v1, v2, v3


# ---------------------------------------------------------------------------
# iteration


@dataclass
class TraceRow:
    iter: int
    defect_sup: float
    defect_p95: float
    step_norm: float
    wall_ms: float


@dataclass
class ConvergenceTrace:
    """Per-iterate defect and the norm of the step taken from it."""

    rows: list = field(default_factory=list)

    def __len__(self):
        return len(self.rows)

    @property
    def defects(self):
        return np.array([r.defect_sup for r in self.rows])

    @property
    def step_norms(self):
        return np.array([r.step_norm for r in self.rows])


@dataclass
class IterationResult:
    map: CandidateMap
    trace: ConvergenceTrace
    status: str
    steps: int
    floor: float
    cause: str = ""
    records: dict = field(default_factory=dict)

    @property
    def final_defect(self):
        return float(self.trace.rows[-1].defect_sup)


def step_norm(phi_new, phi_old, arrows: Arrows):
    """``sup d(phi_new(p) phi_old(p)^-1, 1)`` and the step elements themselves."""
    G = phi_new.group
    step = G.multiply(phi_new(arrows), G.inverse(phi_old(arrows)))
    return float(np.linalg.norm(G.log_coords(step), axis=-1).max(initial=0.0)), step


def iterate(
    phi0: CandidateMap,
    haar: HaarSystem,
    pairs: PairSample,
    tol: float = 1e-9,
    max_iter: int = 12,
    divergence_guard: float = 1.5,
    C0: float = 0.1,
    floor: float = 0.0,
    workers: int = 1,
    record: Arrows | None = None,
    monitor=None,
) -> IterationResult:
    """Run ``phi_{n+1} = phi_n hat`` until the defect settles.

    Row ``n`` of the trace holds the defect of ``phi_n`` (``phi_1 = phi0``) and
    the norm of the step ``Psi_n = phi_{n+1} phi_n^-1`` taken from it (0 on the
    last row).  ``floor`` is the measured noise floor; defects within three
    times ``max(floor, 1e-15)`` end the run with status ``noise_floor``, as
    does a step that fails to halve the defect (discretisation stall).
    ``monitor(phi)`` is called on every iterate; its results go to
    ``records["monitor"]``.
    """
    floor_eff = max(float(floor), ROUNDOFF_FLOOR)
    trace = ConvergenceTrace()
    step_arrows = pairs.arrows() if record is None else record
    records = {"phi_1": phi0(record), "steps": []} if record is not None else {}
    if monitor is not None:
        records["monitor"] = [monitor(phi0)]
    phi = phi0
    t0 = time.perf_counter()
    stats = defect(phi, pairs, workers)
    trace.rows.append(TraceRow(1, stats.sup, stats.p95, 0.0, (time.perf_counter() - t0) * 1e3))

    def done(status, cause=""):
        if record is not None:
            records["phi_final"] = phi(record)
        return IterationResult(phi, trace, status, len(trace) - 1, float(floor), cause, records)

    if stats.sup > C0:
        return done("diverged", f"initial defect {stats.sup:.6g} exceeds the admissibility threshold {C0:g}")
    prev = None
    while True:
        cur = trace.rows[-1].defect_sup
        if cur <= tol:
            return done("converged")
        if cur <= 3 * floor_eff:
            return done("noise_floor")
        if prev is not None and cur > divergence_guard * prev:
            return done("diverged", f"defect grew from {prev:.6g} to {cur:.6g}")
        if prev is not None and cur > STAGNATION_RATIO * prev:
            return done("noise_floor", f"defect stagnated at {cur:.6g}")
        if len(trace) - 1 >= max_iter:
            return done("max_iter")
        t0 = time.perf_counter()
        try:
            nxt = average_step(phi, haar, workers)
            norm, _ = step_norm(nxt, phi, step_arrows)
            if record is not None:
                records["steps"].append(step_norm(nxt, phi, record)[1])
            stats = defect(nxt, pairs, workers)
        except OutOfChart as exc:
            return done("diverged", f"out of chart: {exc}")
        trace.rows[-1].step_norm = norm
        prev = cur
        phi = nxt
        if monitor is not None:
            records["monitor"].append(monitor(phi))
        trace.rows.append(TraceRow(len(trace) + 1, stats.sup, stats.p95, 0.0, (time.perf_counter() - t0) * 1e3))
