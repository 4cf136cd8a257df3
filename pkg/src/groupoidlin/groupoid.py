"""Proper groupoids near a fixed point, in a fixed trivialization ``M = G x B``.

An arrow is stored as a pair ``(g, x)``: a group part ``g`` and its source
``x`` in a base box ``[-rho, rho]^d`` centred at the fixed point ``x0 = 0``.
Every structure map is vectorised over leading axes.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .liegroup import LieGroup, haar_quadrature


class BaseBoxError(ValueError):
    """A base point left the safety box of a chart."""


class CompositionError(ValueError):
    """Two arrows were multiplied although ``s(p) != t(q)``."""


COMPOSABLE_TOL = 1e-9


def as_points(x, d):
    """Reshape base points to (N, d); also handles ``d = 0``."""
    x = np.asarray(x, dtype=float)
    if d == 0:
        n = x.shape[0] if x.ndim >= 2 else 1
        return np.zeros((n, 0))
    return x.reshape(-1, d)


@dataclass(frozen=True)
class Arrows:
    """A stack of arrows: group parts ``g`` (..., n, n) and sources ``x`` (..., d)."""

    g: np.ndarray
    x: np.ndarray

    @property
    def shape(self):
        return self.g.shape[:-2]

    def __len__(self):
        return self.shape[0]

    def __getitem__(self, idx):
        return Arrows(self.g[idx], self.x[idx])

    def reshape(self, *shape):
        shape = shape[0] if len(shape) == 1 and isinstance(shape[0], tuple) else shape
        g = self.g.reshape(tuple(shape) + self.g.shape[-2:])
        return Arrows(g, self.x.reshape(g.shape[:-2] + self.x.shape[-1:]))

    def broadcast_to(self, shape):
        shape = tuple(shape)
        return Arrows(
            np.broadcast_to(self.g, shape + self.g.shape[-2:]),
            np.broadcast_to(self.x, shape + self.x.shape[-1:]),
        )

    @staticmethod
    def concatenate(items, axis=0):
        return Arrows(
            np.concatenate([a.g for a in items], axis=axis),
            np.concatenate([a.x for a in items], axis=axis),
        )


# ---------------------------------------------------------------------------
# polynomial fields and cocycles


@dataclass(frozen=True)
class PolynomialField:
    """Vector-valued polynomial ``Q(x) = sum_k c_k x^{e_k}`` on ``R^d``."""

    exponents: np.ndarray  # (T, d) nonnegative integers
    coefficients: np.ndarray  # (T, m)

    def __post_init__(self):
        e = np.asarray(self.exponents, dtype=int)
        c = np.asarray(self.coefficients, dtype=float)
        if e.ndim != 2:
            e = e.reshape(len(c), -1)
        if c.ndim != 2:
            raise ValueError("coefficients must be a (terms, outputs) array")
        if np.any(e < 0):
            raise ValueError("exponents must be nonnegative")
        object.__setattr__(self, "exponents", e)
        object.__setattr__(self, "coefficients", c)

    @property
    def dim_in(self):
        return self.exponents.shape[1]

    @property
    def dim_out(self):
        return self.coefficients.shape[1]

    @property
    def vanishes_at_origin(self):
        return not np.any(self.exponents.sum(axis=1) == 0)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        mono = np.prod(x[..., None, :] ** self.exponents, axis=-1)
        return mono @ self.coefficients

    def to_dict(self):
        return {
            "terms": [
                {"exponent": [int(v) for v in e], "coefficient": [float(v) for v in c]}
                for e, c in zip(self.exponents, self.coefficients)
            ]
        }

    @classmethod
    def from_dict(cls, data, d, m):
        terms = data["terms"] if isinstance(data, dict) else data
        if not terms:
            return cls(np.zeros((0, d), dtype=int), np.zeros((0, m)))
        exps = np.array([t["exponent"] for t in terms], dtype=int)
        coefs = np.array([t["coefficient"] for t in terms], dtype=float)
        if exps.shape[1] != d or coefs.shape[1] != m:
            raise ValueError(
                f"polynomial term shapes {exps.shape[1]}x{coefs.shape[1]} do not match ({d}, {m})"
            )
        return cls(exps, coefs)


class Cocycle:
    """Map ``c: B -> G`` given by ``c(x) = exp(Q(x))`` with ``Q(0) = 0``."""

    def __init__(self, group: LieGroup, field: PolynomialField):
        if field.dim_out != group.dim:
            raise ValueError("cocycle field must have one output per algebra coordinate")
        if not field.vanishes_at_origin:
            raise ValueError("cocycle exponent must vanish at the fixed point")
        self.group = group
        self.field = field

    def coords(self, x):
        return self.field(x)

    def __call__(self, x):
        return self.group.exp_coords(self.field(x))


# ---------------------------------------------------------------------------
# actions


class Action:
    """A smooth action ``a(g, x)`` of a compact group on ``R^d`` fixing 0."""

    name = "action"
    linear = False

    def __init__(self, group: LieGroup, d: int):
        self.group = group
        self.d = d

    def __call__(self, g, x):  # pragma: no cover - abstract
        raise NotImplementedError

    def matrix(self, g):
        """Representation matrices for linear actions."""
        raise TypeError(f"{self.name} action is not linear")

    def describe(self):
        return {"type": self.name}


class TrivialAction(Action):
    name = "trivial"
    linear = True

    def __call__(self, g, x):
        g = np.asarray(g)
        return np.broadcast_to(x, np.broadcast_shapes(g.shape[:-2], np.shape(x)[:-1]) + (self.d,)).copy()

    def matrix(self, g):
        return np.broadcast_to(np.eye(self.d), np.shape(g)[:-2] + (self.d, self.d)).copy()


class LinearAction(Action):
    """Linear action through a representation ``R(g)``."""

    linear = True

    def __init__(self, group, d, rep, name="linear", descriptor=None):
        super().__init__(group, d)
        self._rep = rep
        self.name = name
        self._descriptor = descriptor or {"type": name}

    def matrix(self, g):
        return self._rep(np.asarray(g))

    def __call__(self, g, x):
        return np.einsum("...ij,...j->...i", self.matrix(g), x)

    def describe(self):
        return dict(self._descriptor)


class WarpedAction(Action):
    """Nonlinear conjugate ``W^-1(L(g) W(x))`` of a linear action.

    ``W(x) = x + beta * x_1^2 e_d`` is a polynomial diffeomorphism with
    ``W(0) = 0`` and ``DW(0) = I``.
    """

    name = "warped"

    def __init__(self, inner: Action, beta: float):
        if inner.d < 2:
            raise ValueError("warped actions need base dimension >= 2")
        super().__init__(inner.group, inner.d)
        self.inner = inner
        self.beta = float(beta)

    def warp(self, x):
        y = np.array(x, dtype=float, copy=True)
        y[..., -1] += self.beta * y[..., 0] ** 2
        return y

    def unwarp(self, y):
        x = np.array(y, dtype=float, copy=True)
        x[..., -1] -= self.beta * x[..., 0] ** 2
        return x

    def __call__(self, g, x):
        return self.unwarp(self.inner(g, self.warp(x)))

    def describe(self):
        return {"type": "warped", "beta": self.beta, "inner": self.inner.describe()}


def circle_angle(group: LieGroup, g):
    """Rotation angle of a U(1) or SO(2) element."""
    g = np.asarray(g)
    if group.spec.family == "u1":
        return np.angle(g[..., 0, 0])
    return np.arctan2(g[..., 1, 0], g[..., 0, 0])


def linear_action(group: LieGroup, generator) -> LinearAction:
    """Action of a circle group through ``R(g) = expm(theta * A)``.

    ``A`` must integrate to a representation, i.e. ``expm(2 pi A) = I``.
    """
    import scipy.linalg

    if not group.abelian:
        raise ValueError("matrix-generator actions are supported for circle groups only")
    A = np.asarray(generator, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError("generator must be a square matrix")
    if np.abs(scipy.linalg.expm(2 * np.pi * A) - np.eye(len(A))).max() > 1e-9:
        raise ValueError("generator does not integrate to a circle representation")
    evals, V = np.linalg.eig(A)
    Vinv = np.linalg.inv(V)

    def rep(g):
        th = circle_angle(group, g)
        D = np.exp(th[..., None] * evals)
        return np.real(np.einsum("ij,...j,jk->...ik", V, D, Vinv))

    return LinearAction(group, len(A), rep, "linear", {"type": "linear", "generator": A.tolist()})


def standard_action(group: LieGroup) -> LinearAction:
    """SO(n) acting on R^n by matrix multiplication."""
    if group.spec.family != "so":
        raise ValueError("the standard action needs a rotation group")
    return LinearAction(group, group.n, lambda g: np.array(g, dtype=float), "standard")


def adjoint_action(group: LieGroup) -> LinearAction:
    """Adjoint action on the Lie algebra, in orthonormal coordinates."""
    return LinearAction(group, group.dim, group.adjoint_matrix, "adjoint")


def make_action(group: LieGroup, d: int, descriptor) -> Action:
    """Build an action from a config descriptor (``{"type": ...}``)."""
    kind = descriptor.get("type", "trivial")
    if kind == "trivial":
        return TrivialAction(group, d)
    if kind == "linear":
        act = linear_action(group, descriptor["generator"])
    elif kind == "standard":
        act = standard_action(group)
    elif kind == "adjoint":
        act = adjoint_action(group)
    elif kind == "warped":
        act = WarpedAction(make_action(group, d, descriptor["inner"]), descriptor["beta"])
    else:
        raise ValueError(f"unknown action type {kind!r}")
    if act.d != d:
        raise ValueError(f"{kind} action acts on R^{act.d}, base dimension is {d}")
    return act


# ---------------------------------------------------------------------------
# charts


class GroupoidChart:
    """Structure maps of a groupoid in the trivialization ``M = G x B``."""

    kind = "chart"

    def __init__(self, group: LieGroup, d: int, rho: float, safety: float = 2.0):
        if rho <= 0:
            raise ValueError("base radius must be positive")
        self.group = group
        self.d = int(d)
        self.rho = float(rho)
        self.safety = float(safety)

    # subclasses implement these
    def target(self, p: Arrows):
        raise NotImplementedError

    def product(self, p: Arrows, q: Arrows, check=True) -> Arrows:
        raise NotImplementedError

    def invert(self, p: Arrows) -> Arrows:
        raise NotImplementedError

    def unit(self, x) -> Arrows:
        raise NotImplementedError

    def fiber_t(self, y, h) -> Arrows:
        """Arrows with target ``y`` parameterised by group elements ``h``."""
        raise NotImplementedError

    def fiber_param_t(self, r: Arrows):
        """Inverse of :meth:`fiber_t` on its image."""
        raise NotImplementedError

    def fiber_s(self, x, h) -> Arrows:
        """Arrows with source ``x`` parameterised by group elements ``h``."""
        raise NotImplementedError

    def reference_correction(self, p: Arrows):
        """Algebra coordinates ``u`` with ``g exp(u)`` a known homomorphism, or None for ``u = 0``."""
        return None

    def describe(self):
        return {"kind": self.kind, "group": self.group.spec.name, "d": self.d, "rho": self.rho}

    # shared helpers
    def source(self, p: Arrows):
        return p.x

    def arrows(self, g, x) -> Arrows:
        g = np.asarray(g)
        x = np.asarray(x, dtype=float)
        shape = np.broadcast_shapes(g.shape[:-2], x.shape[:-1])
        return Arrows(
            np.broadcast_to(g, shape + g.shape[-2:]).copy(),
            np.broadcast_to(x, shape + (self.d,)).copy(),
        )

    def check_box(self, x, what="base point"):
        x = np.asarray(x)
        if x.size and np.abs(x).max() > self.safety * self.rho:
            raise BaseBoxError(
                f"{what} at sup-norm {np.abs(x).max():.6g} leaves the safety box "
                f"of radius {self.safety * self.rho:.6g}"
            )

    def _check_composable(self, p, q):
        gap = np.abs(p.x - self.target(q))
        if gap.size and gap.max() > COMPOSABLE_TOL:
            raise CompositionError(f"arrows are not composable: |s(p) - t(q)| = {gap.max():.3g}")


class ActionGroupoid(GroupoidChart):
    """Action groupoid ``G x B``: ``s(g, x) = x``, ``t(g, x) = a(g, x)``."""

    kind = "action"

    def __init__(self, action: Action, rho: float, safety: float = 2.0):
        super().__init__(action.group, action.d, rho, safety)
        self.action = action

    def target(self, p):
        return self.action(p.g, p.x)

    def product(self, p, q, check=True):
        if check:
            self._check_composable(p, q)
        return Arrows(self.group.multiply(p.g, q.g), np.broadcast_to(q.x, np.broadcast_shapes(p.x.shape, q.x.shape)).copy())

    def invert(self, p):
        return Arrows(self.group.inverse(p.g), self.action(p.g, p.x))

    def unit(self, x):
        x = np.asarray(x, dtype=float)
        return Arrows(self.group.identity(x.shape[:-1]), x.copy())

    def fiber_t(self, y, h):
        h = np.asarray(h)
        x = self.action(self.group.inverse(h), y)
        self.check_box(x, "fiber point")
        return self.arrows(h, x)

    def fiber_param_t(self, r):
        return r.g

    def fiber_s(self, x, h):
        return self.arrows(h, x)

    def describe(self):
        out = super().describe()
        out["action"] = self.action.describe()
        return out


class TwistedGroupoid(GroupoidChart):
    """Isomorphic copy of a chart with group parts re-coordinatised by ``g' = g c(x)^-1``.

    Here ``x`` is the source of the arrow and ``c`` is a cocycle with
    ``c(x0) = 1``.  The naive projection ``(g', x) -> g'`` is then no longer a
    homomorphism, while ``(g', x) -> g' c(x)`` is whenever the base projection was.
    """

    kind = "twisted"

    def __init__(self, base: GroupoidChart, cocycle: Cocycle):
        super().__init__(base.group, base.d, base.rho, base.safety)
        if cocycle.field.dim_in != base.d:
            raise ValueError("cocycle field dimension does not match the base")
        self.base = base
        self.cocycle = cocycle
        corners = _box_probe(base.d, base.safety * base.rho)
        base.group.check_chart(cocycle.coords(corners))

    def to_base(self, p):
        return Arrows(self.group.multiply(p.g, self.cocycle(p.x)), p.x)

    def from_base(self, P):
        cinv = self.group.inverse(self.cocycle(P.x))
        return Arrows(self.group.multiply(P.g, cinv), P.x)

    def target(self, p):
        return self.base.target(self.to_base(p))

    def product(self, p, q, check=True):
        if check:
            self._check_composable(p, q)
        return self.from_base(self.base.product(self.to_base(p), self.to_base(q), check=False))

    def invert(self, p):
        return self.from_base(self.base.invert(self.to_base(p)))

    def unit(self, x):
        return self.from_base(self.base.unit(x))

    def fiber_t(self, y, h):
        return self.from_base(self.base.fiber_t(y, h))

    def fiber_param_t(self, r):
        return self.base.fiber_param_t(self.to_base(r))

    def fiber_s(self, x, h):
        return self.from_base(self.base.fiber_s(x, h))

    def reference_correction(self, p):
        u_base = self.base.reference_correction(self.to_base(p))
        if u_base is None:
            return self.cocycle.coords(p.x)
        G = self.group
        return G.log_coords(self.cocycle(p.x) @ G.exp_coords(u_base))

    def describe(self):
        out = super().describe()
        out["base"] = self.base.describe()
        out["twist"] = self.cocycle.field.to_dict()
        return out


class MutatedGroupoid(GroupoidChart):
    """Fault fixture: the base product followed by a fixed extra right factor ``k``."""

    kind = "mutated"

    def __init__(self, base: GroupoidChart, k):
        super().__init__(base.group, base.d, base.rho, base.safety)
        self.base = base
        self.k = np.asarray(k)

    def target(self, p):
        return self.base.target(p)

    def product(self, p, q, check=True):
        r = self.base.product(p, q, check=check)
        return Arrows(self.group.multiply(r.g, self.k), r.x)

    def invert(self, p):
        return self.base.invert(p)

    def unit(self, x):
        return self.base.unit(x)

    def fiber_t(self, y, h):
        return self.base.fiber_t(y, h)

    def fiber_param_t(self, r):
        return self.base.fiber_param_t(r)

    def fiber_s(self, x, h):
        return self.base.fiber_s(x, h)

    def describe(self):
        out = super().describe()
        out["base"] = self.base.describe()
        return out


def _box_probe(d, radius, per_axis=5):
    if d == 0:
        return np.zeros((1, 0))
    axes = [np.linspace(-radius, radius, per_axis)] * d
    return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, d)


def action_groupoid(action: Action, rho: float, safety: float = 2.0, resolution: int = 6) -> ActionGroupoid:
    """Action groupoid of ``action`` on the box ``[-rho, rho]^d``.

    The action is probed on the box and a group quadrature; it must fix the
    origin and keep the box inside the safety box of radius ``safety * rho``.
    """
    chart = ActionGroupoid(action, rho, safety)
    G = action.group
    nodes = _probe_nodes(G, resolution)
    pts = _box_probe(action.d, rho)
    moved = action(nodes[:, None], pts[None, :])
    chart.check_box(moved, "action image")
    fixed = action(nodes, np.zeros((len(nodes), action.d)))
    if fixed.size and np.abs(fixed).max() > 1e-9:
        raise ValueError("action does not fix the origin")
    return chart


def twisted_groupoid(base: GroupoidChart, cocycle: Cocycle) -> TwistedGroupoid:
    return TwistedGroupoid(base, cocycle)


def _probe_nodes(G, resolution):
    try:
        return haar_quadrature(G, resolution).nodes
    except ValueError:
        return G.random(np.random.default_rng(0), 16)


# ---------------------------------------------------------------------------
# diagnostics


@dataclass
class AxiomReport:
    """Largest residual of each groupoid axiom over a random sample."""

    residuals: dict = field(default_factory=dict)
    sample_size: int = 0
    tolerance: float = 1e-9

    @property
    def passed(self):
        return all(v <= self.tolerance for v in self.residuals.values())

    @property
    def failures(self):
        return {k: v for k, v in self.residuals.items() if v > self.tolerance}

    def to_dict(self):
        return {
            "sample_size": self.sample_size,
            "tolerance": self.tolerance,
            "passed": self.passed,
            "residuals": dict(self.residuals),
        }


def arrow_distance(chart: GroupoidChart, p: Arrows, q: Arrows):
    """Chordal group distance plus Euclidean base distance."""
    dg = chart.group.chordal(p.g, q.g)
    dx = np.linalg.norm(p.x - q.x, axis=-1) if chart.d else np.zeros_like(dg)
    return dg + dx


def sample_triples(chart: GroupoidChart, size: int, rng, radius=None):
    """Random composable triples ``(p, q, r)`` with sources in the base ball."""
    G = chart.group
    radius = chart.rho if radius is None else radius
    if chart.d:
        dirs = rng.normal(size=(size, chart.d))
        dirs /= np.linalg.norm(dirs, axis=-1, keepdims=True)
        x = dirs * (radius * rng.uniform(size=size) ** (1.0 / chart.d))[:, None]
    else:
        x = np.zeros((size, 0))
    r = chart.fiber_s(x, G.random(rng, size))
    q = chart.fiber_s(chart.target(r), G.random(rng, size))
    p = chart.fiber_s(chart.target(q), G.random(rng, size))
    return p, q, r


def check_axioms(chart: GroupoidChart, sample_size: int = 256, seed: int = 0, tolerance: float = 1e-9) -> AxiomReport:
    """Measure every groupoid axiom on a seeded sample of composable triples."""
    if sample_size < 1:
        raise ValueError("sample_size must be >= 1")
    rng = np.random.default_rng(seed)
    p, q, r = sample_triples(chart, sample_size, rng)
    G = chart.group
    res = {}

    def sup(v):
        return float(np.max(v, initial=0.0))

    def bdist(a, b):
        return np.linalg.norm(a - b, axis=-1) if chart.d else np.zeros(a.shape[:-1])

    pq = chart.product(p, q)
    res["source_compat"] = sup(bdist(pq.x, q.x))
    res["target_compat"] = sup(bdist(chart.target(pq), chart.target(p)))
    left = chart.product(pq, r)
    right = chart.product(p, chart.product(q, r))
    res["associativity"] = sup(arrow_distance(chart, left, right))
    tp = chart.target(p)
    res["unit_maps"] = max(sup(bdist(chart.unit(p.x).x, p.x)), sup(bdist(chart.target(chart.unit(p.x)), p.x)))
    res["unit_right"] = sup(arrow_distance(chart, chart.product(p, chart.unit(p.x)), p))
    res["unit_left"] = sup(arrow_distance(chart, chart.product(chart.unit(tp), p), p))
    pinv = chart.invert(p)
    res["inverse_source"] = sup(bdist(pinv.x, tp))
    res["inverse_right"] = sup(arrow_distance(chart, chart.product(p, pinv), chart.unit(tp)))
    res["inverse_left"] = sup(arrow_distance(chart, chart.product(pinv, p), chart.unit(p.x)))
    res["double_inverse"] = sup(arrow_distance(chart, chart.invert(pinv), p))
    over0 = chart.fiber_s(np.zeros((sample_size, chart.d)), G.random(rng, sample_size))
    res["fixed_point"] = sup(np.linalg.norm(chart.target(over0), axis=-1)) if chart.d else 0.0
    return AxiomReport(res, sample_size, tolerance)


def orbit(chart: GroupoidChart, x, resolution: int):
    """Targets of arrows sourced at ``x``: a point cloud on ``t(s^-1(x))``."""
    nodes = haar_quadrature(chart.group, resolution).nodes
    x = np.asarray(x, dtype=float)
    return chart.target(chart.fiber_s(np.broadcast_to(x, (len(nodes), chart.d)), nodes))


def ball_sample(d, radius, resolution):
    """Tensor grid on ``[-r, r]^d`` with outside points pulled radially onto the sphere."""
    pts = _box_probe(d, radius, resolution)
    if d == 0:
        return pts
    nrm = np.linalg.norm(pts, axis=-1, keepdims=True)
    return np.where(nrm > radius, pts * radius / np.maximum(nrm, 1e-300), pts)


def saturate(chart: GroupoidChart, delta: float, resolution: int) -> float:
    """Radius of the saturation ``t(s^-1(D))`` of the Euclidean ball ``D`` of radius ``delta``.

    Raises :class:`BaseBoxError` when the saturation does not fit inside the
    base radius.
    """
    if delta > chart.rho:
        raise ValueError("delta must not exceed the base radius")
    pts = ball_sample(chart.d, delta, resolution)
    nodes = haar_quadrature(chart.group, resolution).nodes
    arrows = chart.fiber_s(pts[:, None, :], nodes[None])
    radius = float(np.linalg.norm(chart.target(arrows), axis=-1).max(initial=0.0)) if chart.d else 0.0
    radius = max(radius, delta)
    if radius > chart.rho * (1 + 1e-12):
        raise BaseBoxError(f"saturation radius {radius:.6g} exceeds the base radius {chart.rho:.6g}")
    return radius


def fiber_t(chart: GroupoidChart, y, quadrature):
    """Target fiber over ``y`` sampled at the nodes of a group quadrature.

    Returns the arrows (shape ``y.shape[:-1] + (nodes,)``) and their weights.
    """
    y = np.asarray(y, dtype=float)
    arrows = chart.fiber_t(y[..., None, :], quadrature.nodes)
    return arrows, quadrature.weights
