"""Compact matrix Lie groups with a scaled bi-invariant metric.

Group elements are stored as square matrices, stacked along leading axes
(shape ``(..., n, n)``).  Lie algebra elements are either skew matrices of
the same shape or real coordinate vectors of length ``dim`` in a basis that
is orthonormal for the scaled metric, so that ``|v|`` is the scaled norm.

The metric scale ``lam`` is chosen so that the scaled unit ball around the
identity is half the injectivity radius: a geodesic of length ``pi/2`` (in
rotation-angle units) has scaled length 1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.linalg

_EPS = np.finfo(float).eps
_SIGMA = np.array(
    [[[0, 1], [1, 0]], [[0, -1j], [1j, 0]], [[1, 0], [0, -1]]], dtype=complex
)


class OutOfChart(ValueError):
    """A group element lies outside the unit ball of the logarithm chart.

    This signals that the perturbation or the base neighbourhood is too large
    for the averaging step to be well defined.
    """

    def __init__(self, message, index=None, distance=None):
        super().__init__(message)
        self.index = index
        self.distance = distance


@dataclass(frozen=True)
class GroupSpec:
    """Family, matrix dimension and metric scale of a compact group."""

    family: str
    n: int
    scale: float

    def __post_init__(self):
        if self.family not in ("u1", "su2", "so"):
            raise ValueError(f"unsupported group family {self.family!r}")
        if self.scale <= 0:
            raise ValueError("metric scale must be positive")

    @classmethod
    def parse(cls, name: str) -> "GroupSpec":
        """Build a spec from a short name: ``u1``, ``su2``, ``so2``, ``so3``, ``soN``."""
        name = name.lower().replace("(", "").replace(")", "")
        if name in ("u1", "circle"):
            return cls("u1", 1, 2.0 / math.pi)
        if name == "su2":
            return cls("su2", 2, math.sqrt(2.0) / math.pi)
        if name.startswith("so") and name[2:].isdigit():
            n = int(name[2:])
            if n < 2:
                raise ValueError("SO(n) needs n >= 2")
            return cls("so", n, math.sqrt(2.0) / math.pi)
        raise ValueError(f"unsupported group family {name!r}")

    @property
    def name(self) -> str:
        return {"u1": "u1", "su2": "su2"}.get(self.family, f"so{self.n}")


class LieGroup:
    """Batched arithmetic on a compact matrix group."""

    def __init__(self, spec: GroupSpec | str):
        if isinstance(spec, str):
            spec = GroupSpec.parse(spec)
        self.spec = spec
        self.n = spec.n
        self.lam = spec.scale
        self.dtype = complex if spec.family in ("u1", "su2") else float
        self.basis = self._make_basis()
        self.dim = len(self.basis)
        # real inner product <X, Y> = lam^2 Re tr(X^H Y) makes the basis orthonormal
        self._dual = np.conj(self.basis) * self.lam**2

    def __repr__(self):
        return f"LieGroup({self.spec.name}, scale={self.lam:.6g})"

    def __eq__(self, other):
        return isinstance(other, LieGroup) and other.spec == self.spec

    def __hash__(self):
        return hash(self.spec)

    @property
    def abelian(self) -> bool:
        return self.spec.family == "u1" or (self.spec.family == "so" and self.n == 2)

    def _make_basis(self):
        lam, fam, n = self.lam, self.spec.family, self.n
        if fam == "u1":
            return np.array([[[1j / lam]]])
        if fam == "su2":
            return 1j * _SIGMA / (lam * math.sqrt(2.0))
        out = []
        for i in range(n):
            for j in range(i + 1, n):
                e = np.zeros((n, n))
                e[j, i], e[i, j] = 1.0, -1.0
                out.append(e / (lam * math.sqrt(2.0)))
        if n == 3:
            # hat-map ordering: e_x, e_y, e_z
            out = [out[2], -out[1], out[0]]
        return np.array(out)

    # -- basic structure -------------------------------------------------

    def identity(self, shape=()):
        eye = np.eye(self.n, dtype=self.dtype)
        return np.broadcast_to(eye, tuple(shape) + eye.shape).copy()

    def project(self, g):
        """Polar re-projection onto the group manifold.

        Elements that already satisfy the group constraints to the last bit
        are returned unchanged, so multiplying by an exact identity is exact.
        """
        g = np.asarray(g)
        fam = self.spec.family
        if fam == "u1":
            r = np.abs(g)
            return g / np.where(np.abs(r - 1.0) <= _EPS, 1.0, r)
        if fam == "su2":
            a = 0.5 * (g[..., 0, 0] + np.conj(g[..., 1, 1]))
            b = 0.5 * (g[..., 1, 0] - np.conj(g[..., 0, 1]))
            r = np.sqrt(np.abs(a) ** 2 + np.abs(b) ** 2)
            r = np.where(np.abs(r - 1.0) <= _EPS, 1.0, r)
            return _su2_from(a / r, b / r)
        if self.n == 2:
            c = 0.5 * (g[..., 0, 0] + g[..., 1, 1])
            s = 0.5 * (g[..., 1, 0] - g[..., 0, 1])
            r = np.hypot(c, s)
            r = np.where(np.abs(r - 1.0) <= _EPS, 1.0, r)
            return _rot(c / r, s / r)
        g = np.array(g, dtype=float)
        flat = g.reshape(-1, self.n, self.n)
        err = np.abs(np.swapaxes(flat, -1, -2) @ flat - np.eye(self.n)).max(axis=(-1, -2))
        bad = err > 16 * self.n * _EPS
        if bad.any():
            u, _, vt = np.linalg.svd(flat[bad])
            d = np.sign(np.linalg.det(u @ vt))
            u[..., :, -1] *= d[..., None]
            flat[bad] = u @ vt
        return flat.reshape(g.shape)

    def multiply(self, a, b, project=True):
        out = np.matmul(a, b)
        return self.project(out) if project else out

    def inverse(self, a):
        return np.conj(np.swapaxes(a, -1, -2))

    def residual(self, g):
        """Largest unitarity and determinant residual over a stack."""
        g = np.asarray(g)
        eye = np.eye(self.n)
        unit = np.abs(np.conj(np.swapaxes(g, -1, -2)) @ g - eye).max(axis=(-1, -2))
        det = np.abs(np.linalg.det(g) - 1.0)
        if self.spec.family == "u1":
            det = np.zeros_like(unit)
        return float(np.max(unit, initial=0.0)), float(np.max(det, initial=0.0))

    # -- algebra ---------------------------------------------------------

    def hat(self, v):
        v = np.asarray(v, dtype=float)
        return np.tensordot(v, self.basis, axes=([-1], [0]))

    def vee(self, X):
        X = np.asarray(X)
        return np.real(np.einsum("...ij,kij->...k", X, self._dual))

    def norm(self, X):
        """Scaled norm of algebra matrices."""
        return self.lam * np.sqrt(np.sum(np.abs(np.asarray(X)) ** 2, axis=(-1, -2)))

    def exp_coords(self, v):
        v = np.asarray(v, dtype=float)
        fam, lam = self.spec.family, self.lam
        if fam == "u1":
            return np.exp(1j * v[..., 0] / lam)[..., None, None]
        if fam == "su2":
            a = v / (lam * math.sqrt(2.0))
            al = np.linalg.norm(a, axis=-1)
            s = _sinc(al)
            re = np.cos(al)
            g00 = re + 1j * s * a[..., 2]
            g10 = s * (1j * a[..., 0] - a[..., 1])
            return _su2_from(g00, g10)
        if self.n == 2:
            return _rot2(v[..., 0] / (lam * math.sqrt(2.0)))
        if self.n == 3:
            w = v / (lam * math.sqrt(2.0))
            th = np.linalg.norm(w, axis=-1)
            W = _hat3(w)
            a = _sinc(th)[..., None, None]
            b = _cosc(th)[..., None, None]
            return np.eye(3) + a * W + b * (W @ W)
        return scipy.linalg.expm(self.hat(v))

    def log_coords(self, g, check=True):
        """Principal logarithm in scaled coordinates.

        Raises :class:`OutOfChart` when ``check`` and some element has scaled
        distance ``>= 1`` from the identity.
        """
        g = np.asarray(g)
        fam, lam = self.spec.family, self.lam
        if fam == "u1":
            v = (lam * np.angle(g[..., 0, 0]))[..., None]
        elif fam == "su2":
            w = np.stack(
                [
                    0.5 * np.imag(g[..., 0, 1] + g[..., 1, 0]),
                    0.5 * np.real(g[..., 0, 1] - g[..., 1, 0]),
                    0.5 * np.imag(g[..., 0, 0] - g[..., 1, 1]),
                ],
                axis=-1,
            )
            c = 0.5 * np.real(g[..., 0, 0] + g[..., 1, 1])
            v = _scale_by_angle(w, c) * (lam * math.sqrt(2.0))
        elif self.n == 2:
            th = np.arctan2(g[..., 1, 0] - g[..., 0, 1], g[..., 0, 0] + g[..., 1, 1])
            v = (th * lam * math.sqrt(2.0))[..., None]
        elif self.n == 3:
            A = 0.5 * (g - np.swapaxes(g, -1, -2))
            w = np.stack([A[..., 2, 1], A[..., 0, 2], A[..., 1, 0]], axis=-1)
            c = 0.5 * (np.trace(g, axis1=-2, axis2=-1) - 1.0)
            v = _scale_by_angle(w, c) * (lam * math.sqrt(2.0))
        else:
            flat = g.reshape(-1, self.n, self.n)
            logs = np.array([np.real(scipy.linalg.logm(m)) for m in flat])
            v = self.vee(logs).reshape(g.shape[:-2] + (self.dim,))
        if check:
            self.check_chart(v)
        return v

    def check_chart(self, v):
        r = np.linalg.norm(v, axis=-1)
        if r.size and not np.all(r < 1.0):
            flat = np.asarray(r).reshape(-1)
            bad = int(np.argmax(~(flat < 1.0)))
            raise OutOfChart(
                f"element at scaled distance {flat[bad]:.6g} >= 1 from the identity",
                index=bad,
                distance=float(flat[bad]),
            )

    def exp(self, X):
        return self.exp_coords(self.vee(X))

    def log(self, g, check=True):
        return self.hat(self.log_coords(g, check=check))

    def distance(self, a, b, check=True):
        """Bi-invariant distance ``|log(a^-1 b)|`` (exactly 0 for identical inputs)."""
        a, b = np.asarray(a), np.asarray(b)
        d = np.linalg.norm(self.log_coords(self.inverse(a) @ b, check=check), axis=-1)
        return np.where(np.all(a == b, axis=(-1, -2)), 0.0, d)

    def distance_to_identity(self, g, check=True):
        return np.linalg.norm(self.log_coords(g, check=check), axis=-1)

    def chordal(self, a, b):
        """Scaled Frobenius distance; defined everywhere, close to ``distance`` near 0."""
        return self.lam * np.sqrt(np.sum(np.abs(a - b) ** 2, axis=(-1, -2)))

    def adjoint(self, g, X):
        return g @ X @ self.inverse(g)

    def adjoint_coords(self, g, v):
        return self.vee(self.adjoint(g, self.hat(v)))

    def adjoint_matrix(self, g):
        """Matrix of ``Ad_g`` in the orthonormal coordinates."""
        cols = [self.adjoint_coords(g, e) for e in np.eye(self.dim)]
        return np.stack(cols, axis=-1)

    # -- features for function fitting ----------------------------------

    def features(self, g):
        """Real ambient coordinates; every polynomial on the group is a polynomial in these."""
        g = np.asarray(g)
        fam = self.spec.family
        if fam == "u1":
            z = g[..., 0, 0]
            return np.stack([z.real, z.imag], axis=-1)
        if fam == "su2":
            a, b = g[..., 0, 0], g[..., 1, 0]
            return np.stack([a.real, a.imag, b.real, b.imag], axis=-1)
        if self.n == 2:
            return np.stack([g[..., 0, 0], g[..., 1, 0]], axis=-1)
        return g.reshape(g.shape[:-2] + (self.n * self.n,))

    # -- sampling --------------------------------------------------------

    def random(self, rng, size=()):
        """Haar-distributed random elements."""
        size = (size,) if isinstance(size, int) else tuple(size)
        fam = self.spec.family
        if fam == "u1":
            return np.exp(1j * rng.uniform(-np.pi, np.pi, size))[..., None, None]
        if fam == "su2":
            q = rng.normal(size=size + (4,))
            q /= np.linalg.norm(q, axis=-1, keepdims=True)
            return _su2_from(q[..., 0] + 1j * q[..., 1], q[..., 2] + 1j * q[..., 3])
        if self.n == 2:
            return _rot2(rng.uniform(-np.pi, np.pi, size))
        z = rng.normal(size=size + (self.n, self.n))
        qm, r = np.linalg.qr(z)
        qm = qm * np.sign(np.diagonal(r, axis1=-2, axis2=-1))[..., None, :]
        det = np.linalg.det(qm)
        qm[..., :, 0] *= det[..., None]
        return qm

    def random_coords(self, rng, size, radius):
        """Uniform samples from the closed ball of the given scaled radius."""
        size = (size,) if isinstance(size, int) else tuple(size)
        v = rng.normal(size=size + (self.dim,))
        v /= np.linalg.norm(v, axis=-1, keepdims=True)
        r = radius * rng.uniform(size=size) ** (1.0 / self.dim)
        return v * r[..., None]


def _su2_from(a, b):
    a, b = np.broadcast_arrays(a, b)
    out = np.empty(a.shape + (2, 2), dtype=complex)
    out[..., 0, 0] = a
    out[..., 1, 0] = b
    out[..., 0, 1] = -np.conj(b)
    out[..., 1, 1] = np.conj(a)
    return out


def _rot2(th):
    th = np.asarray(th, dtype=float)
    return _rot(np.cos(th), np.sin(th))


def _rot(c, s):
    c, s = np.broadcast_arrays(c, s)
    out = np.empty(c.shape + (2, 2))
    out[..., 0, 0], out[..., 0, 1] = c, -s
    out[..., 1, 0], out[..., 1, 1] = s, c
    return out


def _hat3(w):
    out = np.zeros(w.shape[:-1] + (3, 3))
    out[..., 0, 1], out[..., 0, 2] = -w[..., 2], w[..., 1]
    out[..., 1, 0], out[..., 1, 2] = w[..., 2], -w[..., 0]
    out[..., 2, 0], out[..., 2, 1] = -w[..., 1], w[..., 0]
    return out


def _sinc(x):
    x = np.asarray(x, dtype=float)
    small = np.abs(x) < 1e-4
    safe = np.where(small, 1.0, x)
    return np.where(small, 1.0 - x**2 / 6.0, np.sin(safe) / safe)


def _cosc(x):
    """(1 - cos x) / x^2"""
    x = np.asarray(x, dtype=float)
    small = np.abs(x) < 1e-3
    safe = np.where(small, 1.0, x)
    return np.where(small, 0.5 - x**2 / 24.0, (1.0 - np.cos(safe)) / safe**2)


def _scale_by_angle(w, c):
    """Turn ``sin(t) * axis`` and ``cos(t)`` into ``t * axis``."""
    s = np.linalg.norm(w, axis=-1)
    t = np.arctan2(s, c)
    small = s < 1e-8
    f = np.where(small, 1.0 + s**2 / 6.0, t / np.where(small, 1.0, s))
    # cos < 0 with tiny s sits near the cut locus; keep the distance honest
    f = np.where(small & (c < 0), np.pi / np.maximum(s, 1e-300), f)
    return w * f[..., None]


@dataclass(frozen=True)
class GroupQuadrature:
    """Nodes and weights approximating the Haar probability measure."""

    group: LieGroup
    nodes: np.ndarray
    weights: np.ndarray
    resolution: int
    exact_degree: int
    tolerance: float = field(default=0.0)

    def __len__(self):
        return len(self.weights)

    def integrate(self, f):
        """Weighted sum of ``f(nodes)`` over the leading node axis."""
        vals = np.asarray(f(self.nodes))
        return np.tensordot(self.weights, vals, axes=([0], [0]))

    def translation_residual(self, f, g, side="left"):
        """``|sum w f(g h) - sum w f(h)|`` (``side='right'`` uses ``h g``)."""
        moved = self.nodes @ g if side == "right" else g @ self.nodes
        return abs(
            float(np.dot(self.weights, f(moved)) - np.dot(self.weights, f(self.nodes)))
        )

    @cached_property
    def test_basket(self):
        return _test_basket(self.group)


def _test_basket(group: LieGroup):
    rng = np.random.default_rng(20240611)
    n = group.n
    A = rng.normal(size=(n, n)) + (1j * rng.normal(size=(n, n)) if group.dtype is complex else 0)
    B = rng.normal(size=(n, n)) + (1j * rng.normal(size=(n, n)) if group.dtype is complex else 0)

    def coeff(g):
        return np.real(np.trace(A @ g, axis1=-2, axis2=-1))

    def coeff2(g):
        return np.real(np.trace(A @ g, axis1=-2, axis2=-1) * np.trace(B @ g, axis1=-2, axis2=-1))

    def smooth(g):
        return np.exp(0.5 * np.real(np.trace(B @ g, axis1=-2, axis2=-1)))

    return [coeff, coeff2, smooth]


def _measure_tolerance(quad: GroupQuadrature) -> float:
    rng = np.random.default_rng(7)
    shifts = quad.group.random(rng, 4)
    worst = 0.0
    for f in quad.test_basket:
        for g in shifts:
            for side in ("left", "right"):
                worst = max(worst, quad.translation_residual(f, g, side))
    return max(10.0 * worst, 1e-13)


def haar_quadrature(group: LieGroup, resolution: int) -> GroupQuadrature:
    """Deterministic product rule for the Haar measure.

    Circle groups use ``resolution`` equally spaced angles.  SU(2) uses
    Euler-type coordinates ``(cos(b/2) e^{i x1}, sin(b/2) e^{i x2})``: trapezoid
    grids of ``resolution`` points in both periodic angles and Gauss-Legendre
    in ``cos b``.  SO(3) is the image of the SU(2) rule under the double
    cover, with coinciding nodes merged.
    """
    if resolution < 2:
        raise ValueError("resolution must be >= 2")
    fam, n = group.spec.family, group.n
    if fam == "u1" or (fam == "so" and n == 2):
        th = 2 * np.pi * np.arange(resolution) / resolution
        nodes = np.exp(1j * th)[:, None, None] if fam == "u1" else _rot2(th)
        w = np.full(resolution, 1.0 / resolution)
        exact = resolution - 1
    elif fam == "su2" or (fam == "so" and n == 3):
        a, b, w = _su2_rule(resolution)
        if fam == "su2":
            nodes = _su2_from(a, b)
            exact = resolution - 1
        else:
            nodes, w = _merge_nodes(_su2_to_so3(_su2_from(a, b)), w)
            exact = (resolution - 1) // 2
    else:
        raise ValueError(f"no Haar quadrature for family {group.spec.name}")
    quad = GroupQuadrature(group, nodes, w, resolution, exact)
    return GroupQuadrature(group, nodes, w, resolution, exact, _measure_tolerance(quad))


def _su2_rule(resolution):
    nb = -(-(resolution + 3) // 4)
    u, wu = np.polynomial.legendre.leggauss(nb)
    xi = 2 * np.pi * np.arange(resolution) / resolution
    beta, x1, x2 = np.meshgrid(np.arccos(u), xi, xi, indexing="ij")
    w = np.broadcast_to((wu / 2)[:, None, None], beta.shape) / resolution**2
    a = np.cos(beta / 2) * np.exp(1j * x1)
    b = np.sin(beta / 2) * np.exp(1j * x2)
    return a.ravel(), b.ravel(), w.ravel().copy()


def _su2_to_so3(U):
    Ud = np.conj(np.swapaxes(U, -1, -2))
    R = np.einsum("kab,nbc,lcd,nda->nkl", _SIGMA, U, _SIGMA, Ud)
    return 0.5 * np.real(R)


def su2_to_so3(U):
    """Double cover SU(2) -> SO(3) (adjoint action on the Pauli basis)."""
    U = np.asarray(U)
    flat = U.reshape(-1, 2, 2)
    return _su2_to_so3(flat).reshape(U.shape[:-2] + (3, 3))


def _merge_nodes(nodes, w):
    keys = np.round(nodes.reshape(len(nodes), -1), 9)
    _, first, inv = np.unique(keys, axis=0, return_index=True, return_inverse=True)
    merged = np.zeros(len(first))
    np.add.at(merged, inv.ravel(), w)
    order = np.argsort(first)
    return nodes[first[order]], merged[order]
