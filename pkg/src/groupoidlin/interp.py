"""Function representations used for the correction field of a candidate map.

On the group, values are fitted by weighted least squares onto polynomials in
the ambient matrix coordinates.  With a quadrature exact to twice the
polynomial degree this is the L2 projection onto that space.  On the base box,
values live on a Chebyshev-Lobatto tensor grid and are interpolated with the
barycentric formula.
"""

from __future__ import annotations

import itertools
from functools import cached_property

import numpy as np

from .liegroup import GroupQuadrature


def monomial_exponents(nvars, degree):
    """All multisets of variable indices with total degree ``<= degree``."""
    return [e for k in range(degree + 1) for e in itertools.combinations_with_replacement(range(nvars), k)]


def monomials(y, exponents):
    """Evaluate monomials (given as index tuples) at points ``y`` (..., nvars)."""
    out = np.empty(y.shape[:-1] + (len(exponents),))
    cache = {(): np.ones(y.shape[:-1])}

    def mono(e):
        if e not in cache:
            cache[e] = mono(e[:-1]) * y[..., e[-1]]
        return cache[e]

    for k, e in enumerate(exponents):
        out[..., k] = mono(tuple(e))
    return out


class GroupBasis:
    """Least-squares polynomial fit of functions on the group."""

    def __init__(self, quadrature: GroupQuadrature, degree: int | None = None, rcond: float = 1e-10):
        self.quadrature = quadrature
        self.group = quadrature.group
        if degree is None:
            degree = max(quadrature.exact_degree // 2, 0)
        self.degree = int(degree)
        nvars = self.group.features(self.group.identity()).shape[-1]
        self.exponents = monomial_exponents(nvars, self.degree)
        self.rcond = rcond

    def __len__(self):
        return len(self.exponents)

    def features(self, g):
        return monomials(self.group.features(g), self.exponents)

    @cached_property
    def projector(self):
        """Matrix mapping nodal values to coefficients."""
        F = self.features(self.quadrature.nodes)
        sw = np.sqrt(self.quadrature.weights)
        return np.linalg.pinv(sw[:, None] * F, rcond=self.rcond) * sw[None, :]

    def fit(self, values):
        """Coefficients (M, ...) for nodal values (N, ...)."""
        values = np.asarray(values)
        flat = values.reshape(values.shape[0], -1)
        return (self.projector @ flat).reshape((len(self),) + values.shape[1:])

    def evaluate(self, coef, g):
        return np.tensordot(self.features(g), coef, axes=([-1], [0]))


class ChebyshevGrid:
    """Tensor Chebyshev-Lobatto grid on ``[-rho, rho]^d`` with barycentric interpolation.

    For odd ``k`` the centre node is exactly the origin.  Evaluation exactly at
    a node returns that node's value without arithmetic.
    """

    def __init__(self, d: int, rho: float, k: int):
        if d > 0 and k < 2:
            raise ValueError("base resolution must be >= 2")
        self.d = int(d)
        self.rho = float(rho)
        self.k = int(k) if d > 0 else 1
        j = np.arange(self.k)
        t = -np.cos(np.pi * j / max(self.k - 1, 1)) if self.k > 1 else np.zeros(1)
        if self.k % 2 == 1:
            t[self.k // 2] = 0.0
        self.nodes_1d = self.rho * t
        bw = (-1.0) ** j
        bw[0] *= 0.5
        bw[-1] *= 0.5
        self.bary = bw

    def __len__(self):
        return self.k**self.d

    @cached_property
    def points(self):
        if self.d == 0:
            return np.zeros((1, 0))
        grids = np.meshgrid(*([self.nodes_1d] * self.d), indexing="ij")
        return np.stack(grids, axis=-1).reshape(-1, self.d)

    @property
    def center_index(self):
        """Index of the origin in :attr:`points`, or None if it is not a node."""
        hits = np.nonzero(np.all(self.points == 0.0, axis=-1))[0]
        return int(hits[0]) if len(hits) else None

    def _weights_1d(self, t):
        """Lagrange basis values (..., k) at coordinates ``t``."""
        diff = t[..., None] - self.nodes_1d
        exact = diff == 0.0
        with np.errstate(divide="ignore", invalid="ignore"):
            terms = self.bary / diff
            out = terms / terms.sum(axis=-1, keepdims=True)
        hit = exact.any(axis=-1)
        if hit.any():
            out[hit] = exact[hit].astype(float)
        return out

    def weights(self, x):
        """Tensor-product Lagrange weights (..., len(self)) at base points ``x``."""
        x = np.asarray(x, dtype=float)
        if self.d == 0:
            return np.ones(x.shape[:-1] + (1,))
        w = self._weights_1d(x[..., 0])
        for i in range(1, self.d):
            wi = self._weights_1d(x[..., i])
            w = (w[..., :, None] * wi[..., None, :]).reshape(x.shape[:-1] + (-1,))
        return w

    def node_index(self, x):
        """Grid index of each point, or -1 where it is not exactly a node."""
        x = np.asarray(x, dtype=float)
        if self.d == 0:
            return np.zeros(x.shape[:-1], dtype=int)
        idx = np.zeros(x.shape[:-1], dtype=int)
        ok = np.ones(x.shape[:-1], dtype=bool)
        for i in range(self.d):
            eq = x[..., i, None] == self.nodes_1d
            ok &= eq.any(axis=-1)
            idx = idx * self.k + eq.argmax(axis=-1)
        return np.where(ok, idx, -1)
