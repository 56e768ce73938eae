"""Quadrature rules and polynomial bases on the reference square [-1, 1]^2.

All tabulations are cached per (degree, rule) and returned as read-only
arrays, so element loops can share them freely.
"""
from __future__ import annotations

import functools
from dataclasses import dataclass

import numpy as np
from numpy.polynomial import legendre as npleg

DOMAINS = ("segment", "square")


def _frozen(*arrays):
    for a in arrays:
        a.flags.writeable = False
    return arrays if len(arrays) > 1 else arrays[0]


@dataclass(frozen=True)
class QuadratureRule:
    """Gauss-Legendre rule; ``points`` has shape (n, dim)."""

    points: np.ndarray
    weights: np.ndarray
    domain: str
    n: int

    @property
    def size(self) -> int:
        return len(self.weights)

    def integrate(self, values: np.ndarray) -> np.ndarray:
        """Contract the trailing point axis of ``values`` with the weights."""
        return values @ self.weights


@functools.lru_cache(maxsize=None)
def quadrature_rule(n: int, domain: str = "square") -> QuadratureRule:
    """Gauss-Legendre rule with ``n`` points per direction.

    The square rule is the tensor product of the segment rule with the
    first coordinate varying fastest.
    """
    if n < 1:
        raise ValueError(f"need at least one quadrature point, got n={n}")
    if domain not in DOMAINS:
        raise ValueError(f"unknown domain {domain!r}")
    x, w = npleg.leggauss(n)
    if domain == "segment":
        pts, wts = x[:, None].copy(), w.copy()
    else:
        X, Y = np.meshgrid(x, x)
        pts = np.column_stack([X.ravel(), Y.ravel()])
        wts = np.outer(w, w).ravel()
    return QuadratureRule(_frozen(pts), _frozen(wts), domain, n)


# --------------------------------------------------------------------------
# one-dimensional building blocks


def legendre_table(deg: int, x) -> tuple[np.ndarray, np.ndarray]:
    """Legendre polynomials L_0..L_deg and their derivatives at ``x``.

    Returns two arrays of shape (deg + 1, len(x)).
    """
    x = np.asarray(x, dtype=float)
    vals = npleg.legvander(x, deg).T
    ders = np.empty_like(vals)
    eye = np.eye(deg + 1)
    for m in range(deg + 1):
        ders[m] = npleg.legval(x, npleg.legder(eye[m]))
    return vals, ders


@functools.lru_cache(maxsize=None)
def gll_nodes(deg: int) -> np.ndarray:
    """Gauss-Lobatto-Legendre nodes for degree ``deg`` (``deg + 1`` nodes).

    Degree 0 degenerates to the midpoint.
    """
    if deg == 0:
        return _frozen(np.zeros(1))
    inner = npleg.legroots(npleg.legder(np.eye(deg + 1)[deg])) if deg > 1 else []
    return _frozen(np.concatenate([[-1.0], np.sort(inner), [1.0]]))


@functools.lru_cache(maxsize=None)
def _lagrange_coeffs(deg: int) -> np.ndarray:
    vander = npleg.legvander(gll_nodes(deg), deg)
    return _frozen(np.linalg.solve(vander, np.eye(deg + 1)))


def lagrange_table(deg: int, x) -> tuple[np.ndarray, np.ndarray]:
    """Lagrange polynomials on the GLL nodes of degree ``deg`` and derivatives."""
    vals, ders = legendre_table(deg, x)
    c = _lagrange_coeffs(deg)
    return c.T @ vals, c.T @ ders


# --------------------------------------------------------------------------
# scalar Q_r


@dataclass(frozen=True)
class ScalarBasisSet:
    """Nodal Q_r basis tabulated at ``points``.

    values: (nb, npts); gradients: (nb, npts, 2) in reference coordinates.
    Basis index is ``j * (r + 1) + i`` for node (i, j), first coordinate
    fastest.
    """

    degree: int
    points: np.ndarray
    values: np.ndarray
    gradients: np.ndarray

    @property
    def dim(self) -> int:
        return self.values.shape[0]


def scalar_nodes(r: int) -> np.ndarray:
    """Reference coordinates of the Q_r nodes, ordered like the basis."""
    g = gll_nodes(r)
    X, Y = np.meshgrid(g, g)
    return np.column_stack([X.ravel(), Y.ravel()])


def scalar_basis_eval(r: int, pts) -> tuple[np.ndarray, np.ndarray]:
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    lx, dx = lagrange_table(r, pts[:, 0])
    ly, dy = lagrange_table(r, pts[:, 1])
    vals = (ly[:, None, :] * lx[None, :, :]).reshape(-1, len(pts))
    grads = np.stack(
        [
            (ly[:, None, :] * dx[None, :, :]).reshape(-1, len(pts)),
            (dy[:, None, :] * lx[None, :, :]).reshape(-1, len(pts)),
        ],
        axis=-1,
    )
    return vals, grads


@functools.lru_cache(maxsize=None)
def _scalar_basis_cached(r: int, n: int, domain: str) -> ScalarBasisSet:
    pts = quadrature_rule(n, domain).points
    vals, grads = scalar_basis_eval(r, pts)
    return ScalarBasisSet(r, pts, *_frozen(vals, grads))


def scalar_basis(r: int, rule: QuadratureRule) -> ScalarBasisSet:
    if r < 0:
        raise ValueError(f"degree must be non-negative, got {r}")
    return _scalar_basis_cached(r, rule.n, rule.domain)


# --------------------------------------------------------------------------
# Raviart-Thomas RT_r = P_{r+1,r} x P_{r,r+1}


@dataclass(frozen=True)
class VectorBasisSet:
    """RT_r basis tabulated at ``points``.

    The first ``4 (r + 1)`` members carry the normal flux through a single
    edge each (``r + 1`` per edge, edges ordered bottom, right, top, left),
    with outward normal trace equal to a Legendre polynomial of the edge
    coordinate. The remaining members have vanishing normal trace.
    """

    degree: int
    points: np.ndarray
    values: np.ndarray
    divergences: np.ndarray

    @property
    def dim(self) -> int:
        return self.values.shape[0]

    @property
    def n_edge(self) -> int:
        return 4 * (self.degree + 1)


def rt_dim(r: int) -> int:
    return 2 * (r + 1) * (r + 2)


def rt_basis_eval(r: int, pts) -> tuple[np.ndarray, np.ndarray]:
    """Values (nb, npts, 2) and divergences (nb, npts) of the RT_r basis."""
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    x, y = pts[:, 0], pts[:, 1]
    lx, dlx = lagrange_table(r + 1, x)
    ly, dly = lagrange_table(r + 1, y)
    mx, dmx = legendre_table(r, x)
    my, dmy = legendre_table(r, y)
    zero = np.zeros(len(pts))

    vals, divs = [], []

    def add_x(a, da, b):
        # q = (a(x) b(y), 0)
        vals.append(np.column_stack([a * b, zero]))
        divs.append(da * b)

    def add_y(a, b, db):
        # q = (0, a(x) b(y))
        vals.append(np.column_stack([zero, a * b]))
        divs.append(a * db)

    last = r + 1
    for j in range(r + 1):  # bottom, outward normal (0, -1)
        add_y(-mx[j], ly[0], dly[0])
    for j in range(r + 1):  # right
        add_x(lx[last], dlx[last], my[j])
    for j in range(r + 1):  # top, local edge coordinate runs right to left
        add_y(mx[j] * (-1) ** j, ly[last], dly[last])
    for j in range(r + 1):  # left, local edge coordinate runs top to bottom
        add_x(-lx[0] * (-1) ** j, -dlx[0] * (-1) ** j, my[j])
    for i in range(1, last):
        for j in range(r + 1):
            add_x(lx[i], dlx[i], my[j])
    for i in range(1, last):
        for j in range(r + 1):
            add_y(mx[j], ly[i], dly[i])
    return np.array(vals), np.array(divs)


@functools.lru_cache(maxsize=None)
def _rt_basis_cached(r: int, n: int, domain: str) -> VectorBasisSet:
    pts = quadrature_rule(n, domain).points
    vals, divs = rt_basis_eval(r, pts)
    return VectorBasisSet(r, pts, *_frozen(vals, divs))


def rt_basis(r: int, rule: QuadratureRule) -> VectorBasisSet:
    if r < 0:
        raise ValueError(f"degree must be non-negative, got {r}")
    return _rt_basis_cached(r, rule.n, rule.domain)


# --------------------------------------------------------------------------
# edge traces


@dataclass(frozen=True)
class EdgeBasisSet:
    """Polynomial trace basis of degree ``degree`` on one edge.

    ``continuity="discontinuous"`` uses Legendre polynomials per edge;
    ``"continuous"`` uses GLL-nodal polynomials whose end nodes are shared
    with the neighbouring edges of the boundary loop.
    """

    degree: int
    continuity: str

    @property
    def n_per_edge(self) -> int:
        return self.degree + 1

    @property
    def dim_boundary(self) -> int:
        if self.continuity == "continuous":
            return 4 * self.degree
        return 4 * (self.degree + 1)

    def eval(self, s) -> np.ndarray:
        """Values (n_per_edge, len(s)) at edge coordinates ``s`` in [-1, 1]."""
        if self.continuity == "continuous":
            return lagrange_table(self.degree, s)[0]
        return legendre_table(self.degree, s)[0]


def trace_basis(r: int, continuity: str = "discontinuous") -> EdgeBasisSet:
    if r < 0:
        raise ValueError(f"degree must be non-negative, got {r}")
    if continuity not in ("continuous", "discontinuous"):
        raise ValueError(f"unknown continuity {continuity!r}")
    if continuity == "continuous" and r < 1:
        raise ValueError("a vertex-continuous trace needs degree >= 1")
    return EdgeBasisSet(r, continuity)
