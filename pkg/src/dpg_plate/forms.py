"""Element-local ultra-weak Reissner-Mindlin forms and test Gram matrices.

Unknowns per element (columns of B), in this order::

    V (RT_p), M rows 1 and 2 (RT_p each), w, psi_1, psi_2, r (Q_p)
    | w_hat, psi_hat_1, psi_hat_2 (vertex-continuous, degree p+1)
    | V_hat_n, M_hat_n1, M_hat_n2 (per edge, degree p)

Test functions (rows), all of enriched degree r::

    q (RT_r), tau rows 1 and 2 (RT_r), z, phi_1, phi_2, s (Q_r)

Vector-valued unknowns and tests are Piola mapped, scalar ones are mapped
by composition. Trace columns are built in the element's local edge
orientation and multiplied by per-element orientation signs supplied by
the caller (see :mod:`dpg_plate.system`).
"""
from __future__ import annotations

import functools
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .basis import (
    gll_nodes,
    legendre_table,
    lagrange_table,
    quadrature_rule,
    rt_basis_eval,
    rt_dim,
    scalar_basis_eval,
)
from .mesh import QuadElement, bilinear_geometry, inverse_transpose, ref_edge_points


class GeometryError(ValueError):
    """Raised when an element map is singular or inverted."""


@dataclass(frozen=True)
class MaterialParams:
    """Rescaled plate parameters: thickness t, Poisson ratio nu, shear factor kappa."""

    t: float = 0.1
    nu: float = 0.3
    kappa: float = 5.0 / 6.0

    def __post_init__(self):
        if not 0.0 < self.t <= 1.0:
            raise ValueError(f"thickness must lie in (0, 1], got {self.t}")
        if not 0.0 <= self.nu < 0.5:
            raise ValueError(f"Poisson ratio must lie in [0, 0.5), got {self.nu}")
        if not self.kappa > 0.0:
            raise ValueError(f"shear correction factor must be positive, got {self.kappa}")

    @property
    def shear_compliance(self) -> float:
        """t^2 / kappa, the coefficient of V in the first constitutive equation."""
        return self.t ** 2 / self.kappa


def compliance_inverse(tau, nu: float) -> np.ndarray:
    """Bending compliance 6 (tau - nu / (1 + nu) tr(tau) I) for (..., 2, 2) tensors."""
    tau = np.asarray(tau, dtype=float)
    tr = tau[..., 0, 0] + tau[..., 1, 1]
    return 6.0 * (tau - (nu / (1.0 + nu)) * tr[..., None, None] * np.eye(2))


def compliance(eps, nu: float) -> np.ndarray:
    """Inverse of :func:`compliance_inverse`: (eps + nu / (1 - nu) tr(eps) I) / 6."""
    eps = np.asarray(eps, dtype=float)
    tr = eps[..., 0, 0] + eps[..., 1, 1]
    return (eps + (nu / (1.0 - nu)) * tr[..., None, None] * np.eye(2)) / 6.0


# --------------------------------------------------------------------------
# layouts


def _slices(names, sizes):
    out, start = {}, 0
    for name, n in zip(names, sizes):
        out[name] = slice(start, start + n)
        start += n
    return out, start


@dataclass(frozen=True)
class TrialLayout:
    degree: int

    def __post_init__(self):
        if self.degree < 1:
            raise ValueError(f"trial degree must be >= 1, got {self.degree}")

    @property
    def n_rt(self) -> int:
        return rt_dim(self.degree)

    @property
    def n_q(self) -> int:
        return (self.degree + 1) ** 2

    @property
    def n_edge(self) -> int:
        return 4 * (self.degree + 1)

    @functools.cached_property
    def _layout(self):
        nrt, nq, ne = self.n_rt, self.n_q, self.n_edge
        names = ["V", "M1", "M2", "w", "psi1", "psi2", "r",
                 "what", "psihat1", "psihat2", "vhat", "mhat1", "mhat2"]
        sizes = [nrt, nrt, nrt, nq, nq, nq, nq, ne, ne, ne, ne, ne, ne]
        return _slices(names, sizes)

    @property
    def slices(self) -> dict[str, slice]:
        return self._layout[0]

    @property
    def n_local(self) -> int:
        return self._layout[1]

    @property
    def n_interior(self) -> int:
        return 3 * self.n_rt + 4 * self.n_q

    @property
    def n_trace(self) -> int:
        return 6 * self.n_edge

    @property
    def interior(self) -> slice:
        return slice(0, self.n_interior)

    @property
    def trace(self) -> slice:
        return slice(self.n_interior, self.n_local)

    def field_counts(self) -> dict[str, int]:
        return {"V": self.n_rt, "M": 2 * self.n_rt, "w": self.n_q,
                "psi": 2 * self.n_q, "r": self.n_q}

    def trace_counts(self) -> dict[str, int]:
        return {"what": self.n_edge, "psihat": 2 * self.n_edge,
                "vhat": self.n_edge, "mhat": 2 * self.n_edge}


@dataclass(frozen=True)
class TestLayout:
    degree: int

    @property
    def n_rt(self) -> int:
        return rt_dim(self.degree)

    @property
    def n_q(self) -> int:
        return (self.degree + 1) ** 2

    @functools.cached_property
    def _layout(self):
        names = ["q", "tau1", "tau2", "z", "phi1", "phi2", "s"]
        sizes = [self.n_rt] * 3 + [self.n_q] * 4
        return _slices(names, sizes)

    @property
    def slices(self) -> dict[str, slice]:
        return self._layout[0]

    @property
    def n_local(self) -> int:
        return self._layout[1]

    def block_sizes(self) -> dict[str, int]:
        return {"q": self.n_rt, "tau": 2 * self.n_rt, "z": self.n_q,
                "phi": 2 * self.n_q, "s": self.n_q}


# --------------------------------------------------------------------------
# reference tabulations


@dataclass(frozen=True)
class ReferenceTables:
    p: int
    r: int
    n: int
    vol_pts: np.ndarray
    vol_w: np.ndarray
    q_val: np.ndarray      # test RT_r (nq, Q, 2)
    q_div: np.ndarray
    z_val: np.ndarray      # test Q_r (nz, Q)
    z_grad: np.ndarray
    V_val: np.ndarray      # trial RT_p
    w_val: np.ndarray      # trial Q_p
    edge_t: np.ndarray     # Gauss points on an edge, local coordinate
    edge_w: np.ndarray
    edge_pts: np.ndarray   # (4 n, 2), edge-major
    q_edge: np.ndarray     # (nq, 4 n, 2)
    z_edge: np.ndarray     # (nz, 4 n)
    cont: np.ndarray       # (p + 2, n) vertex-continuous trace basis
    leg: np.ndarray        # (p + 1, n) discontinuous trace basis

    @property
    def what_slots(self) -> list[np.ndarray]:
        """Local w_hat slot of each edge node, per local edge."""
        p = self.p
        out = []
        for k in range(4):
            out.append(np.array([k] + [4 + k * p + j for j in range(p)] + [(k + 1) % 4]))
        return out


@functools.lru_cache(maxsize=None)
def reference_tables(p: int, r: int, n: int) -> ReferenceTables:
    rule = quadrature_rule(n, "square")
    seg = quadrature_rule(n, "segment")
    t = seg.points[:, 0]
    q_val, q_div = rt_basis_eval(r, rule.points)
    z_val, z_grad = scalar_basis_eval(r, rule.points)
    V_val, _ = rt_basis_eval(p, rule.points)
    w_val, _ = scalar_basis_eval(p, rule.points)
    edge_pts = np.concatenate([ref_edge_points(k, t) for k in range(4)])
    q_edge, _ = rt_basis_eval(r, edge_pts)
    z_edge, _ = scalar_basis_eval(r, edge_pts)
    cont = lagrange_table(p + 1, t)[0]
    leg = legendre_table(p, t)[0]
    arrays = [rule.points, rule.weights, q_val, q_div, z_val, z_grad, V_val, w_val,
              t, seg.weights, edge_pts, q_edge, z_edge, cont, leg]
    for a in arrays:
        a.flags.writeable = False
    return ReferenceTables(p, r, n, *arrays)


def default_quadrature(p: int, r: int | None = None) -> int:
    """p + 5 points per direction, raised if needed to integrate the test Gram exactly."""
    r = p + 3 if r is None else r
    return max(p + 5, r + 2)


# --------------------------------------------------------------------------
# batched element matrices


@dataclass
class ElementBatch:
    """Element matrices for a batch of elements.

    The test Gram matrix is block diagonal: ``Gq`` serves q and both rows of
    tau, ``Gz`` serves z and both components of phi, ``Gs`` serves s.
    """

    B: np.ndarray
    Gq: np.ndarray
    Gz: np.ndarray
    Gs: np.ndarray
    l: np.ndarray
    trial: TrialLayout
    test: TestLayout

    def __len__(self):
        return len(self.B)

    def gram(self) -> np.ndarray:
        """Full (E, ntest, ntest) Gram matrices."""
        E, nt = len(self.B), self.test.n_local
        G = np.zeros((E, nt, nt))
        blocks = {"q": self.Gq, "tau1": self.Gq, "tau2": self.Gq, "z": self.Gz,
                  "phi1": self.Gz, "phi2": self.Gz, "s": self.Gs}
        for name, sl in self.test.slices.items():
            G[:, sl, sl] = blocks[name]
        return G

    def gram_cholesky(self):
        try:
            return tuple(np.linalg.cholesky(G) for G in (self.Gq, self.Gz, self.Gs))
        except np.linalg.LinAlgError as exc:
            raise np.linalg.LinAlgError("test Gram matrix is not positive definite") from exc

    def whiten(self, chol, X: np.ndarray) -> np.ndarray:
        """Apply L^{-1} (G = L L^T) to a stack of test-space vectors/matrices."""
        Lq, Lz, Ls = chol
        mats = {"q": Lq, "tau1": Lq, "tau2": Lq, "z": Lz, "phi1": Lz, "phi2": Lz, "s": Ls}
        out = np.empty_like(X)
        vec = X.ndim == 2
        for name, sl in self.test.slices.items():
            rhs = X[:, sl, None] if vec else X[:, sl]
            sol = np.linalg.solve(mats[name], rhs)
            out[:, sl] = sol[..., 0] if vec else sol
        return out


def _mass(a, b):
    """sum_q a[e, i, q, ...] b[e, j, q, ...] -> (E, i, j); a carries the weights."""
    E, m = a.shape[:2]
    n = b.shape[1]
    return np.matmul(a.reshape(E, m, -1), b.reshape(E, n, -1).transpose(0, 2, 1))


def edge_frames(coords: np.ndarray):
    """Outward unit normals (E, 4, 2) and lengths (E, 4) of the local edges."""
    d = np.roll(coords, -1, axis=1) - coords
    length = np.hypot(d[..., 0], d[..., 1])
    normal = np.stack([d[..., 1], -d[..., 0]], axis=-1) / length[..., None]
    return normal, length


def element_matrices(coords: np.ndarray, trial: TrialLayout, test: TestLayout,
                     mat: MaterialParams, *, nquad: int | None = None,
                     load: Callable | None = None, trace_signs: np.ndarray | None = None
                     ) -> ElementBatch:
    """B, Gram blocks and load vectors for a batch of elements.

    coords: (E, 4, 2). ``load`` is a scalar transverse load p(x, y) taking
    arrays; it enters the z block only. ``trace_signs`` (E, n_trace)
    multiplies the trace columns (orientation of shared unknowns).
    """
    coords = np.asarray(coords, dtype=float)
    p, r = trial.degree, test.degree
    T = reference_tables(p, r, nquad or default_quadrature(p, r))
    E = len(coords)
    ts, cs = test.slices, trial.slices

    x, J, det = bilinear_geometry(coords, T.vol_pts)
    if np.any(det <= 0):
        raise GeometryError("non-positive Jacobian determinant at a quadrature point")
    dx = det * T.vol_w
    JiT = inverse_transpose(J, det)

    qv = np.einsum("eqij,bqj->ebqi", J, T.q_val) / det[:, None, :, None]
    qdiv = T.q_div[None] / det[:, None, :]
    zg = np.einsum("eqij,bqj->ebqi", JiT, T.z_grad)
    zv = np.broadcast_to(T.z_val, (E,) + T.z_val.shape)
    Vv = np.einsum("eqij,bqj->ebqi", J, T.V_val) / det[:, None, :, None]
    wv = np.broadcast_to(T.w_val, (E,) + T.w_val.shape)

    w4 = dx[:, None, :, None]
    w3 = dx[:, None, :]
    qv_w, qdiv_w, zv_w, zg_w = qv * w4, qdiv * w3, zv * w3, zg * w4

    B = np.zeros((E, test.n_local, trial.n_local))
    qV = [[_mass(qv_w[..., a], Vv[..., c]) for c in range(2)] for a in range(2)]
    qV_dot = qV[0][0] + qV[1][1]
    qdiv_w_ = _mass(qdiv_w, wv)
    qw = [_mass(qv_w[..., c], wv) for c in range(2)]
    zgV = _mass(zg_w, Vv)
    zV = [_mass(zv_w, Vv[..., c]) for c in range(2)]

    # (V, t^2/kappa q + grad z - phi)
    B[:, ts["q"], cs["V"]] = mat.shear_compliance * qV_dot
    B[:, ts["z"], cs["V"]] = zgV
    B[:, ts["phi1"], cs["V"]] = -zV[0]
    B[:, ts["phi2"], cs["V"]] = -zV[1]
    # (M, C^{-1} tau + grad phi + s J)
    lam = mat.nu / (1.0 + mat.nu)
    for a, rows in enumerate(("tau1", "tau2")):
        for c, cols in enumerate(("M1", "M2")):
            blk = -lam * qV[a][c]
            if a == c:
                blk = blk + qV_dot
            B[:, ts[rows], cs[cols]] = 6.0 * blk
    B[:, ts["phi1"], cs["M1"]] = zgV
    B[:, ts["phi2"], cs["M2"]] = zgV
    B[:, ts["s"], cs["M1"]] = zV[1]
    B[:, ts["s"], cs["M2"]] = -zV[0]
    # (w, div q) + (psi, q + div tau) + (r J, tau)
    B[:, ts["q"], cs["w"]] = qdiv_w_
    B[:, ts["q"], cs["psi1"]] = qw[0]
    B[:, ts["q"], cs["psi2"]] = qw[1]
    B[:, ts["tau1"], cs["psi1"]] = qdiv_w_
    B[:, ts["tau2"], cs["psi2"]] = qdiv_w_
    B[:, ts["tau1"], cs["r"]] = qw[1]
    B[:, ts["tau2"], cs["r"]] = -qw[0]

    # skeleton terms
    n = T.n
    _, Je, dete = bilinear_geometry(coords, T.edge_pts)
    if np.any(dete <= 0):
        raise GeometryError("non-positive Jacobian determinant on an edge")
    qe = np.einsum("eqij,bqj->ebqi", Je, T.q_edge) / dete[:, None, :, None]
    normal, length = edge_frames(coords)
    ds = 0.5 * length[:, :, None] * T.edge_w[None, None, :]          # (E, 4, n)
    flux = np.einsum("ebkni,eki->ebkn", qe.reshape(E, -1, 4, n, 2), normal)
    flux_w = flux * ds[:, None]
    z_e = T.z_edge.reshape(-1, 4, n)
    ne = p + 1
    for k in range(4):
        slots = T.what_slots[k]
        blk = -np.einsum("ebn,jn->ebj", flux_w[:, :, k], T.cont)
        for rows, cols in (("q", "what"), ("tau1", "psihat1"), ("tau2", "psihat2")):
            sub = B[:, ts[rows], cs[cols]]
            sub[:, :, slots] += blk
            B[:, ts[rows], cs[cols]] = sub
        blk = -np.einsum("bn,en,jn->ebj", z_e[:, k], ds[:, k], T.leg)
        edge_slots = slice(k * ne, (k + 1) * ne)
        for rows, cols in (("z", "vhat"), ("phi1", "mhat1"), ("phi2", "mhat2")):
            start = cs[cols].start
            B[:, ts[rows], start + edge_slots.start:start + edge_slots.stop] = blk

    if trace_signs is not None:
        B[:, :, trial.trace] *= np.asarray(trace_signs)[:, None, :]

    # test Gram (broken graph norms)
    Gq = _mass(qv_w, qv) + _mass(qdiv_w, qdiv)
    Gs = _mass(zv_w, zv)
    Gz = Gs + _mass(zg_w, zg)

    l = np.zeros((E, test.n_local))
    if load is not None:
        pv = np.asarray(load(x[..., 0], x[..., 1]), dtype=float)
        l[:, ts["z"]] = np.einsum("bq,eq->eb", T.z_val, pv * dx)
    return ElementBatch(B, Gq, Gz, Gs, l, trial, test)


# --------------------------------------------------------------------------
# single-element conveniences


@dataclass
class ElementSystem:
    B: np.ndarray
    G: np.ndarray
    l: np.ndarray
    trial: TrialLayout
    test: TestLayout

    @property
    def interior(self) -> slice:
        return self.trial.interior

    @property
    def trace(self) -> slice:
        return self.trial.trace


def _single(elem: QuadElement, degree: int, mat: MaterialParams | None, enrichment: int,
            nquad, load=None, trace_signs=None) -> ElementBatch:
    trial, test = TrialLayout(degree), TestLayout(degree + enrichment)
    signs = None if trace_signs is None else np.asarray(trace_signs)[None]
    return element_matrices(elem.coords[None], trial, test, mat or MaterialParams(),
                            nquad=nquad, load=load, trace_signs=signs)


def element_b_matrix(elem: QuadElement, degree: int, mat: MaterialParams, *,
                     enrichment: int = 3, nquad: int | None = None, trace_signs=None) -> np.ndarray:
    return _single(elem, degree, mat, enrichment, nquad, trace_signs=trace_signs).B[0]


def element_gram(elem: QuadElement, r: int, *, nquad: int | None = None) -> np.ndarray:
    """Test Gram matrix of enriched degree ``r`` (needs r >= 1)."""
    batch = _single(elem, max(1, r - 3), None, r - max(1, r - 3), nquad)
    return batch.gram()[0]


def element_load(elem: QuadElement, load: Callable, r: int, *, nquad: int | None = None) -> np.ndarray:
    batch = _single(elem, max(1, r - 3), None, r - max(1, r - 3), nquad, load=load)
    return batch.l[0]


def element_system(elem: QuadElement, degree: int, mat: MaterialParams, *, load=None,
                   enrichment: int = 3, nquad: int | None = None, trace_signs=None) -> ElementSystem:
    b = _single(elem, degree, mat, enrichment, nquad, load=load, trace_signs=trace_signs)
    return ElementSystem(b.B[0], b.gram()[0], b.l[0], b.trial, b.test)


def gll_trace_nodes(p: int) -> np.ndarray:
    """Edge coordinates of the vertex-continuous trace nodes (degree p + 1)."""
    return gll_nodes(p + 1)
