"""Structured quadrilateral meshes of the unit square.

Elements are bilinear images of the reference square [-1, 1]^2 with
vertices listed counterclockwise; local edge ``k`` runs from local vertex
``k`` to ``k + 1``. Each skeleton edge stores its vertices with the lower
index first (the direction of the edge coordinate) and a unit normal that
points out of the lower-indexed adjacent element.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Literal, NamedTuple

import numpy as np

MeshKind = Literal["uniform", "trapezoidal"]
MESH_KINDS = ("uniform", "trapezoidal")

# reference coordinates of the local vertices
REF_VERTICES = np.array([[-1.0, -1.0], [1.0, -1.0], [1.0, 1.0], [-1.0, 1.0]])


def ref_edge_points(k: int, t) -> np.ndarray:
    """Reference points on local edge ``k`` at edge coordinates ``t``."""
    t = np.asarray(t, dtype=float)
    a, b = REF_VERTICES[k], REF_VERTICES[(k + 1) % 4]
    return 0.5 * (1 - t)[:, None] * a + 0.5 * (1 + t)[:, None] * b


def _shape(pts):
    xi, eta = pts[:, 0], pts[:, 1]
    N = 0.25 * np.stack([(1 - xi) * (1 - eta), (1 + xi) * (1 - eta),
                         (1 + xi) * (1 + eta), (1 - xi) * (1 + eta)])
    dxi = 0.25 * np.stack([-(1 - eta), 1 - eta, 1 + eta, -(1 + eta)])
    deta = 0.25 * np.stack([-(1 - xi), -(1 + xi), 1 + xi, 1 - xi])
    return N, dxi, deta


def bilinear_geometry(coords: np.ndarray, pts: np.ndarray):
    """Bilinear map of a batch of elements.

    coords: (E, 4, 2) vertex coordinates; pts: (Q, 2) reference points.
    Returns physical points (E, Q, 2), Jacobians (E, Q, 2, 2) with
    ``J[..., i, j] = dx_i / dxhat_j``, and determinants (E, Q).
    """
    coords = np.asarray(coords, dtype=float)
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    N, dxi, deta = _shape(pts)
    x = np.einsum("ekd,kq->eqd", coords, N)
    J = np.empty(x.shape + (2,))
    J[..., 0] = np.einsum("ekd,kq->eqd", coords, dxi)
    J[..., 1] = np.einsum("ekd,kq->eqd", coords, deta)
    det = J[..., 0, 0] * J[..., 1, 1] - J[..., 0, 1] * J[..., 1, 0]
    return x, J, det


def inverse_transpose(J: np.ndarray, det: np.ndarray) -> np.ndarray:
    """J^{-T} for a stack of 2x2 matrices."""
    out = np.empty_like(J)
    out[..., 0, 0] = J[..., 1, 1]
    out[..., 0, 1] = -J[..., 1, 0]
    out[..., 1, 0] = -J[..., 0, 1]
    out[..., 1, 1] = J[..., 0, 0]
    return out / det[..., None, None]


@dataclass(frozen=True)
class QuadElement:
    vertex_ids: tuple[int, int, int, int]
    coords: np.ndarray

    @property
    def map_coeffs(self) -> np.ndarray:
        """(a0, a1, a2, a3, b0, b1, b2, b3) with
        x = a0 + a1 xi + a2 eta + a3 xi eta and y likewise with b."""
        c = self.coords
        sgn = REF_VERTICES
        out = []
        for d in range(2):
            v = c[:, d]
            out += [v.sum() / 4, (sgn[:, 0] * v).sum() / 4,
                    (sgn[:, 1] * v).sum() / 4, (sgn[:, 0] * sgn[:, 1] * v).sum() / 4]
        return np.array(out)

    @property
    def is_affine(self) -> bool:
        c = self.map_coeffs
        scale = np.abs(c).max()
        return abs(c[3]) <= 1e-14 * scale and abs(c[7]) <= 1e-14 * scale

    @property
    def area(self) -> float:
        x, y = self.coords[:, 0], self.coords[:, 1]
        return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))

    @property
    def diameter(self) -> float:
        c = self.coords
        return float(max(np.linalg.norm(c[i] - c[j]) for i in range(4) for j in range(i)))

    def is_convex(self) -> bool:
        c = self.coords
        e = np.roll(c, -1, axis=0) - c
        cross = e[:, 0] * np.roll(e, -1, axis=0)[:, 1] - e[:, 1] * np.roll(e, -1, axis=0)[:, 0]
        return bool(np.all(cross > 0))


def map_to_physical(elem: QuadElement, xhat):
    """Physical point, Jacobian and its determinant at reference point(s).

    A single point (shape (2,)) returns unbatched results.
    """
    xhat = np.asarray(xhat, dtype=float)
    single = xhat.ndim == 1
    if np.any(np.abs(xhat) > 1 + 1e-12):
        raise ValueError("reference point outside [-1, 1]^2")
    x, J, det = bilinear_geometry(elem.coords[None], np.atleast_2d(xhat))
    x, J, det = x[0], J[0], det[0]
    if single:
        return x[0], J[0], float(det[0])
    return x, J, det


def piola_transform(elem: QuadElement, xhat, qhat) -> np.ndarray:
    """Contravariant Piola map J qhat / det J of reference vector value(s)."""
    _, J, det = map_to_physical(elem, xhat)
    qhat = np.asarray(qhat, dtype=float)
    if np.ndim(det) == 0:
        if det <= 0:
            raise ValueError("non-positive Jacobian determinant")
        return J @ qhat / det
    if np.any(det <= 0):
        raise ValueError("non-positive Jacobian determinant")
    return np.einsum("qij,qj->qi", J, qhat) / det[:, None]


@dataclass(frozen=True)
class Edge:
    vertex_ids: tuple[int, int]
    left_elem: int
    right_elem: int | None
    global_normal: np.ndarray

    @property
    def is_boundary(self) -> bool:
        return self.right_elem is None


class EdgeGeometry(NamedTuple):
    length: float
    outward_sign: int
    local_edge: int
    flipped: bool
    param_map: Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True, eq=False)
class Mesh:
    vertices: np.ndarray          # (nV, 2)
    elements: np.ndarray          # (nE, 4) counterclockwise vertex ids
    edges: np.ndarray             # (nEd, 2) vertex ids, lower first
    edge_elements: np.ndarray     # (nEd, 2) [left, right]; right = -1 on the boundary
    edge_normals: np.ndarray      # (nEd, 2)
    element_edges: np.ndarray     # (nE, 4) global edge of local edge k
    element_edge_flip: np.ndarray  # (nE, 4) local traversal opposes edge direction
    element_edge_sign: np.ndarray  # (nE, 4) +1 if global normal is outward
    N: int = 0
    kind: str = "uniform"
    distortion: float = 0.0
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    @classmethod
    def from_arrays(cls, vertices, elements, *, N=0, kind="uniform", distortion=0.0,
                    edge_order=None) -> "Mesh":
        """Build the skeleton topology for the given vertices and elements.

        ``edge_order`` optionally permutes the edge numbering: new edge ``i``
        is the ``edge_order[i]``-th edge in discovery order.
        """
        vertices = np.asarray(vertices, dtype=float)
        elements = np.asarray(elements, dtype=np.int64)
        keys: dict[tuple[int, int], int] = {}
        owners: list[list[int]] = []
        for e, vids in enumerate(elements):
            for k in range(4):
                a, b = int(vids[k]), int(vids[(k + 1) % 4])
                key = (min(a, b), max(a, b))
                if key not in keys:
                    keys[key] = len(owners)
                    owners.append([e])
                else:
                    owners[keys[key]].append(e)
        if any(len(o) > 2 for o in owners):
            raise ValueError("non-manifold skeleton: edge shared by more than two elements")
        edge_list = list(keys)
        if edge_order is not None:
            edge_order = np.asarray(edge_order)
            if sorted(edge_order.tolist()) != list(range(len(edge_list))):
                raise ValueError("edge_order is not a permutation")
            edge_list = [edge_list[i] for i in edge_order]
            owners = [owners[i] for i in edge_order]
            keys = {key: i for i, key in enumerate(edge_list)}
        edges = np.array(edge_list, dtype=np.int64)
        edge_elements = np.array([[o[0], o[1] if len(o) == 2 else -1] for o in owners],
                                 dtype=np.int64)

        nE = len(elements)
        element_edges = np.empty((nE, 4), dtype=np.int64)
        flip = np.empty((nE, 4), dtype=bool)
        sign = np.empty((nE, 4), dtype=np.int64)
        normals = np.empty((len(edges), 2))
        for e, vids in enumerate(elements):
            for k in range(4):
                a, b = int(vids[k]), int(vids[(k + 1) % 4])
                g = keys[(min(a, b), max(a, b))]
                element_edges[e, k] = g
                flip[e, k] = a != edges[g, 0]
                left = edge_elements[g, 0] == e
                sign[e, k] = 1 if left else -1
                if left:
                    d = vertices[b] - vertices[a]
                    normals[g] = np.array([d[1], -d[0]]) / np.hypot(*d)
        return cls(vertices, elements, edges, edge_elements, normals, element_edges,
                   flip, sign, N=N, kind=kind, distortion=distortion)

    # ------------------------------------------------------------------ sizes
    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_elements(self) -> int:
        return len(self.elements)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @property
    def coords(self) -> np.ndarray:
        """(nE, 4, 2) element vertex coordinates."""
        if "coords" not in self._cache:
            c = self.vertices[self.elements]
            c.flags.writeable = False
            self._cache["coords"] = c
        return self._cache["coords"]

    @property
    def boundary_edges(self) -> np.ndarray:
        return self.edge_elements[:, 1] < 0

    @property
    def boundary_vertices(self) -> np.ndarray:
        mask = np.zeros(self.n_vertices, dtype=bool)
        mask[self.edges[self.boundary_edges].ravel()] = True
        return mask

    @property
    def h(self) -> float:
        c = self.coords
        d = [np.linalg.norm(c[:, i] - c[:, j], axis=1) for i in range(4) for j in range(i)]
        return float(np.max(d))

    @property
    def edge_lengths(self) -> np.ndarray:
        d = self.vertices[self.edges[:, 1]] - self.vertices[self.edges[:, 0]]
        return np.hypot(d[:, 0], d[:, 1])

    def element_areas(self) -> np.ndarray:
        x, y = self.coords[..., 0], self.coords[..., 1]
        return 0.5 * (np.sum(x * np.roll(y, -1, axis=1), axis=1)
                      - np.sum(y * np.roll(x, -1, axis=1), axis=1))

    def affine_mask(self) -> np.ndarray:
        c = self.coords
        defect = c[:, 0] + c[:, 2] - c[:, 1] - c[:, 3]
        return np.all(np.abs(defect) <= 1e-14 * max(1.0, np.abs(c).max()), axis=1)

    # ----------------------------------------------------------------- views
    def element(self, i: int) -> QuadElement:
        return QuadElement(tuple(int(v) for v in self.elements[i]), self.coords[i].copy())

    def edge(self, i: int) -> Edge:
        left, right = (int(v) for v in self.edge_elements[i])
        return Edge(tuple(int(v) for v in self.edges[i]), left,
                    None if right < 0 else right, self.edge_normals[i].copy())

    def renumber_edges(self, perm) -> "Mesh":
        """Same mesh with edge ``i`` taken from old edge ``perm[i]``."""
        discovery = Mesh.from_arrays(self.vertices, self.elements)
        if not np.array_equal(discovery.edges, self.edges):
            raise ValueError("renumbering is only supported from the canonical numbering")
        return Mesh.from_arrays(self.vertices, self.elements, N=self.N, kind=self.kind,
                                distortion=self.distortion, edge_order=perm)

    def to_text(self) -> str:
        """Plain-text listing: ``v x y`` per vertex, ``e a b c d`` per element."""
        lines = [f"v {x!r} {y!r}" for x, y in self.vertices.tolist()]
        lines += ["e " + " ".join(str(v) for v in row) for row in self.elements.tolist()]
        return "\n".join(lines) + "\n"


def edge_geometry(mesh: Mesh, edge_id: int, elem_id: int) -> EdgeGeometry:
    """Length, orientation sign and parametrization of an element edge.

    ``param_map`` sends the edge coordinate s in [-1, 1] (running from the
    lower vertex id to the higher one) to physical points.
    """
    hits = np.nonzero(mesh.element_edges[elem_id] == edge_id)[0]
    if len(hits) == 0:
        raise ValueError(f"edge {edge_id} is not adjacent to element {elem_id}")
    k = int(hits[0])
    a, b = mesh.vertices[mesh.edges[edge_id]]

    def param_map(s):
        s = np.asarray(s, dtype=float)
        return 0.5 * (1 - s)[..., None] * a + 0.5 * (1 + s)[..., None] * b

    return EdgeGeometry(float(np.linalg.norm(b - a)), int(mesh.element_edge_sign[elem_id, k]),
                        k, bool(mesh.element_edge_flip[elem_id, k]), param_map)


def generate_mesh(N: int, kind: MeshKind = "uniform", distortion: float = 0.25) -> Mesh:
    """N x N mesh of the unit square.

    ``trapezoidal`` keeps the vertical grid lines and shifts every interior
    vertex vertically by ``+-distortion / N``, the sign alternating like a
    checkerboard; boundary vertices stay put.
    """
    if isinstance(N, bool) or int(N) != N or N < 1:
        raise ValueError(f"N must be a positive integer, got {N!r}")
    N = int(N)
    if kind not in MESH_KINDS:
        raise ValueError(f"unknown mesh kind {kind!r}")
    if kind == "uniform":
        distortion = 0.0
    elif not 0.0 <= distortion < 0.5:
        raise ValueError(f"distortion must lie in [0, 0.5), got {distortion}")

    g = np.arange(N + 1) / N
    X, Y = np.meshgrid(g, g)
    if kind == "trapezoidal" and N > 1:
        j, i = np.mgrid[0:N + 1, 0:N + 1]
        interior = (i > 0) & (i < N) & (j > 0) & (j < N)
        Y = Y + np.where(interior, (-1.0) ** (i + j) * distortion / N, 0.0)
    vertices = np.column_stack([X.ravel(), Y.ravel()])

    j, i = np.mgrid[0:N, 0:N]
    v0 = (j * (N + 1) + i).ravel()
    elements = np.column_stack([v0, v0 + 1, v0 + N + 2, v0 + N + 1])

    mesh = Mesh.from_arrays(vertices, elements, N=N, kind=kind, distortion=float(distortion))
    for e in range(mesh.n_elements):
        if not mesh.element(e).is_convex():
            raise ValueError(f"distortion {distortion} yields a non-convex element {e}")
    return mesh
