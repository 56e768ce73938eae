"""Evaluation of discrete solution fields at reference or physical points."""
from __future__ import annotations

import numpy as np

from .basis import rt_basis_eval, scalar_basis_eval
from .mesh import Mesh, bilinear_geometry

FIELD_NAMES = ("V", "M", "w", "psi", "r")


def evaluate_fields(solution, ids: np.ndarray, ref_pts: np.ndarray) -> dict[str, np.ndarray]:
    """Discrete fields on elements ``ids`` at reference points ``ref_pts``.

    ``ref_pts`` is (Q, 2) shared by all elements or (E, Q, 2) per element.
    Returns physical points ``x`` (E, Q, 2) and ``V`` (E, Q, 2),
    ``M`` (E, Q, 2, 2), ``w`` (E, Q), ``psi`` (E, Q, 2), ``r`` (E, Q).
    """
    ids = np.atleast_1d(ids)
    p = solution.trial.degree
    coef = solution.element_vector(ids)
    sl = solution.trial.slices
    coords = solution.mesh.coords[ids]
    ref_pts = np.asarray(ref_pts, dtype=float)

    if ref_pts.ndim == 2:
        x, J, det = bilinear_geometry(coords, ref_pts)
        rt, _ = rt_basis_eval(p, ref_pts)
        sc, _ = scalar_basis_eval(p, ref_pts)
        rt = np.broadcast_to(rt, (len(ids),) + rt.shape)
        sc = np.broadcast_to(sc, (len(ids),) + sc.shape)
    else:
        E, Q = ref_pts.shape[:2]
        flat = ref_pts.reshape(-1, 2)
        rt_all, _ = rt_basis_eval(p, flat)
        sc_all, _ = scalar_basis_eval(p, flat)
        rt = rt_all.reshape(rt_all.shape[0], E, Q, 2).transpose(1, 0, 2, 3)
        sc = sc_all.reshape(sc_all.shape[0], E, Q).transpose(1, 0, 2)
        x = np.empty((E, Q, 2))
        J = np.empty((E, Q, 2, 2))
        det = np.empty((E, Q))
        for e in range(E):
            x[e], J[e], det[e] = (a[0] for a in bilinear_geometry(coords[e:e + 1], ref_pts[e]))

    def piola(c):
        ref = np.einsum("eb,ebqi->eqi", c, rt)
        return np.einsum("eqij,eqj->eqi", J, ref) / det[..., None]

    def scalar(c):
        return np.einsum("eb,ebq->eq", c, sc)

    out = {"x": x, "detJ": det}
    out["V"] = piola(coef[:, sl["V"]])
    out["M"] = np.stack([piola(coef[:, sl["M1"]]), piola(coef[:, sl["M2"]])], axis=-2)
    out["w"] = scalar(coef[:, sl["w"]])
    out["psi"] = np.stack([scalar(coef[:, sl["psi1"]]), scalar(coef[:, sl["psi2"]])], axis=-1)
    out["r"] = scalar(coef[:, sl["r"]])
    return out


def inverse_map(coords: np.ndarray, x: np.ndarray, tol: float = 1e-12,
                maxiter: int = 50) -> tuple[np.ndarray, np.ndarray]:
    """Newton inversion of bilinear maps.

    coords: (E, 4, 2); x: (E, 2) one physical point per element.
    Returns reference points (E, 2) and a convergence mask.
    """
    xi = np.zeros_like(x, dtype=float)
    done = np.zeros(len(x), dtype=bool)
    for _ in range(maxiter):
        a, b = xi[:, 0], xi[:, 1]
        N = 0.25 * np.stack([(1 - a) * (1 - b), (1 + a) * (1 - b), (1 + a) * (1 + b), (1 - a) * (1 + b)], 1)
        dxi = 0.25 * np.stack([-(1 - b), 1 - b, 1 + b, -(1 + b)], 1)
        deta = 0.25 * np.stack([-(1 - a), -(1 + a), 1 + a, 1 - a], 1)
        pts_x = np.einsum("ek,ekd->ed", N, coords)
        Js = np.stack([np.einsum("ek,ekd->ed", dxi, coords),
                       np.einsum("ek,ekd->ed", deta, coords)], axis=-1)
        step = np.linalg.solve(Js, (x - pts_x)[..., None])[..., 0]
        xi = xi + step
        done = np.max(np.abs(step), axis=1) < tol
        if np.all(done):
            break
    return xi, done


def locate_points(mesh: Mesh, pts: np.ndarray, tol: float = 1e-12):
    """Containing element and reference coordinates of physical points.

    Uses the column/row structure of the generated meshes to pick a few
    candidate elements, then inverts their bilinear maps.
    """
    pts = np.asarray(pts, dtype=float)
    N = mesh.N
    if N < 1:
        raise ValueError("point location needs a structured mesh")
    col = np.clip(np.floor(pts[:, 0] * N).astype(int), 0, N - 1)
    row0 = np.clip(np.floor(pts[:, 1] * N).astype(int), 0, N - 1)
    elem = -np.ones(len(pts), dtype=int)
    ref = np.zeros((len(pts), 2))
    for dr in (0, -1, 1, -2, 2):
        todo = elem < 0
        if not np.any(todo):
            break
        row = row0[todo] + dr
        ok = (row >= 0) & (row < N)
        idx = np.nonzero(todo)[0][ok]
        cand = row[ok] * N + col[idx]
        xi, conv = inverse_map(mesh.coords[cand], pts[idx], tol=tol)
        inside = conv & np.all(np.abs(xi) <= 1 + 1e-10, axis=1)
        elem[idx[inside]] = cand[inside]
        ref[idx[inside]] = np.clip(xi[inside], -1.0, 1.0)
    if np.any(elem < 0):
        raise RuntimeError(f"could not locate {int(np.sum(elem < 0))} sample points")
    return elem, ref


def evaluate_at_points(solution, pts: np.ndarray) -> dict[str, np.ndarray]:
    """Discrete fields at arbitrary physical points (P, 2); arrays are (P, ...)."""
    elem, ref = locate_points(solution.mesh, pts)
    vals = evaluate_fields(solution, elem, ref[:, None, :])
    return {k: v[:, 0] for k, v in vals.items()}
