"""A posteriori and stability diagnostics of a DPG solve."""
from __future__ import annotations

import numpy as np
import scipy.linalg as sla

from .forms import ElementSystem, MaterialParams, reference_tables
from .mesh import Mesh, bilinear_geometry
from .system import Discretization, SolutionFields, normal_equations


def element_energy_residual(u: np.ndarray, sys: ElementSystem) -> float:
    """||G^{-1/2}(l - B u)|| for one element from its dense system."""
    L = np.linalg.cholesky(sys.G)
    res = np.linalg.solve(L, sys.l - sys.B @ u)
    return float(np.linalg.norm(res))


def _element_residuals(solution: SolutionFields, load=None, rhs=None, chunk: int = 256):
    """Yield (ids, batch, Cholesky factors, whitened residual L^{-1}(l - B u))."""
    disc = solution.disc
    for ids, batch in disc.batches(solution.dofmap, load, rhs, chunk):
        chol = batch.gram_cholesky()
        u = solution.element_vector(ids)
        res = batch.l - np.einsum("eij,ej->ei", batch.B, u)
        yield ids, batch, chol, batch.whiten(chol, res)


def energy_residual(solution: SolutionFields, load=None, rhs=None) -> np.ndarray:
    """Per-element energy residual ||G_K^{-1/2}(l_K - B_K u_K)||.

    Element matrices are rebuilt in chunks rather than kept from the solve.
    The global indicator is ``np.sqrt(np.sum(eta ** 2))``.
    """
    eta = np.zeros(solution.mesh.n_elements)
    for ids, _, _, wres in _element_residuals(solution, load, rhs):
        eta[ids] = np.linalg.norm(wres, axis=1)
    return eta


def galerkin_orthogonality(solution: SolutionFields, load=None, rhs=None) -> float:
    """Max norm of the assembled normal-equation residual B^T G^{-1}(l - B u).

    Field rows are element-local; trace rows are summed over the elements
    sharing them and restricted to the free (non-clamped) unknowns.
    """
    trial = solution.trial
    dm = solution.dofmap
    trace_res = np.zeros(dm.n_dofs)
    worst = 0.0
    for ids, batch, chol, wres in _element_residuals(solution, load, rhs):
        W = batch.whiten(chol, batch.B)
        r = np.einsum("eti,et->ei", W, wres)
        worst = max(worst, float(np.max(np.abs(r[:, trial.interior]))))
        np.add.at(trace_res, dm.element_dofs[ids], r[:, trial.trace])
    return max(worst, float(np.max(np.abs(trace_res[dm.free]), initial=0.0)))


def field_mass(disc: Discretization) -> np.ndarray:
    """Block-diagonal L2 mass of the field unknowns, (E, n_interior, n_interior)."""
    trial = disc.trial
    T = reference_tables(disc.degree, disc.test.degree, disc.quadrature)
    x, J, det = bilinear_geometry(disc.mesh.coords, T.vol_pts)
    dx = det * T.vol_w
    V = np.einsum("eqij,bqj->ebqi", J, T.V_val) / det[:, None, :, None]
    Mv = np.einsum("ebqi,ecqi,eq->ebc", V, V, dx)
    Mq = np.einsum("bq,cq,eq->ebc", T.w_val, T.w_val, dx)
    out = np.zeros((disc.mesh.n_elements, trial.n_interior, trial.n_interior))
    sl = trial.slices
    for name in ("V", "M1", "M2"):
        out[:, sl[name], sl[name]] = Mv
    for name in ("w", "psi1", "psi2", "r"):
        out[:, sl[name], sl[name]] = Mq
    return out


def infsup_estimate(mesh: Mesh, degree: int = 1, mat: MaterialParams | None = None,
                    enrichment: int = 3) -> float:
    """Discrete stability constant measured in the field L2 norm.

    Returns sqrt of the smallest eigenvalue of the global normal-equation
    matrix, with the free trace unknowns eliminated by a Schur complement,
    relative to the field L2 mass. Dense; intended for small meshes.
    """
    disc = Discretization(mesh, degree, mat or MaterialParams(), enrichment)
    dm = disc.dofmap()
    trial = disc.trial
    ni = trial.n_interior
    nE = mesh.n_elements
    reduced = -np.ones(dm.n_dofs, dtype=np.int64)
    reduced[dm.free] = np.arange(dm.free.size)
    nf, nt = nE * ni, dm.free.size

    A = np.zeros((nf + nt, nf + nt))
    for ids, batch in disc.batches(dm):
        N, _ = normal_equations(batch)
        for k, e in enumerate(ids):
            rt = reduced[dm.element_dofs[e]]
            keep = rt >= 0
            idx = np.concatenate([e * ni + np.arange(ni), nf + rt[keep]])
            loc = np.concatenate([np.arange(ni), ni + np.nonzero(keep)[0]])
            A[np.ix_(idx, idx)] += N[k][np.ix_(loc, loc)]
    Aff, Aft, Att = A[:nf, :nf], A[:nf, nf:], A[nf:, nf:]
    S = Aff - Aft @ np.linalg.solve(Att, Aft.T)
    S = 0.5 * (S + S.T)
    Mf = sla.block_diag(*field_mass(disc))
    lam = sla.eigh(S, Mf, eigvals_only=True, subset_by_index=[0, 0])[0]
    return float(np.sqrt(max(lam, 0.0)))
