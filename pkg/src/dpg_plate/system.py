"""Skeleton numbering, static condensation and the global DPG solve.

Per element the DPG system is the normal-equation form
``N_K = B^T G^{-1} B``, ``g_K = B^T G^{-1} l`` computed through a
Cholesky factor of the block-diagonal Gram matrix. Field unknowns are
eliminated element by element; only skeleton unknowns are solved for
globally, after removing the clamped w_hat / psi_hat degrees of freedom.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Iterator

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .forms import (
    ElementBatch,
    MaterialParams,
    TestLayout,
    TrialLayout,
    default_quadrature,
    element_matrices,
)
from .mesh import Mesh

log = logging.getLogger(__name__)

DEFAULT_CHUNK = 256


class SolverError(RuntimeError):
    """The condensed or global system could not be factorized or solved."""


# --------------------------------------------------------------------------
# numbering


@dataclass(frozen=True, eq=False)
class DofMap:
    """Global numbering of skeleton unknowns.

    Global layout: w_hat, psi_hat_1, psi_hat_2 (each ``nV + nEd p``, vertex
    values then edge-interior nodes in edge-coordinate order), V_hat
    (``nEd (p+1)`` Legendre coefficients along the global normal), then
    M_hat_1, M_hat_2 likewise.
    """

    mesh: Mesh
    trial: TrialLayout
    element_dofs: np.ndarray   # (nE, n_trace) global index of each local trace slot
    element_signs: np.ndarray  # (nE, n_trace) orientation factor
    n_dofs: int
    clamped: np.ndarray        # bool (n_dofs,)
    offsets: dict = field(default_factory=dict)

    @classmethod
    def build(cls, mesh: Mesh, trial: TrialLayout) -> "DofMap":
        p = trial.degree
        nV, nEd, nE = mesh.n_vertices, mesh.n_edges, mesh.n_elements
        nW = nV + nEd * p
        nF = nEd * (p + 1)
        offsets = {"what": 0, "psihat1": nW, "psihat2": 2 * nW,
                   "vhat": 3 * nW, "mhat1": 3 * nW + nF, "mhat2": 3 * nW + 2 * nF}
        n_dofs = 3 * nW + 3 * nF

        ne = trial.n_edge
        # continuous traces: local slots [vertices 0..3, edge k interior nodes]
        cont = np.empty((nE, ne), dtype=np.int64)
        cont[:, :4] = mesh.elements
        # discontinuous traces and their orientation factors
        disc = np.empty((nE, ne), dtype=np.int64)
        dsign = np.empty((nE, ne))
        j = np.arange(p + 1)
        alt = (-1.0) ** j
        for k in range(4):
            g = mesh.element_edges[:, k]
            flip = mesh.element_edge_flip[:, k]
            if p > 0:
                local = np.arange(1, p + 1)
                glob = np.where(flip[:, None], p + 1 - local, local)
                cont[:, 4 + k * p:4 + (k + 1) * p] = nV + g[:, None] * p + glob - 1
            disc[:, k * (p + 1):(k + 1) * (p + 1)] = g[:, None] * (p + 1) + j
            dsign[:, k * (p + 1):(k + 1) * (p + 1)] = (
                mesh.element_edge_sign[:, k, None] * np.where(flip[:, None], alt, 1.0))

        dofs = np.concatenate([cont + offsets["what"], cont + offsets["psihat1"],
                               cont + offsets["psihat2"], disc + offsets["vhat"],
                               disc + offsets["mhat1"], disc + offsets["mhat2"]], axis=1)
        ones = np.ones((nE, ne))
        signs = np.concatenate([ones, ones, ones, dsign, dsign, dsign], axis=1)

        bnd = np.zeros(nW, dtype=bool)
        bnd[:nV] = mesh.boundary_vertices
        bedges = np.nonzero(mesh.boundary_edges)[0]
        if p > 0:
            bnd[(nV + bedges[:, None] * p + np.arange(p)).ravel()] = True
        clamped = np.zeros(n_dofs, dtype=bool)
        for name in ("what", "psihat1", "psihat2"):
            clamped[offsets[name]:offsets[name] + nW] = bnd
        return cls(mesh, trial, dofs, signs, n_dofs, clamped, offsets)

    @property
    def free(self) -> np.ndarray:
        return np.nonzero(~self.clamped)[0]

    def counts(self, free_only: bool = True) -> dict[str, int]:
        """Number of (free) unknowns per trace quantity."""
        keep = ~self.clamped if free_only else np.ones(self.n_dofs, dtype=bool)
        names = ["what", "psihat1", "psihat2", "vhat", "mhat1", "mhat2"]
        bounds = [self.offsets[n] for n in names] + [self.n_dofs]
        raw = {n: int(keep[bounds[i]:bounds[i + 1]].sum()) for i, n in enumerate(names)}
        return {"what": raw["what"], "psihat": raw["psihat1"] + raw["psihat2"],
                "vhat": raw["vhat"], "mhat": raw["mhat1"] + raw["mhat2"]}


# --------------------------------------------------------------------------
# condensation


@dataclass
class Condensed:
    """Schur complement onto trace unknowns and the data to undo it."""

    S: np.ndarray        # (E, nt, nt)
    f: np.ndarray        # (E, nt)
    X: np.ndarray        # N_II^{-1} N_IT, (E, ni, nt)
    y: np.ndarray        # N_II^{-1} g_I, (E, ni)

    def recover(self, u_trace: np.ndarray) -> np.ndarray:
        """Interior field coefficients given element trace values (E, nt)."""
        return self.y - np.einsum("eij,ej->ei", self.X, u_trace)


def normal_equations(batch: ElementBatch, chol=None):
    """N = B^T G^{-1} B and g = B^T G^{-1} l for every element of the batch."""
    chol = chol or batch.gram_cholesky()
    W = batch.whiten(chol, batch.B)
    y = batch.whiten(chol, batch.l)
    N = np.matmul(W.transpose(0, 2, 1), W)
    g = np.einsum("eti,et->ei", W, y)
    return N, g


def condense(batch: ElementBatch) -> Condensed:
    N, g = normal_equations(batch)
    I, T = batch.trial.interior, batch.trial.trace
    NII, NIT, NTI, NTT = N[:, I, I], N[:, I, T], N[:, T, I], N[:, T, T]
    try:
        L = np.linalg.cholesky(NII)
    except np.linalg.LinAlgError as exc:
        raise SolverError("interior block of the normal equations is singular; "
                          "check the enrichment degree") from exc
    rhs = np.concatenate([NIT, g[:, I, None]], axis=2)
    sol = np.linalg.solve(L.transpose(0, 2, 1), np.linalg.solve(L, rhs))
    X, y = sol[..., :-1], sol[..., -1]
    S = NTT - np.matmul(NTI, X)
    f = g[:, T] - np.einsum("eij,ej->ei", NTI, y)
    return Condensed(S, f, X, y)


def condense_element(B: np.ndarray, G: np.ndarray, l: np.ndarray, trial: TrialLayout):
    """Dense single-element condensation from full B_K, G_K, l_K.

    Returns ``(S_K, f_K, Condensed)``.
    """
    Lg = np.linalg.cholesky(G)
    W = np.linalg.solve(Lg, B)
    y = np.linalg.solve(Lg, l)
    N, g = W.T @ W, W.T @ y
    I, T = trial.interior, trial.trace
    X = np.linalg.solve(N[I, I], N[I, T])
    yI = np.linalg.solve(N[I, I], g[I])
    S = N[T, T] - N[T, I] @ X
    f = g[T] - N[T, I] @ yI
    return S, f, Condensed(S[None], f[None], X[None], yI[None])


# --------------------------------------------------------------------------
# global problem


RhsFunction = Callable[[np.ndarray, np.ndarray], np.ndarray]


@dataclass(frozen=True)
class Discretization:
    """Everything needed to build element matrices on a mesh."""

    mesh: Mesh
    degree: int = 1
    material: MaterialParams = field(default_factory=MaterialParams)
    enrichment: int = 3
    nquad: int | None = None

    @property
    def trial(self) -> TrialLayout:
        return TrialLayout(self.degree)

    @property
    def test(self) -> TestLayout:
        return TestLayout(self.degree + self.enrichment)

    @property
    def quadrature(self) -> int:
        return self.nquad or default_quadrature(self.degree, self.degree + self.enrichment)

    def dofmap(self) -> DofMap:
        return DofMap.build(self.mesh, self.trial)

    def batches(self, dofmap: DofMap, load=None, rhs: RhsFunction | None = None,
                chunk: int = DEFAULT_CHUNK) -> Iterator[tuple[np.ndarray, ElementBatch]]:
        """Element batches in element order.

        ``load`` is a scalar field p(x, y); ``rhs(ids, coords)`` may instead
        return full test-space load vectors (E, n_test).
        """
        coords = self.mesh.coords
        for start in range(0, self.mesh.n_elements, chunk):
            ids = np.arange(start, min(start + chunk, self.mesh.n_elements))
            batch = element_matrices(coords[ids], self.trial, self.test, self.material,
                                     nquad=self.quadrature, load=load,
                                     trace_signs=dofmap.element_signs[ids])
            if rhs is not None:
                batch.l = batch.l + rhs(ids, coords[ids])
            yield ids, batch


@dataclass
class GlobalSystem:
    """Condensed skeleton system with clamped unknowns removed."""

    A: sp.csr_matrix
    b: np.ndarray
    free: np.ndarray          # global index of each reduced unknown
    dofmap: DofMap
    condensed: Condensed

    @property
    def size(self) -> int:
        return len(self.free)


def assemble_global(dofmap: DofMap, condensed: Condensed) -> GlobalSystem:
    """Sum element Schur complements into the reduced skeleton matrix."""
    dofs = dofmap.element_dofs
    if dofs.min() < 0 or dofs.max() >= dofmap.n_dofs:
        raise IndexError("element trace index out of range")
    reduced = -np.ones(dofmap.n_dofs, dtype=np.int64)
    free = dofmap.free
    reduced[free] = np.arange(len(free))
    rd = reduced[dofs]                                       # (E, nt), -1 if clamped
    E, nt = rd.shape
    rows = np.repeat(rd, nt, axis=1).ravel()
    cols = np.tile(rd, (1, nt)).ravel()
    vals = condensed.S.reshape(E, -1).ravel()
    keep = (rows >= 0) & (cols >= 0)
    A = sp.coo_matrix((vals[keep], (rows[keep], cols[keep])), shape=(len(free),) * 2).tocsr()
    A.sum_duplicates()
    b = np.zeros(len(free))
    fk = rd >= 0
    np.add.at(b, rd[fk], condensed.f[fk])
    return GlobalSystem(A, b, free, dofmap, condensed)


def _concat(parts: list[Condensed]) -> Condensed:
    return Condensed(*(np.concatenate([getattr(c, name) for c in parts])
                       for name in ("S", "f", "X", "y")))


def build_system(disc: Discretization, load=None, rhs: RhsFunction | None = None,
                 chunk: int = DEFAULT_CHUNK) -> GlobalSystem:
    dofmap = disc.dofmap()
    parts = [condense(batch) for _, batch in disc.batches(dofmap, load, rhs, chunk)]
    return assemble_global(dofmap, _concat(parts))


@dataclass
class SolveInfo:
    method: str
    residual: float
    positive_definite: bool | None = None
    iterations: int | None = None


def solve_linear(A: sp.csr_matrix, b: np.ndarray, method: str = "direct",
                 tol: float = 1e-12, maxiter: int = 100_000) -> tuple[np.ndarray, SolveInfo]:
    """Solve the SPD skeleton system.

    ``direct`` uses a symmetric-mode SuperLU factorization without row
    pivoting, so the signs of the pivots certify positive definiteness.
    ``cg`` runs Jacobi-preconditioned conjugate gradients.
    """
    nb = np.linalg.norm(b)
    if method == "direct":
        try:
            lu = spla.splu(A.tocsc(), permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
                           options={"SymmetricMode": True})
        except RuntimeError as exc:
            raise SolverError(f"sparse factorization failed: {exc}") from exc
        x = lu.solve(b)
        symmetric_pivots = np.array_equal(lu.perm_r, lu.perm_c)
        spd = bool(symmetric_pivots and np.all(lu.U.diagonal() > 0))
        info = SolveInfo("direct", 0.0, spd)
    elif method == "cg":
        d = A.diagonal()
        if np.any(d <= 0):
            raise SolverError("non-positive diagonal entry; matrix is not SPD")
        M = sp.diags(1.0 / d)
        count = [0]

        def cb(_):
            count[0] += 1

        x, status = spla.cg(A, b, rtol=tol, atol=0.0, maxiter=maxiter, M=M, callback=cb)
        if status != 0:
            raise SolverError(f"conjugate gradients did not converge ({status})")
        info = SolveInfo("cg", 0.0, None, count[0])
    else:
        raise ValueError(f"unknown solver {method!r}")
    if not np.all(np.isfinite(x)):
        raise SolverError("non-finite solution")
    info.residual = float(np.linalg.norm(A @ x - b) / nb) if nb > 0 else float(np.linalg.norm(A @ x))
    return x, info


@dataclass
class SolutionFields:
    """Solved coefficients.

    ``interior``: (nE, n_interior) element field coefficients ordered as in
    :class:`TrialLayout`; ``trace``: (n_dofs,) global skeleton vector with
    clamped entries zero.
    """

    disc: Discretization
    dofmap: DofMap
    interior: np.ndarray
    trace: np.ndarray
    info: SolveInfo | None = None

    @property
    def mesh(self) -> Mesh:
        return self.disc.mesh

    @property
    def trial(self) -> TrialLayout:
        return self.disc.trial

    def element_trace(self, ids=None) -> np.ndarray:
        dofs = self.dofmap.element_dofs if ids is None else self.dofmap.element_dofs[ids]
        return self.trace[dofs]

    def element_vector(self, ids=None) -> np.ndarray:
        """Full local coefficient vectors (E, n_local)."""
        interior = self.interior if ids is None else self.interior[ids]
        return np.concatenate([interior, self.element_trace(ids)], axis=1)

    def field(self, name: str, ids=None) -> np.ndarray:
        """Coefficients of one field block (``V``, ``M1``, ``w``, ...)."""
        return self.element_vector(ids)[:, self.trial.slices[name]]


def solve(system: GlobalSystem, disc: Discretization, method: str = "direct",
          tol: float = 1e-12) -> SolutionFields:
    x, info = solve_linear(system.A, system.b, method, tol)
    if method == "direct" and not info.positive_definite:
        raise SolverError("skeleton matrix is not positive definite")
    trace = np.zeros(system.dofmap.n_dofs)
    trace[system.free] = x
    u_t = trace[system.dofmap.element_dofs]
    interior = system.condensed.recover(u_t)
    log.debug("solved %d skeleton unknowns, relative residual %.2e", len(x), info.residual)
    return SolutionFields(disc, system.dofmap, interior, trace, info)


def solve_problem(mesh: Mesh, degree: int = 1, material: MaterialParams | None = None, *,
                  load=None, rhs: RhsFunction | None = None, enrichment: int = 3,
                  nquad: int | None = None, method: str = "direct",
                  tol: float = 1e-12) -> SolutionFields:
    """Assemble, condense and solve the clamped plate problem on ``mesh``."""
    disc = Discretization(mesh, degree, material or MaterialParams(), enrichment, nquad)
    system = build_system(disc, load=load, rhs=rhs)
    return solve(system, disc, method, tol)
