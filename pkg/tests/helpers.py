"""Test-only oracles shared between modules."""
import numpy as np

from dpg_plate.basis import quadrature_rule, rt_basis_eval, scalar_basis_eval
from dpg_plate.benchmark import FieldSet
from dpg_plate.mesh import bilinear_geometry
from dpg_plate.system import Discretization, SolutionFields


def project(mesh, degree, fields: FieldSet) -> SolutionFields:
    """Element-wise L2 projection of closed-form fields onto the trial spaces."""
    disc = Discretization(mesh, degree, fields.material)
    trial = disc.trial
    rule = quadrature_rule(degree + 6)
    x, J, det = bilinear_geometry(mesh.coords, rule.points)
    dx = det * rule.weights
    rt, _ = rt_basis_eval(degree, rule.points)
    sc, _ = scalar_basis_eval(degree, rule.points)
    phi = np.einsum("eqij,bqj->ebqi", J, rt) / det[:, None, :, None]
    X, Y = x[..., 0], x[..., 1]
    f = fields.evaluate(X, Y)

    def vector(target):
        mass = np.einsum("eaqi,ebqi,eq->eab", phi, phi, dx)
        return np.linalg.solve(mass, np.einsum("eaqi,eqi,eq->ea", phi, target, dx)[..., None])[..., 0]

    def scalar(target):
        mass = np.einsum("aq,bq,eq->eab", sc, sc, dx)
        return np.linalg.solve(mass, np.einsum("aq,eq,eq->ea", sc, target, dx)[..., None])[..., 0]

    sl = trial.slices
    interior = np.zeros((mesh.n_elements, trial.n_interior))
    interior[:, sl["V"]] = vector(f["V"])
    interior[:, sl["M1"]] = vector(f["M"][..., 0, :])
    interior[:, sl["M2"]] = vector(f["M"][..., 1, :])
    interior[:, sl["w"]] = scalar(f["w"])
    interior[:, sl["psi1"]] = scalar(f["psi"][..., 0])
    interior[:, sl["psi2"]] = scalar(f["psi"][..., 1])
    interior[:, sl["r"]] = scalar(f["r"])
    dofmap = disc.dofmap()
    return SolutionFields(disc, dofmap, interior, np.zeros(dofmap.n_dofs))
