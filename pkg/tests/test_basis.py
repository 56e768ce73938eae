import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dpg_plate.basis import (
    gll_nodes,
    lagrange_table,
    legendre_table,
    quadrature_rule,
    rt_basis,
    rt_basis_eval,
    rt_dim,
    scalar_basis,
    scalar_basis_eval,
    scalar_nodes,
    trace_basis,
)
from dpg_plate.mesh import ref_edge_points


def test_midpoint_rule():
    rule = quadrature_rule(1, "segment")
    np.testing.assert_array_equal(rule.points, [[0.0]])
    np.testing.assert_array_equal(rule.weights, [2.0])


def test_two_point_rule():
    rule = quadrature_rule(2, "segment")
    np.testing.assert_allclose(rule.points[:, 0], [-0.5773502692, 0.5773502692], atol=1e-10)
    np.testing.assert_allclose(rule.weights, [1.0, 1.0], atol=1e-15)


def test_three_point_rule_integrates_x4():
    rule = quadrature_rule(3, "segment")
    assert abs(rule.integrate(rule.points[:, 0] ** 4) - 0.4) < 1e-14


@pytest.mark.parametrize("n", [1, 3, 6])
@pytest.mark.parametrize("domain, measure", [("segment", 2.0), ("square", 4.0)])
def test_weights_sum_to_measure(n, domain, measure):
    assert quadrature_rule(n, domain).weights.sum() == pytest.approx(measure, abs=1e-14)


def test_square_rule_is_tensor_product_x_fastest():
    rule = quadrature_rule(3, "square")
    seg = quadrature_rule(3, "segment").points[:, 0]
    np.testing.assert_array_equal(rule.points[:3, 0], seg)
    np.testing.assert_array_equal(rule.points[:3, 1], seg[0])


@settings(max_examples=30, deadline=None)
@given(n=st.integers(1, 8), a=st.integers(0, 15), b=st.integers(0, 15))
def test_square_rule_exactness(n, a, b):
    rule = quadrature_rule(n, "square")
    x, y = rule.points.T
    exact = [(1 - (-1) ** (k + 1)) / (k + 1) for k in (a, b)]
    got = rule.integrate(x ** a * y ** b)
    if a <= 2 * n - 1 and b <= 2 * n - 1:
        assert got == pytest.approx(exact[0] * exact[1], abs=1e-13)


def test_quadrature_rejects_bad_input():
    with pytest.raises(ValueError):
        quadrature_rule(0)
    with pytest.raises(ValueError):
        quadrature_rule(2, "cube")


def test_rule_arrays_are_read_only():
    rule = quadrature_rule(3)
    with pytest.raises(ValueError):
        rule.weights[0] = 1.0


def test_legendre_derivatives():
    x = np.linspace(-1, 1, 7)
    v, d = legendre_table(3, x)
    np.testing.assert_allclose(v[3], 0.5 * (5 * x ** 3 - 3 * x), atol=1e-14)
    np.testing.assert_allclose(d[3], 0.5 * (15 * x ** 2 - 3), atol=1e-13)


def test_gll_nodes():
    np.testing.assert_allclose(gll_nodes(1), [-1, 1])
    np.testing.assert_allclose(gll_nodes(2), [-1, 0, 1], atol=1e-15)
    np.testing.assert_allclose(gll_nodes(3), [-1, -1 / np.sqrt(5), 1 / np.sqrt(5), 1], atol=1e-14)


@pytest.mark.parametrize("deg", [1, 2, 4, 6])
def test_lagrange_is_nodal(deg):
    v, _ = lagrange_table(deg, gll_nodes(deg))
    np.testing.assert_allclose(v, np.eye(deg + 1), atol=1e-13)


@pytest.mark.parametrize("r, dim", [(0, 1), (1, 4), (4, 25), (6, 49)])
def test_scalar_dimension(r, dim):
    assert scalar_basis(r, quadrature_rule(3)).dim == dim


@pytest.mark.parametrize("r", range(0, 7))
def test_partition_of_unity(r):
    basis = scalar_basis(r, quadrature_rule(7))
    np.testing.assert_allclose(basis.values.sum(axis=0), 1.0, atol=1e-12)
    np.testing.assert_allclose(basis.gradients.sum(axis=0), 0.0, atol=1e-11)


def test_bilinear_reproduction():
    nodes = scalar_nodes(1)
    coef = nodes[:, 0] * nodes[:, 1]
    pts = np.random.default_rng(1).uniform(-1, 1, (20, 2))
    vals, grads = scalar_basis_eval(1, pts)
    np.testing.assert_allclose(coef @ vals, pts[:, 0] * pts[:, 1], atol=1e-13)
    np.testing.assert_allclose(np.einsum("b,bqi->qi", coef, grads), pts[:, ::-1], atol=1e-13)


@pytest.mark.parametrize("r, dim", [(0, 4), (1, 12), (2, 24), (4, 60)])
def test_rt_dimension(r, dim):
    assert rt_dim(r) == dim
    assert rt_basis(r, quadrature_rule(3)).dim == dim


@pytest.mark.parametrize("r", range(0, 7))
def test_dimension_formulas(r):
    rule = quadrature_rule(2)
    assert rt_basis(r, rule).dim == 2 * (r + 1) * (r + 2)
    assert scalar_basis(r, rule).dim == (r + 1) ** 2


@pytest.mark.parametrize("r", [0, 1, 3])
def test_rt_divergence_matches_finite_differences(r):
    pts = np.random.default_rng(2).uniform(-0.9, 0.9, (15, 2))
    h = 1e-5
    _, div = rt_basis_eval(r, pts)
    dx = (rt_basis_eval(r, pts + [h, 0])[0][..., 0] - rt_basis_eval(r, pts - [h, 0])[0][..., 0]) / (2 * h)
    dy = (rt_basis_eval(r, pts + [0, h])[0][..., 1] - rt_basis_eval(r, pts - [0, h])[0][..., 1]) / (2 * h)
    np.testing.assert_allclose(div, dx + dy, atol=1e-6)


@pytest.mark.parametrize("r", [0, 1, 2, 4])
def test_rt_divergence_lies_in_Qr(r):
    rule = quadrature_rule(r + 3)
    basis = rt_basis(r, rule)
    Q = scalar_basis(r, rule).values
    M = (Q * rule.weights) @ Q.T
    coef = np.linalg.solve(M, (Q * rule.weights) @ basis.divergences.T)
    np.testing.assert_allclose(coef.T @ Q, basis.divergences, atol=1e-12)


@pytest.mark.parametrize("r", [0, 1, 3])
def test_rt_members_lie_in_raviart_thomas_space(r):
    pts = np.random.default_rng(4).uniform(-1, 1, ((r + 2) * (r + 1) + 5, 2))
    vals, _ = rt_basis_eval(r, pts)

    def monomials(px, py):
        return np.column_stack([pts[:, 0] ** i * pts[:, 1] ** j
                                for i in range(px + 1) for j in range(py + 1)])

    for comp, (px, py) in enumerate([(r + 1, r), (r, r + 1)]):
        A = monomials(px, py)
        coef, *_ = np.linalg.lstsq(A, vals[..., comp].T, rcond=None)
        np.testing.assert_allclose(A @ coef, vals[..., comp].T, atol=1e-11)


@pytest.mark.parametrize("r", [0, 1, 2, 4])
def test_rt_edge_structure(r):
    t = np.linspace(-1, 1, 9)
    normals = [np.array([0, -1.0]), np.array([1.0, 0]), np.array([0, 1.0]), np.array([-1.0, 0])]
    leg = legendre_table(r, t)[0]
    ne = r + 1
    for k in range(4):
        vals, _ = rt_basis_eval(r, ref_edge_points(k, t))
        flux = vals @ normals[k]
        for e in range(4):
            block = flux[e * ne:(e + 1) * ne]
            if e == k:
                np.testing.assert_allclose(block, leg, atol=1e-12)
            else:
                np.testing.assert_allclose(block, 0.0, atol=1e-12)
        np.testing.assert_allclose(flux[4 * ne:], 0.0, atol=1e-12)


@pytest.mark.parametrize("r", [0, 2, 4])
def test_rt_normal_trace_degree(r):
    t = np.linspace(-1, 1, 3 * r + 5)
    vals, _ = rt_basis_eval(r, ref_edge_points(1, t))
    V = np.polynomial.legendre.legvander(t, r)
    coef, *_ = np.linalg.lstsq(V, vals[..., 0].T, rcond=None)
    np.testing.assert_allclose(V @ coef, vals[..., 0].T, atol=1e-12)


@pytest.mark.parametrize("r", [0, 1, 3, 5])
def test_basis_gram_matrices_nonsingular(r):
    rule = quadrature_rule(r + 3)
    q = rt_basis(r, rule).values
    z = scalar_basis(r, rule).values
    Gq = np.einsum("aqi,bqi,q->ab", q, q, rule.weights)
    Gz = (z * rule.weights) @ z.T
    for G in (Gq, Gz):
        G = G / np.sqrt(np.outer(np.diag(G), np.diag(G)))
        assert np.linalg.svd(G, compute_uv=False).min() > 1e-10


def test_trace_basis_dimensions():
    assert trace_basis(1, "discontinuous").dim_boundary == 8
    assert trace_basis(2, "continuous").dim_boundary == 8
    assert trace_basis(2, "continuous").n_per_edge == 3


@pytest.mark.parametrize("r", [0, 1, 3, 5])
def test_legendre_trace_mass_is_diagonal(r):
    seg = quadrature_rule(r + 2, "segment")
    v = trace_basis(r).eval(seg.points[:, 0])
    M = (v * seg.weights) @ v.T
    off = M - np.diag(np.diag(M))
    assert np.abs(off).max() < 1e-14
    np.testing.assert_allclose(np.diag(M), 2 / (2 * np.arange(r + 1) + 1), atol=1e-14)


def test_continuous_trace_is_nodal_at_edge_ends():
    v = trace_basis(2, "continuous").eval(np.array([-1.0, 1.0]))
    np.testing.assert_allclose(v[:, 0], [1, 0, 0], atol=1e-15)
    np.testing.assert_allclose(v[:, 1], [0, 0, 1], atol=1e-15)


@pytest.mark.parametrize("args", [(-1, "discontinuous"), (0, "continuous"), (1, "smooth")])
def test_trace_basis_rejects_bad_input(args):
    with pytest.raises(ValueError):
        trace_basis(*args)


def test_tables_are_cached_and_frozen():
    rule = quadrature_rule(4)
    assert rt_basis(2, rule) is rt_basis(2, rule)
    assert not scalar_basis(2, rule).values.flags.writeable
