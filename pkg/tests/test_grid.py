import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from monohom.grid import (
    Field,
    GridError,
    apply_Mh,
    build_cell_grid,
    build_macro_grid,
    cell_averages,
    gamma_h,
    lp_norm,
    qp_field,
    weak_pairing,
)


@pytest.mark.parametrize("n,m,dofs", [(1, 4, 4), (2, 8, 64), (1, 7, 7), (2, 5, 25)])
def test_cell_grid_dof_count(n, m, dofs):
    g = build_cell_grid(n, m)
    assert g.num_dofs == dofs
    assert g.num_elements == m ** n
    assert g.mesh.qw.sum() == pytest.approx(1.0, abs=1e-14)


@pytest.mark.parametrize("n,m", [(3, 8), (0, 4), (1, 1)])
def test_cell_grid_rejects(n, m):
    with pytest.raises(GridError):
        build_cell_grid(n, m)


def test_periodic_identification():
    mesh = build_cell_grid(2, 6).mesh
    nodes = mesh.nodes
    for a in range(len(nodes)):
        wrapped = np.mod(nodes[a], 1.0)
        same = np.flatnonzero(np.all(np.isclose(np.mod(nodes, 1.0), wrapped), axis=1))
        assert len(set(mesh.node_to_dof[same])) == 1


@given(st.integers(0, 3), st.integers(0, 3))
@settings(max_examples=16, deadline=None)
def test_quadrature_exact_to_degree_three(i, j):
    mesh = build_cell_grid(2, 4).mesh
    x = mesh.qp
    exact = 1.0 / ((i + 1) * (j + 1))
    assert mesh.qw @ (x[:, 0] ** i * x[:, 1] ** j) == pytest.approx(exact, rel=1e-13)


def test_gradient_of_linear_field_periodic_wrap():
    mesh = build_macro_grid(2, 8, 0.5).mesh
    u = 2.0 * mesh.dof_coordinates()[:, 0] + 3.0 * mesh.dof_coordinates()[:, 1]
    # interior DOFs only; the element gradients away from the boundary layer are exact
    g = mesh.gradient(u)
    inner = np.all((mesh.qp > 1 / 8) & (mesh.qp < 7 / 8), axis=1)
    np.testing.assert_allclose(g[inner], np.tile([2.0, 3.0], (inner.sum(), 1)), atol=1e-12)


def test_macro_grid_examples():
    g = build_macro_grid(1, 16, 0.25)
    assert g.num_cells == 4 and len(g.J) == 4
    g2 = build_macro_grid(2, 16, 0.25, "piecewise", N=2)
    assert len(g2.J) == 16
    assert all(len(b) == 0 for b in g2.B_sub)
    assert sorted(np.concatenate(g2.J_sub).tolist()) == list(range(16))
    with pytest.raises(GridError):
        build_macro_grid(2, 10, 0.25)
    with pytest.raises(GridError):
        build_macro_grid(2, 16, 0.3)


def test_interface_cells_and_measure():
    # eps = 1/4 with three strips: the interfaces at 1/3 and 2/3 cut cells
    g = build_macro_grid(2, 24, 0.25, "piecewise", N=3)
    assert len(g.boundary_cells) == 8
    assert g.boundary_layer_measure == pytest.approx(8 / 16)
    fine = build_macro_grid(2, 96, 1 / 24, "piecewise", N=3)
    assert len(fine.boundary_cells) == 0  # 1/3 is a multiple of 1/24


def test_each_cell_resolved_by_integer_block():
    g = build_macro_grid(2, 32, 0.125)
    counts = np.bincount(g.qp_cell)
    assert np.all(counts == counts[0])
    assert counts[0] == (32 * 0.125) ** 2 * 4


def test_apply_Mh_examples():
    g = build_macro_grid(2, 16, 0.25)
    const = Field("qp", g.mesh, np.full(g.mesh.num_qp, 3.5))
    np.testing.assert_allclose(apply_Mh(const, g).values, 3.5)
    lin = qp_field(g.mesh, lambda x: x[:, 0])
    avg = cell_averages(lin, g)
    np.testing.assert_allclose(avg, g.cell_centers()[:, 0], atol=1e-14)


@given(st.integers(0, 2 ** 31))
@settings(max_examples=20, deadline=None)
def test_apply_Mh_is_a_projection(seed):
    g = build_macro_grid(2, 8, 0.25)
    vals = np.random.default_rng(seed).normal(size=(g.mesh.num_qp, 2))
    once = apply_Mh(Field("qp", g.mesh, vals), g)
    twice = apply_Mh(once, g)
    np.testing.assert_allclose(once.values, twice.values, atol=1e-13)
    # averaging preserves the integral
    np.testing.assert_allclose(g.mesh.qw @ once.values, g.mesh.qw @ vals, atol=1e-12)


def test_gamma_h_examples():
    g = build_macro_grid(2, 16, 0.25)
    step = gamma_h(g)
    np.testing.assert_allclose(step(np.array([[0.01, 0.2]])), [[0.125, 0.125]])
    pts = np.random.default_rng(0).uniform(0.5, 0.75, (20, 2))
    assert np.all(step(pts) == step(pts[:1]))
    single = build_macro_grid(2, 4, 1.0)
    np.testing.assert_allclose(gamma_h(single)(np.random.default_rng(1).random((5, 2))), 0.5)


@given(st.sampled_from([0.5, 0.25, 0.125, 0.0625]))
@settings(max_examples=4, deadline=None)
def test_gamma_h_converges(eps):
    g = build_macro_grid(2, 64, eps)
    x = g.mesh.qp
    assert np.max(np.abs(gamma_h(g)(x) - x)) <= eps / 2 * (1 + 1e-12)


def test_lp_norm_examples():
    g = build_macro_grid(2, 8, 0.5)
    assert lp_norm(Field("qp", g.mesh, np.ones(g.mesh.num_qp)), 2.0) == pytest.approx(1.0)
    g1 = build_macro_grid(1, 8, 0.5)
    assert lp_norm(qp_field(g1.mesh, lambda x: x[:, 0]), 2.0) == pytest.approx(1 / np.sqrt(3), rel=1e-13)
    assert lp_norm(Field("qp", g.mesh, np.zeros((g.mesh.num_qp, 2))), 3.0) == 0.0
    with pytest.raises(ValueError):
        lp_norm(Field("qp", g.mesh, np.ones(g.mesh.num_qp)), 0.5)


def test_weak_pairing_examples():
    g = build_macro_grid(2, 8, 0.5)
    nq = g.mesh.num_qp
    e1 = Field("qp", g.mesh, np.tile([1.0, 0.0], (nq, 1)))
    e2 = Field("qp", g.mesh, np.tile([0.0, 1.0], (nq, 1)))
    assert weak_pairing(e1, e1) == pytest.approx(1.0)
    assert weak_pairing(e1, e2) == 0.0
    other = build_macro_grid(2, 16, 0.5)
    with pytest.raises(GridError):
        weak_pairing(e1, Field("qp", other.mesh, np.zeros((other.mesh.num_qp, 2))))


def test_field_validation():
    g = build_macro_grid(1, 8, 0.5)
    with pytest.raises((GridError, ValueError)):
        Field("nodal", g.mesh, np.zeros(g.mesh.num_dofs + 1))
    with pytest.raises((GridError, ValueError)):
        Field("edge", g.mesh, np.zeros(3))


def test_gradient_at_matches_qp_gradient():
    mesh = build_cell_grid(2, 8).mesh
    u = np.random.default_rng(5).normal(size=mesh.num_dofs)
    np.testing.assert_allclose(mesh.gradient_at(u, mesh.qp), mesh.gradient(u), atol=1e-12)
    np.testing.assert_allclose(mesh.gradient_at(u, mesh.qp + 1.0), mesh.gradient(u), atol=1e-12)
