"""Mesh, quadrature, field storage and norm tests."""

import numpy as np
import pytest

import steadymix as sm
from steadymix.mesh import ElementBasis, lp_norm


def test_node_counts_periodic_identification():
    # 2x2 Q2 grid on the unit square: 5x5 nodes before identifying x = 0
    # with x = Lx, 4x5 after
    mesh = sm.build_mesh(1.0, 1.0, 2, 2)
    assert mesh.node_counts == (4, 5)
    assert mesh.n_nodes == 20
    assert mesh.n_elems == 4


def test_element_width():
    mesh = sm.build_mesh(2.0, 1.0, 2, 4)
    assert mesh.h[0] == pytest.approx(1.0)
    assert mesh.h[1] == pytest.approx(0.25)


def test_invalid_counts_raise():
    with pytest.raises(sm.ConfigError):
        sm.build_mesh(1.0, 1.0, 2, 0)
    with pytest.raises(sm.ConfigError):
        sm.build_mesh(1.0, -1.0, 2, 2)


def test_integrate_constant_and_monomial():
    mesh = sm.build_mesh(1.0, 1.0, 2, 2)
    assert sm.integrate(lambda x: np.ones(x.shape[:-1]), mesh) \
        == pytest.approx(1.0, abs=1e-14)
    assert sm.integrate(lambda x: x[..., 0] * x[..., 1], mesh) \
        == pytest.approx(0.25, abs=1e-14)


def test_integrate_walls():
    mesh = sm.build_mesh(1.0, 1.0, 3, 3)
    val = sm.integrate(lambda x: np.ones(x.shape[:-1]), mesh, boundary=True)
    assert val == pytest.approx(2.0, abs=1e-14)


def test_quadrature_polynomial_exactness():
    rng = np.random.default_rng(0)
    mesh = sm.build_mesh(1.0, 1.0, 3, 2)
    deg = 5
    cx = rng.standard_normal(deg + 1)
    cy = rng.standard_normal(deg + 1)

    def poly(x):
        return (np.polyval(cx, x[..., 0]) * np.polyval(cy, x[..., 1]))

    exact = np.polyval(np.polyint(cx), 1.0) * np.polyval(np.polyint(cy), 1.0)
    assert sm.integrate(poly, mesh, sm.gauss_rule(5, 2)) \
        == pytest.approx(exact, rel=1e-12)


def test_3d_mesh_and_integration():
    mesh = sm.build_mesh(1.0, 1.0, 2, 2, Lz=1.0, nz=2)
    assert mesh.node_counts == (4, 5, 4)
    assert sm.integrate(lambda x: x[..., 0] * x[..., 1] * x[..., 2], mesh) \
        == pytest.approx(0.125, abs=1e-13)
    # both walls have unit area
    assert sm.integrate(lambda x: np.ones(x.shape[:-1]), mesh, boundary=True) \
        == pytest.approx(2.0, abs=1e-13)


def test_periodic_consistency():
    mesh = sm.build_mesh(2.0, 1.0, 4, 3)
    sol = sm.DiscreteSolution.uniform(mesh, 2, rho=1.0, theta=1.0)
    sol.data[sol.i_rho] = 1.0 + np.sin(2 * np.pi * mesh.node_coords[:, 0] / 2.0)
    ys = np.linspace(0, 1, 7)
    left = sol.eval_at(np.stack([np.zeros_like(ys), ys], axis=-1))
    right = sol.eval_at(np.stack([np.full_like(ys, 2.0), ys], axis=-1))
    assert np.allclose(left, right, atol=1e-14)


def test_slip_constraint_enforced():
    mesh = sm.build_mesh(1.0, 1.0, 3, 3)
    sol = sm.DiscreteSolution.uniform(mesh, 2, rho=1.0, theta=1.0)
    vec = sol.as_vector()
    rng = np.random.default_rng(1)
    sol2 = sol.from_vector(vec + 0.1 * rng.standard_normal(vec.size))
    normal = sol2.data[sol2.normal_comp]
    assert np.all(normal[mesh.wall_nodes] == 0.0)
    # free dofs count excludes the wall-normal rows
    assert sol.n_dof == sol.n_fields * mesh.n_nodes - len(mesh.wall_nodes)


def test_interpolation_roundtrip():
    mesh = sm.build_mesh(1.0, 1.0, 2, 2)
    fine = sm.build_mesh(1.0, 1.0, 4, 4)
    fns = {
        "rho": lambda x: 1.0 + 0.3 * x[..., 1] ** 2,
        "u": lambda x: np.stack([x[..., 1] * (1 - x[..., 1]),
                                 np.zeros(x.shape[:-1])], axis=-1),
        "theta": lambda x: 1.0 + 0.1 * x[..., 1],
        "Y": lambda x: np.stack([0.4 * np.ones(x.shape[:-1]),
                                 0.6 * np.ones(x.shape[:-1])], axis=-1),
    }
    sol = sm.DiscreteSolution.from_functions(mesh, 2, fns)
    sol_f = sol.interpolate_to(fine)
    # biquadratic fields are reproduced exactly
    assert np.allclose(sol_f.rho, 1.0 + 0.3 * fine.node_coords[:, 1] ** 2,
                       atol=1e-13)
    assert np.allclose(sol_f.theta, 1.0 + 0.1 * fine.node_coords[:, 1],
                       atol=1e-13)


def test_norms_uniform_density():
    mesh = sm.build_mesh(1.0, 1.0, 2, 2)
    sol = sm.DiscreteSolution.uniform(mesh, 2, rho=2.0, theta=1.0)
    nm = sm.norms(sol)
    for p in (1, 2, 6):
        assert nm[f"rho_L{p}"] == pytest.approx(2.0, rel=1e-13)
    assert nm["rho_Linf"] == pytest.approx(2.0)


def test_norms_shear_velocity():
    mesh = sm.build_mesh(1.0, 1.0, 3, 3)
    sol = sm.DiscreteSolution.uniform(mesh, 2, rho=1.0, theta=1.0)
    sol.data[sol.i_u[0]] = mesh.node_coords[:, 1]
    nm = sm.norms(sol)
    assert nm["u_H1semi"] == pytest.approx(1.0, rel=1e-13)


def test_norms_uniform_theta_power():
    # theta = 1: the W^{1,2} norm of theta^{m/2} is 1 (value one, gradient zero)
    mesh = sm.build_mesh(1.0, 1.0, 2, 2)
    sol = sm.DiscreteSolution.uniform(mesh, 2, rho=1.0, theta=1.0)
    eb = ElementBasis(mesh)
    th = eb.values(eb.gather(sol.theta))
    m = 2.0
    val = np.sqrt(float(np.einsum("eq,q->", th ** m, eb.w)))
    assert val == pytest.approx(1.0, rel=1e-14)


def test_lp_norm_vector_magnitude():
    mesh = sm.build_mesh(1.0, 1.0, 2, 2)
    eb = ElementBasis(mesh)
    vals = np.zeros(eb.qp_x.shape[:2] + (2,))
    vals[..., 0] = 3.0
    vals[..., 1] = 4.0
    assert lp_norm(vals, eb.w, 2) == pytest.approx(5.0, rel=1e-14)


def test_wall_face_coordinates():
    mesh = sm.build_mesh(1.0, 2.0, 2, 3)
    eb = ElementBasis(mesh)
    assert np.allclose(eb.face_x[0][..., 1], 0.0)
    assert np.allclose(eb.face_x[1][..., 1], 2.0)
    assert eb.normals[0][1] == -1.0
    assert eb.normals[1][1] == 1.0
