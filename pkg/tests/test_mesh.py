import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import sparse

from sphere_amplitudes.gaussian import Bump
from sphere_amplitudes.geometry import RoundMetric, reflect, standard_metric
from sphere_amplitudes.mesh import (GaussianFieldModel, IndefiniteError, NodeRegion, SphereMesh, assemble,
                                    build_mesh, check_separator, cross_projection_norms, export_matrix,
                                    import_matrix, laplace_eigenvalues, log_kernel_inverse_check,
                                    metric_rescaling_check, mu_scan, projection_eA, region_disc,
                                    region_ring, sobolev_norm)


@pytest.fixture(scope="module")
def mesh16():
    return build_mesh(16, 0.3)


@pytest.fixture(scope="module")
def round16(mesh16):
    return assemble(RoundMetric(), mesh16)


@pytest.mark.parametrize("res", [8, 16, 33])
def test_mesh_is_a_sphere(res):
    mesh = build_mesh(res, 0.25)
    assert mesh.euler_characteristic() == 2
    assert np.any(np.abs(mesh.t) < 1e-15)
    for t in (0.125, 0.25, 0.5):
        mesh.ring_index(t)
        mesh.ring_index(-t)


def test_mesh_rejects_bad_input():
    with pytest.raises(ValueError):
        build_mesh(7, 0.3)
    with pytest.raises(ValueError):
        build_mesh(16, 0.0)


def test_vertex_set_closed_under_reflection(mesh16):
    z = mesh16.z
    mirror = mesh16.mirror
    finite = np.arange(1, mesh16.n_vertices - 1)
    refl = np.array([reflect(complex(v)).value for v in z[finite]])
    np.testing.assert_allclose(refl, z[mirror[finite]], atol=1e-12)
    assert mirror[0] == mesh16.infinity and np.array_equal(mirror[mirror], np.arange(mesh16.n_vertices))


def test_triangles_not_degenerate(mesh16):
    for k in range(len(mesh16.triangles)):
        a, b, c = mesh16.chart_coordinates(k)
        assert abs(((b - a).conjugate() * (c - a)).imag) / 2 > 1e-12


def test_mesh_text_round_trip(mesh16):
    back = SphereMesh.from_text(mesh16.to_text())
    np.testing.assert_array_equal(back.triangles, mesh16.triangles)
    np.testing.assert_array_equal(back.t, mesh16.t)


def test_stiffness_properties(mesh16, round16):
    L = round16.L
    assert abs(L - L.T).max() == 0
    assert np.max(np.abs(L @ np.ones(mesh16.n_vertices))) <= 1e-10
    assert np.min(np.linalg.eigvalsh(L.toarray())) > -1e-10
    assert np.all(round16.m > 0)


def test_stiffness_is_metric_independent(mesh16, round16):
    other = assemble(standard_metric("massive", 0.3), mesh16)
    assert (round16.L != other.L).nnz == 0


def test_total_mass_approximates_area():
    mesh = build_mesh(48, 0.3)
    assert assemble(RoundMetric(), mesh).total_mass == pytest.approx(4 * np.pi, rel=0.02)


def test_round_sphere_first_eigenvalue():
    ops = assemble(RoundMetric(), build_mesh(64, 0.3))
    ev = laplace_eigenvalues(ops, k=4)
    assert abs(ev[0]) < 1e-8
    np.testing.assert_allclose(ev[1:], 2.0, rtol=0.02)


def test_constant_has_exact_h_minus_one_norm(round16):
    for mu in (1.0, 3.0):
        model = GaussianFieldModel.from_ops(round16, mu)
        one = np.ones(model.n)
        assert sobolev_norm(model, one, -1) ** 2 == pytest.approx(round16.total_mass / mu, rel=1e-10)


@given(st.integers(0, 2 ** 32 - 1))
def test_sobolev_duality_and_monotonicity(round16, seed):
    rng = np.random.default_rng(seed)
    f, h = rng.standard_normal((2, round16.mesh.n_vertices))
    model = GaussianFieldModel.from_ops(round16, 0.7)
    pairing = abs(f @ (round16.m * h))
    assert pairing <= sobolev_norm(model, f, 1) * sobolev_norm(model, h, -1) * (1 + 1e-12)
    heavier = model.with_mass(2.0)
    assert sobolev_norm(heavier, f, -1) < sobolev_norm(model, f, -1)
    assert sobolev_norm(model, f, 0) > 0


def test_sobolev_rejects_other_orders(round16):
    with pytest.raises(NotImplementedError):
        sobolev_norm(GaussianFieldModel.from_ops(round16, 1.0), np.ones(round16.mesh.n_vertices), 2)


def test_covariance_is_inverse_precision(round16):
    model = GaussianFieldModel.from_ops(round16, 1.0)
    C = model.covariance()
    assert np.max(np.abs(C @ model.Q.toarray() - np.eye(model.n))) < 1e-9


def test_indefinite_precision_reported(round16):
    model = GaussianFieldModel.from_ops(round16, -1.0)
    with pytest.raises(IndefiniteError):
        model.solve(np.ones(model.n))


def _chain():
    L = sparse.csr_matrix(np.array([[1.0, -1, 0], [-1, 2, -1], [0, -1, 1]]))
    return GaussianFieldModel(L, np.ones(3), 1.0)


def test_chain_projection_closed_form():
    model = _chain()
    Sigma = np.linalg.inv(model.Q.toarray())
    e = model.project([2], np.array([0.0, 1.0, 0.0]))
    np.testing.assert_allclose(e, [0.0, 0.0, Sigma[1, 2] / Sigma[2, 2]], atol=1e-14)


def test_projection_laws(mesh16, round16):
    model = GaussianFieldModel.from_ops(round16, 1.0)
    A = region_disc(mesh16, 0.0)
    B = region_disc(mesh16, 0.3)
    eA, eB = projection_eA(model, A), projection_eA(model, B)
    assert np.max(np.abs(eA @ eA - eA)) <= 1e-10
    assert np.max(np.abs(eA @ eB - eA)) <= 1e-10
    C = model.covariance()
    # self-adjoint for (h1, h2)_-1 = h1 . C h2
    assert np.max(np.abs(eA.T @ C - C @ eA)) <= 1e-10
    full = projection_eA(model, np.arange(model.n))
    np.testing.assert_allclose(full, np.eye(model.n), atol=1e-12)
    h = np.zeros(model.n)
    h[A.indices] = np.arange(len(A))
    np.testing.assert_allclose(eA @ h, h, atol=1e-12)


def test_projection_rejects_empty(round16):
    with pytest.raises(ValueError):
        projection_eA(GaussianFieldModel.from_ops(round16, 1.0), np.array([], dtype=int))


def test_cross_projection_rejects_overlap(mesh16, round16):
    model = GaussianFieldModel.from_ops(round16, 1.0)
    ring = region_ring(mesh16, 0.0)
    with pytest.raises(ValueError):
        cross_projection_norms(model, ring, ring)
    with pytest.raises(ValueError):
        cross_projection_norms(model, ring, region_ring(mesh16, mesh16.t[mesh16.ring_index(0.0) + 1]))


def test_cross_projection_decays_with_mass():
    mesh = build_mesh(32, 0.3)
    ops = assemble(standard_metric("massive", 0.3), mesh)
    k = mesh.ring_index(0.0)
    r1, r2 = region_ring(mesh, mesh.t[k]), region_ring(mesh, mesh.t[k + 2])
    low = cross_projection_norms(GaussianFieldModel.from_ops(ops, 1e2), r1, r2)
    high = cross_projection_norms(GaussianFieldModel.from_ops(ops, 1e4), r1, r2)
    assert high["opNorm"] < low["opNorm"] <= 1
    assert np.isfinite(high["hsNorm"]) and high["hsNorm"] >= high["opNorm"]
    assert mu_scan(ops, r1, r2)["slope"] <= -0.4


def test_separator_check(mesh16):
    inner = region_disc(mesh16, -0.1)
    outer = region_disc(mesh16, 0.1, inside=False)
    check_separator(mesh16, inner, region_ring(mesh16, 0.0), outer)
    with pytest.raises(ValueError):
        check_separator(mesh16, inner, NodeRegion(np.array([0])), outer)


def test_rescaling_identity(mesh16, rng):
    f = rng.standard_normal(mesh16.n_vertices)
    assert metric_rescaling_check(mesh16, RoundMetric(), 0.0, 1.0, f) == 0
    assert metric_rescaling_check(mesh16, RoundMetric(), np.log(2.0), 1.0, f) <= 1e-10
    assert metric_rescaling_check(mesh16, RoundMetric(), "0.5*real(z)/(1+abs(z)**2)", 0.4, f) <= 1e-10


def test_log_kernel_inverse():
    mesh = build_mesh(64, 0.3)
    ops = assemble(standard_metric("flat", 0.3), mesh)
    bump = lambda c: Bump(c, 0.25, normalize="chart").nodal(mesh)  # noqa: E731
    f = bump(0.3) - bump(-0.3)
    h = bump(0.5) - bump(-0.5j)
    res = log_kernel_inverse_check(ops, f, h)
    assert res["residual"] <= 0.05
    assert res["pairing_relative_gap"] <= 0.01
    assert log_kernel_inverse_check(ops, np.zeros(mesh.n_vertices))["residual"] == 0
    with pytest.raises(ValueError):
        log_kernel_inverse_check(ops, np.ones(mesh.n_vertices))


def test_log_kernel_rejects_nonzero_mean():
    mesh = build_mesh(16, 0.3)
    ops = assemble(RoundMetric(), mesh)
    f = np.zeros(mesh.n_vertices)
    f[1] = 1.0
    with pytest.raises(ValueError):
        log_kernel_inverse_check(ops, f)


def test_matrix_export_round_trip(tmp_path, round16):
    path = tmp_path / "L.mtx"
    export_matrix(round16.L, path)
    assert abs(import_matrix(path) - round16.L).max() < 1e-14
