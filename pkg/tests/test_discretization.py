import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.linalg import cholesky

from magnetoelastic.discretization import (
    Basis,
    DiscreteField,
    Mesh,
    assemble_mass_stiffness,
    boundary_form,
    evaluate,
)
from magnetoelastic.errors import OutOfDomain, UnknownTag, UnsupportedOrder, ValidationError


@pytest.fixture(scope="module")
def basis2():
    return Basis(Mesh.unit(2, 4), 3)


def test_mesh_validation():
    with pytest.raises(ValidationError):
        Mesh((0.0,), (0.0,), (4,))
    with pytest.raises(ValidationError):
        Mesh((0.0, 0.0), (1.0, 1.0), (1, 4))
    with pytest.raises(UnknownTag):
        Mesh.unit(2, 4, dirichlet=("front",))


def test_facet_tags_partition_boundary():
    mesh = Mesh.unit(2, 4, dirichlet=("bottom", "left"))
    free = mesh.resolve_tags("free")
    assert set(free) | set(mesh.resolve_tags("dirichlet")) == set(mesh.facets)
    assert not set(free) & set(mesh.dirichlet)


def test_affine_reproduction(basis2):
    A = np.array([[1.5, -0.3], [0.2, 0.7]])
    b = np.array([0.1, -0.4])
    c = basis2.interpolate(lambda x: x @ A.T + b)
    fld = DiscreteField(basis2, c)
    pts = np.random.default_rng(0).random((200, 2))
    np.testing.assert_allclose(evaluate(fld, pts, 0), pts @ A.T + b, atol=1e-13)
    np.testing.assert_allclose(evaluate(fld, pts, 1), np.broadcast_to(A, (200, 2, 2)), atol=1e-12)
    assert np.abs(evaluate(fld, pts, 2)).max() < 1e-10


def test_partition_of_unity(basis2):
    pts = np.random.default_rng(1).random((100, 2))
    np.testing.assert_allclose(basis2.tabulate(pts).sum(axis=1), 1.0, atol=1e-14)


def test_laplacian_converges_at_approximation_order():
    errs = []
    for n in (4, 8, 16, 32):
        b = Basis(Mesh.unit(1, n), 3)
        fld = DiscreteField(b, b.interpolate(lambda x: np.sin(np.pi * x[:, 0])))
        errs.append(abs(evaluate(fld, np.array([[0.5]]), "laplacian")[0] + np.pi**2))
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    # cubic interpolation: second derivatives converge at order degree + 1 - 2 = 2
    assert np.all(orders > 1.9)


def test_outside_domain_and_smoothness_errors(basis2):
    fld = DiscreteField(basis2, np.zeros(basis2.size))
    with pytest.raises(OutOfDomain):
        evaluate(fld, np.array([[1.5, 0.5]]))
    lin = Basis(Mesh.unit(2, 4), 1)
    with pytest.raises(UnsupportedOrder):
        evaluate(DiscreteField(lin, np.zeros(lin.size)), np.array([[0.5, 0.5]]), 2)


def test_coefficient_shape_checked(basis2):
    with pytest.raises(ValidationError):
        DiscreteField(basis2, np.zeros(basis2.size + 1))


def test_mass_and_stiffness_properties(basis2):
    M, K = assemble_mass_stiffness(basis2)
    M, K = M.toarray(), K.toarray()
    np.testing.assert_allclose(M.sum(axis=1), basis2.integrals, atol=1e-14)
    assert np.array_equal(M, M.T) and np.array_equal(K, K.T)
    cholesky(M)
    assert np.linalg.eigvalsh(K)[0] > -1e-12
    T = np.broadcast_to(np.array([[2.0, 0.5], [0.5, 1.0]]), (basis2.quadrature.points.shape[0], 2, 2))
    _, KT = assemble_mass_stiffness(basis2, T)
    cholesky(KT.toarray() + M)


def test_stiffness_exact_for_linear_function():
    b = Basis(Mesh.unit(1, 4), 3)
    u = b.interpolate(lambda x: x[:, 0])
    _, K = assemble_mass_stiffness(b)
    assert float(u @ K @ u) == pytest.approx(1.0, abs=1e-12)


def test_boundary_measures(basis2):
    bf = boundary_form(basis2, "all")
    assert bf.linear(1.0).sum() == pytest.approx(4.0, abs=1e-12)
    assert bf.mass.toarray().sum() == pytest.approx(4.0, abs=1e-12)
    empty = boundary_form(basis2, "")
    assert empty.measure == 0.0 and not np.any(empty.linear(1.0))
    with pytest.raises(UnknownTag):
        boundary_form(basis2, "front")


def test_refinement_nesting(basis2):
    rng = np.random.default_rng(2)
    c = rng.normal(size=basis2.size)
    fine = basis2.refine()
    cf = basis2.prolongation(fine) @ c
    pts = rng.random((1000, 2))
    np.testing.assert_allclose(evaluate(DiscreteField(fine, cf), pts), evaluate(DiscreteField(basis2, c), pts),
                               atol=1e-12)


def test_quadrature_sufficient_for_polynomials():
    coarse = Basis(Mesh.unit(2, 4), 3)
    rich = Basis(Mesh.unit(2, 4), 3, quad_order=8)
    f = lambda x: x[:, 0] ** 2 * x[:, 1] + 0.3 * x[:, 1] ** 3  # noqa: E731
    c = coarse.interpolate(f)
    e1 = float(coarse.quadrature.weights @ (coarse.values_q @ c) ** 2)
    e2 = float(rich.quadrature.weights @ (rich.values_q @ c) ** 2)
    assert abs(e1 - e2) < 1e-10


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 6), st.integers(3, 4), st.integers(0, 1000))
def test_interpolation_reproduces_cubics(cells, degree, seed):
    rng = np.random.default_rng(seed)
    coef = rng.normal(size=4)
    b = Basis(Mesh.unit(1, cells), degree)
    f = lambda x: np.polyval(coef, x[:, 0])  # noqa: E731
    fld = DiscreteField(b, b.interpolate(f))
    pts = rng.random((50, 1))
    np.testing.assert_allclose(evaluate(fld, pts), f(pts), atol=1e-11)
