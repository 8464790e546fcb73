import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from magnetoelastic.discretization import Basis, DiscreteField, Mesh
from magnetoelastic.errors import InvalidExponents, ValidationError
from magnetoelastic.hyperstress import (
    KernelSpec,
    determinant_bound,
    gagliardo_energy,
    healey_kromer_eta,
    hessian_form,
    hyperstress_force,
    min_determinant_monitor,
)

from oracles import brute_gagliardo_1d, eta_grid_search, random_rotation

KERNEL2 = KernelSpec(0.6, 1e-3, 0.5, 2)


def _tensor_field(x):
    x = np.atleast_2d(x)
    return np.stack([np.sin(np.pi * x[:, 0]) * x[:, 1], x[:, 0] ** 2, np.cos(x[:, 1]), x[:, 0] * x[:, 1]],
                    axis=1).reshape(-1, 2, 2)


@pytest.fixture(scope="module")
def basis2():
    return Basis(Mesh.unit(2, 4), 3)


def test_kernel_validation_and_bound():
    with pytest.raises(ValidationError):
        KernelSpec(1.0, 1.0, 0.5, 2)
    with pytest.raises(ValidationError):
        KernelSpec(-0.1, 1.0, 0.5, 2)
    k = KernelSpec(0.6, 2e-3, 0.5, 2)
    r = np.linspace(1e-3, 0.5, 200)
    # the lower bound holds on the flat part of the cutoff
    flat = r <= 0.25
    assert np.all(k(r[flat]) >= 2e-3 * r[flat] ** -(2 + 1.2) * (1 - 1e-14))
    assert np.all(k(r) >= 0) and k(0.6) == 0.0


def test_constant_field_has_zero_energy(basis2):
    G0 = lambda x: np.broadcast_to(np.array([[1.0, 2.0], [3.0, 4.0]]), (np.atleast_2d(x).shape[0], 2, 2))  # noqa: E731
    assert gagliardo_energy(KERNEL2, G0, basis2.mesh) == 0.0
    samples = G0(basis2.quadrature.points)
    assert gagliardo_energy(KERNEL2, samples, basis2) == 0.0
    assert np.abs(hyperstress_force(KERNEL2, samples, basis2)).max() < 1e-12


def test_one_dimensional_linear_field_matches_closed_form_and_brute_force():
    gamma = 0.25
    k = KernelSpec(gamma, 1.0, np.inf, 1)
    val = gagliardo_energy(k, lambda x: np.atleast_2d(x)[:, :1], Mesh.unit(1, 4))
    a = 1 - 2 * gamma
    closed = 0.25 * 2 / ((a + 1) * (a + 2))
    brute = brute_gagliardo_1d(lambda x: x, lambda r: r ** -(1 + 2 * gamma))
    assert brute == pytest.approx(closed, rel=1e-8)
    assert val == pytest.approx(brute, rel=1e-4)


def test_frame_indifference(basis2):
    rng = np.random.default_rng(0)
    base = gagliardo_energy(KERNEL2, _tensor_field, basis2.mesh)
    for _ in range(3):
        Q = random_rotation(rng)
        rot = gagliardo_energy(KERNEL2, lambda x: np.einsum("ij,qjk->qik", Q, _tensor_field(x)), basis2.mesh)
        assert abs(rot - base) <= 1e-12 * abs(base)


def test_pair_loop_symmetry_is_bit_identical(basis2):
    a = gagliardo_energy(KERNEL2, _tensor_field, basis2.mesh)
    b = gagliardo_energy(KERNEL2, _tensor_field, basis2.mesh, swap=True)
    c = gagliardo_energy(KERNEL2, _tensor_field, basis2.mesh, threads=3)
    assert a == b == c


def test_energy_nonnegative_and_zero_only_for_constants(basis2):
    rng = np.random.default_rng(1)
    for _ in range(5):
        g = rng.normal(size=(basis2.quadrature.points.shape[0], 2, 2))
        assert gagliardo_energy(KERNEL2, g, basis2) > 0


def test_force_is_derivative_of_energy(basis2):
    rng = np.random.default_rng(2)
    w = basis2.quadrature.weights
    G = _tensor_field(basis2.quadrature.points)
    Hs = hyperstress_force(KERNEL2, G, basis2)
    h = 1e-5
    for _ in range(10):
        Gt = rng.normal(size=G.shape)
        fd = (gagliardo_energy(KERNEL2, G + h * Gt, basis2) - gagliardo_energy(KERNEL2, G - h * Gt, basis2)) / (2 * h)
        an = float(np.einsum("q,qij,qij->", w, Hs, Gt))
        assert abs(fd - an) <= 1e-6 * abs(an)


def test_force_is_linear(basis2):
    rng = np.random.default_rng(3)
    G1 = rng.normal(size=(basis2.quadrature.points.shape[0], 2, 2))
    G2 = rng.normal(size=G1.shape)
    lhs = hyperstress_force(KERNEL2, 2.0 * G1 - 0.5 * G2, basis2)
    rhs = 2.0 * hyperstress_force(KERNEL2, G1, basis2) - 0.5 * hyperstress_force(KERNEL2, G2, basis2)
    np.testing.assert_allclose(lhs, rhs, atol=1e-12 * np.abs(lhs).max())


def test_hessian_form_reproduces_energy(basis2):
    rng = np.random.default_rng(4)
    c = 0.1 * rng.normal(size=(basis2.size, 2))
    Hs = hessian_form(KERNEL2, basis2)
    G = np.einsum("qnij,nk->qkij", basis2.hessians_q, c)
    assert 0.5 * np.einsum("nk,nm,mk->", c, Hs, c) == pytest.approx(gagliardo_energy(KERNEL2, G, basis2), rel=1e-12)


# ---- determinant bound ---------------------------------------------------------


def test_eta_examples():
    assert healey_kromer_eta(0.0, 1.0, 10, 0.6, 2) == 1.0
    # a = 0.5, exponent 3
    assert healey_kromer_eta(0.5, 1.0, 10, 0.6, 2) == pytest.approx(eta_grid_search(0.5, 3.0), abs=1e-8)
    assert healey_kromer_eta(0.5, 1.0, 10, 0.6, 2) == pytest.approx(1 / np.sqrt(1.5) * (1 - 1 / 3), abs=1e-12)
    with pytest.raises(InvalidExponents):
        healey_kromer_eta(0.5, 1.0, 2, 0.6, 2)
    with pytest.raises(InvalidExponents):
        healey_kromer_eta(0.5, 1.0, 10, -0.1, 2)


@settings(max_examples=40, deadline=None)
@given(st.floats(0.0, 3.0), st.floats(0.1, 5.0), st.floats(0.0, 3.0))
def test_eta_monotone_in_constants(C, M, dC):
    p, gamma, d = 12.0, 0.6, 2
    assert healey_kromer_eta(C + dC, M, p, gamma, d) <= healey_kromer_eta(C, M, p, gamma, d) + 1e-15
    assert healey_kromer_eta(C, M * (1 + dC), p, gamma, d) <= healey_kromer_eta(C, M, p, gamma, d) + 1e-15


def test_determinant_monitor_examples():
    b = Basis(Mesh.unit(2, 4), 3)
    ident = DiscreteField(b, b.interpolate(lambda x: x))
    assert min_determinant_monitor(ident)[0] == pytest.approx(1.0, abs=1e-12)
    aff = DiscreteField(b, b.interpolate(lambda x: x * np.array([2.0, 0.5])))
    assert min_determinant_monitor(aff)[0] == pytest.approx(1.0, abs=1e-12)
    b1 = Basis(Mesh((-1.0,), (1.0,), (4,)), 3)
    fold = DiscreteField(b1, b1.interpolate(lambda x: x**2))
    J_min, loc = min_determinant_monitor(fold)
    assert J_min < 0 and loc[0] < 0


def test_determinant_bound_report():
    b = Basis(Mesh.unit(2, 4), 3)
    chi = DiscreteField(b, b.interpolate(lambda x: x + 0.05 * np.sin(np.pi * x)))
    rep = determinant_bound(chi, 0.6, 10.0)
    assert rep.J_min > 0 and rep.C_alpha > 0 and rep.M_int > 0
    assert 0 < rep.eta_star <= 1
