import numpy as np
import pytest

from magnetoelastic.constitutive import DefaultMaterial, thermal_closure
from magnetoelastic.discretization import Basis, Mesh
from magnetoelastic.errors import DegenerateDeformation, OutOfRange, ValidationError
from magnetoelastic.hyperstress import KernelSpec, gagliardo_energy
from magnetoelastic.loads import FieldLoad, SpatialProfile
from magnetoelastic.magnetostatics import SpatialGrid
from magnetoelastic.statics import (
    OptimizerSettings,
    StaticLoads,
    StaticProblem,
    StaticState,
    ground_state,
    minimize,
    static_gradient,
    temperature_from_entropy,
    total_static_energy,
)

from models import PLAIN, QuadraticThermal
from oracles import random_rotation

MODEL = DefaultMaterial()
KERNEL = KernelSpec(0.6, 1e-3, 0.5, 2)
FIELD = FieldLoad.constant([0.2, 0.0])
FAST = OptimizerSettings(cn_samples=100_000)


@pytest.fixture(scope="module")
def basis():
    return Basis(Mesh.unit(2, 4, dirichlet=("bottom",)), 3)


@pytest.fixture(scope="module")
def aligned(basis):
    grid = SpatialGrid.enclosing((0, 0), (1, 1), 64, margin=1)
    return StaticProblem(MODEL, basis, StaticLoads(external_field=FIELD), kernel=KERNEL, grid=grid, settings=FAST)


def _perturbed(problem, seed, amp=1.0):
    rng = np.random.default_rng(seed)
    st = ground_state(problem)
    st.chi[problem.free_chi] += amp * 0.02 * rng.normal(size=(len(problem.free_chi), 2))
    st.m += amp * 0.1 * rng.normal(size=st.m.shape)
    st.zeta += amp * 0.1 * rng.normal(size=st.zeta.shape)
    st.s += amp * 0.05 * rng.normal(size=st.s.shape)
    return st


def _energy(problem, st):
    return total_static_energy(problem, st.chi, st.m, st.zeta, st.s)


def test_dirichlet_boundary_is_mandatory():
    with pytest.raises(ValidationError):
        StaticProblem(MODEL, Basis(Mesh.unit(2, 2), 3))


def test_ground_state_report(basis):
    P = StaticProblem(MODEL, basis)
    st = ground_state(P)
    rep = _energy(P, st)
    assert rep.items["magnetostatic"] == 0.0 and rep.items["zeeman"] == 0.0
    assert rep.items["exchange"] == 0.0 and rep.items["hyperstress"] == 0.0
    assert rep.total == pytest.approx(rep.items["bulk"], abs=1e-12)
    s0 = float(MODEL.entropy(np.zeros(2), np.asarray(MODEL.zeta_ref), np.asarray(1.0)))
    assert s0 == pytest.approx(st.s[0])


def test_items_sum_to_total(aligned):
    rep = _energy(aligned, _perturbed(aligned, 0))
    assert abs(rep.total - sum(rep.items.values())) <= 1e-12 * max(1.0, abs(rep.total))
    assert rep.items["magnetostatic"] > 0 and rep.items["zeeman"] != 0


def test_hyperstress_item_is_the_quadratic_form(basis):
    P = StaticProblem(MODEL, basis, kernel=KERNEL)
    st = _perturbed(P, 1)
    G = np.einsum("qnij,nk->qkij", basis.hessians_q, st.chi)
    assert _energy(P, st).items["hyperstress"] == pytest.approx(gagliardo_energy(KERNEL, G, basis), rel=1e-12)


def test_first_variation_matches_central_differences(basis):
    grid = SpatialGrid.enclosing((0, 0), (1, 1), 64, margin=1)
    field = FieldLoad((0.3, 0.1), space=SpatialProfile("gaussian", (0.5, 0.5), 0.4))
    loads = StaticLoads(body_force=FieldLoad.constant([0.0, -0.1]), traction=FieldLoad.constant([0.05, 0.02]),
                        external_field=field)
    P = StaticProblem(MODEL, basis, loads, kernel=KERNEL, grid=grid, settings=FAST)
    st = _perturbed(P, 2)
    g = static_gradient(P, st)
    rng = np.random.default_rng(3)
    h = 1e-6
    for _ in range(20):
        d = StaticState(*(rng.normal(size=a.shape) for a in (st.chi, st.m, st.zeta, st.s)))
        plus = StaticState(st.chi + h * d.chi, st.m + h * d.m, st.zeta + h * d.zeta, st.s + h * d.s)
        minus = StaticState(st.chi - h * d.chi, st.m - h * d.m, st.zeta - h * d.zeta, st.s - h * d.s)
        fd = (_energy(P, plus).total - _energy(P, minus).total) / (2 * h)
        an = sum(float(np.sum(a * b)) for a, b in zip((g.chi, g.m, g.zeta, g.s), (d.chi, d.m, d.zeta, d.s)))
        assert abs(fd - an) <= 1e-5 * abs(an)


def test_energy_is_frame_indifferent(basis):
    rng = np.random.default_rng(4)
    Q = random_rotation(rng)
    P = StaticProblem(MODEL, basis, StaticLoads(external_field=FIELD), kernel=KERNEL)
    Pq = StaticProblem(MODEL, basis, StaticLoads(external_field=FieldLoad.constant(Q @ [0.2, 0.0])), kernel=KERNEL)
    st = _perturbed(P, 5)
    e = _energy(P, st).total
    # m is referential: a spatial rotation acts on chi and the applied field only
    eq = total_static_energy(Pq, st.chi @ Q.T, st.m, st.zeta, st.s).total
    assert abs(e - eq) <= 1e-10 * abs(e)


def test_ground_state_is_stationary(basis):
    P = StaticProblem(MODEL, basis, kernel=KERNEL, settings=FAST)
    r = minimize(P, ground_state(P))
    assert r.converged and len(r.trace) <= 2
    assert r.trace[-1].grad_norm <= P.settings.tol_grad


def test_aligned_field_magnetizes_along_field(aligned, basis):
    st0 = ground_state(aligned)
    r = minimize(aligned, st0)
    assert r.converged
    w, B = basis.quadrature.weights, basis.values_q
    zeeman = lambda st: float(w @ ((B @ st.m) @ np.array([0.2, 0.0])))  # noqa: E731
    assert zeeman(r.state) > zeeman(st0)
    energies = [e.energy for e in r.trace]
    assert np.all(np.diff(energies) <= 0) and energies[-1] < _energy(aligned, st0).total
    assert all(e.J_min > 0 for e in r.trace)
    a = basis.integrals
    assert abs(a @ r.state.zeta - a @ st0.zeta) <= 1e-8
    assert abs(a @ r.state.s - a @ st0.s) <= 1e-8
    assert r.cn_gap <= 1e-3


def test_multipliers_are_chemical_potential_and_temperature(aligned, basis):
    r = minimize(aligned, ground_state(aligned))
    g = static_gradient(aligned, r.state)
    a = basis.integrals
    lam_zeta, lam_s = r.multipliers
    assert np.abs(g.zeta - lam_zeta * a).max() <= 1e-6 * max(1.0, np.abs(g.zeta).max())
    assert np.abs(g.s - lam_s * a).max() <= 1e-6 * np.abs(g.s).max()
    theta = temperature_from_entropy(MODEL, None, basis.values_q @ r.state.m, basis.values_q @ r.state.zeta,
                                     basis.values_q @ r.state.s)
    np.testing.assert_allclose(theta, lam_s, rtol=1e-4)


def test_infeasible_initial_guesses_are_rejected(aligned):
    st = ground_state(aligned)
    st.chi[:, 0] = -st.chi[:, 0] + 1.0
    st.chi[aligned.dirichlet_dofs] = aligned.chi_D[aligned.dirichlet_dofs]
    with pytest.raises(DegenerateDeformation):
        minimize(aligned, st)
    moved = ground_state(aligned)
    moved.chi[aligned.dirichlet_dofs] += 0.1
    with pytest.raises(ValidationError):
        minimize(aligned, moved)


def test_temperature_from_entropy_examples():
    c = PLAIN.heat_c
    m, z = np.zeros((3, 2)), np.zeros(3)
    np.testing.assert_allclose(temperature_from_entropy(PLAIN, None, m, z, np.full(3, c)), np.e, rtol=1e-10)
    quad = QuadraticThermal()
    assert temperature_from_entropy(quad, None, m, z, np.zeros(3)) == pytest.approx(0.0, abs=1e-14)
    with pytest.raises(OutOfRange):
        temperature_from_entropy(quad, None, m, z, np.full(3, -0.1))
    theta = np.array([0.3, 1.0, 4.0])
    s = thermal_closure(MODEL, m, z, theta).s
    np.testing.assert_allclose(temperature_from_entropy(MODEL, None, m, z, s), theta, rtol=1e-10)
