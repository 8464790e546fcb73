"""Semi-discrete evolution: inertia, magnetization relaxation, viscous
Cahn-Hilliard diffusion and the enthalpy form of the heat equation.

One time step is staggered:

1. implicit midpoint for ``(chi, v)`` with ``(m, zeta)`` frozen,
2. implicit Euler for ``(m, zeta, mu)`` at the new deformation,
3. implicit Euler for the enthalpy ``w = e_th(m, zeta, theta)`` with the
   rates of step 2 as heat sources.

After step 3 the chemical potential is re-solved against the final state
so every emitted :class:`StateVector` satisfies the algebraic constraint.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace
from typing import Callable, Sequence

import numpy as np
from scipy.linalg import cho_factor, cho_solve, lu_factor, lu_solve

from .constitutive import MaterialModel, cofactor, determinant, pull_back_tensor
from .discretization import Basis, assemble_mass_stiffness, boundary_form
from .errors import (
    DegenerateDeformation,
    SolverDivergence,
    StepFloorReached,
    ValidationError,
)
from .hyperstress import KernelSpec, hessian_form
from .loads import FieldLoad

__all__ = [
    "DynamicLoads",
    "SolverSettings",
    "DynamicProblem",
    "StateVector",
    "StepRecord",
    "Trajectory",
    "EnergyReport",
    "initial_state",
    "residual_momentum",
    "residual_magnetization",
    "residual_chemical",
    "free_energy",
    "solve_chemical_potential",
    "holonomic_residual",
    "regularized_heat_source",
    "step",
    "simulate",
    "energy_audit",
    "relative_residual",
    "estimate_monitor",
    "nonneg_temperature_check",
    "TemperatureCheck",
]


# ---------------------------------------------------------------------------
# problem data
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DynamicLoads:
    """Time dependent loads and boundary transmission data.

    ``body_force`` and ``traction`` are evaluated at referential points,
    ``external_field`` at deformed points ``chi(x)``.  ``mu_ext`` and
    ``theta_ext`` are scalar loads on the ``transfer_facets``, weighted by
    the transmission coefficients ``mass_transfer`` and ``heat_transfer``.
    """

    body_force: FieldLoad | None = None
    traction: FieldLoad | None = None
    traction_facets: str = "all"
    external_field: FieldLoad | None = None
    mu_ext: FieldLoad | None = None
    theta_ext: FieldLoad | None = None
    mass_transfer: float = 0.0
    heat_transfer: float = 0.0
    transfer_facets: str = "all"

    def __post_init__(self):
        if self.mass_transfer < 0 or self.heat_transfer < 0:
            raise ValidationError("boundary transmission coefficients must be nonnegative")


@dataclass(frozen=True)
class SolverSettings:
    tol_newton: float = 1e-10
    max_newton: int = 50
    retry_floor: float = 2.0**-10
    min_determinant: float = 0.0


@dataclass
class DynamicProblem:
    """Model, discretization, loads, regularization and initial data.

    Parameters
    ----------
    model : MaterialModel
    basis : Basis
        Shared scalar spline space; degree >= 3.
    loads : DynamicLoads
    kernel : KernelSpec, optional
        Nonlocal hyperstress; omitted means no second-gradient energy.
    epsilon : float
        Heat-source regularization, ``>= 0``.
    t_end, dt : float
        Time horizon and nominal step.
    chi0, v0, m0, zeta0, theta0 : callable or array_like
        Initial data: callables of referential points or constants.  The
        deformation defaults to the identity.
    settings : SolverSettings

    Raises
    ------
    ValidationError
        On negative initial or boundary temperatures, ``dt <= 0`` or
        ``epsilon < 0``.
    DegenerateDeformation
        If ``det grad chi0 <= 0`` at a quadrature point.
    """

    model: MaterialModel
    basis: Basis
    loads: DynamicLoads = field(default_factory=DynamicLoads)
    kernel: KernelSpec | None = None
    epsilon: float = 1e-3
    t_end: float = 1.0
    dt: float = 1.0 / 64
    chi0: object = None
    v0: object = 0.0
    m0: object = 0.0
    zeta0: object = None
    theta0: object = 1.0
    settings: SolverSettings = field(default_factory=SolverSettings)

    def __post_init__(self):
        b = self.basis
        d = b.dim
        if self.model.dim != d:
            raise ValidationError("material and mesh dimensions differ")
        if b.degree < 3:
            raise ValidationError("deformations need spline degree >= 3")
        if not self.dt > 0 or not self.t_end > 0:
            raise ValidationError("dt and t_end must be positive")
        if self.epsilon < 0:
            raise ValidationError("epsilon must be nonnegative")
        mesh = b.mesh
        q = b.quadrature
        th0 = _sample(self.theta0, q.points, ())
        if np.any(th0 < 0):
            raise ValidationError("initial temperature theta0 must be nonnegative")
        ld = self.loads
        tags = mesh.resolve_tags(ld.transfer_facets) if (ld.mass_transfer or ld.heat_transfer) else ()
        self.transfer = boundary_form(b, tags)
        if ld.theta_ext is not None and self.transfer.weights.size:
            for t in np.linspace(0.0, self.t_end, 33):
                if np.any(ld.theta_ext.scalar(self.transfer.points, t) < 0):
                    raise ValidationError("boundary temperature theta_e must be nonnegative")
        ttags = mesh.resolve_tags(ld.traction_facets) if ld.traction is not None else ()
        self.traction_form = boundary_form(b, ttags)
        self.mass, self.stiffness = assemble_mass_stiffness(b)
        self.mass_d = self.mass.toarray()
        self.stiff_d = self.stiffness.toarray()
        self.hyper = hessian_form(self.kernel, b) if self.kernel is not None else None
        self.dirichlet_dofs = b.boundary_dofs(mesh.resolve_tags("dirichlet")) if mesh.dirichlet else np.zeros(0, int)
        self.free = np.setdiff1d(np.arange(b.size), self.dirichlet_dofs)
        chi = self.initial_chi()
        F = np.einsum("qna,nk->qka", b.grads_q, chi, optimize=True)
        J = determinant(F)
        if J.min() <= 0:
            raise DegenerateDeformation(f"initial det grad chi = {J.min():.3g} <= 0")
        m = b.values_q @ self.initial_m()
        z = b.values_q @ self.initial_zeta()
        if not np.all(np.isfinite(self.model.xi(J, m, z))):
            raise DegenerateDeformation("initial stored energy is not finite")

    @property
    def dim(self) -> int:
        return self.basis.dim

    @property
    def n_steps(self) -> int:
        return int(round(self.t_end / self.dt))

    def initial_chi(self) -> np.ndarray:
        if self.chi0 is None:
            return self.basis.interpolate(lambda x: x)
        return _coeffs(self.basis, self.chi0, (self.dim,))

    def initial_m(self) -> np.ndarray:
        return _coeffs(self.basis, self.m0, (self.dim,))

    def initial_zeta(self) -> np.ndarray:
        z0 = self.zeta0 if self.zeta0 is not None else float(getattr(self.model, "zeta_ref", 0.0))
        return _coeffs(self.basis, z0, ())

    def initial_theta(self) -> np.ndarray:
        eps = self.epsilon

        def reg(x):
            th = _sample(self.theta0, x, ())
            return th / (1 + eps * th)

        return self.basis.interpolate(reg)


def _sample(data, x: np.ndarray, shape: tuple) -> np.ndarray:
    if callable(data):
        return np.asarray(data(x), dtype=float).reshape(x.shape[0], *shape)
    return np.broadcast_to(np.asarray(data, dtype=float), (x.shape[0], *shape)).copy()


def _coeffs(basis: Basis, data, shape: tuple) -> np.ndarray:
    if callable(data):
        return basis.interpolate(lambda x: _sample(data, x, shape))
    arr = np.asarray(data, dtype=float)
    if arr.shape == (basis.size, *shape):
        return arr.copy()
    # constants are reproduced exactly by the partition of unity
    return np.broadcast_to(arr, (basis.size, *shape)).copy()


# ---------------------------------------------------------------------------
# state
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class StepRecord:
    """Time-integrated quantities of the step that produced a state.

    Dissipation items use the backward-difference rates of the step; the
    adiabatic item uses the lagged temperature seen by the magnetization and
    diffusion solve, ``heat_source`` the sources fed to the heat equation.
    """

    dt: float = 0.0
    substeps: int = 0
    diss_m: float = 0.0
    diss_zeta: float = 0.0
    diss_mu: float = 0.0
    adiabatic: float = 0.0
    heat_source: float = 0.0
    boundary_heat: float = 0.0
    boundary_chem: float = 0.0
    explicit_work: float = 0.0
    mass_flux: float = 0.0
    enthalpy_defect: float = 0.0

    def __add__(self, other: "StepRecord") -> "StepRecord":
        vals = {f.name: getattr(self, f.name) + getattr(other, f.name) for f in fields(self)}
        return StepRecord(**vals)


@dataclass(frozen=True)
class StateVector:
    """Coefficient blocks at time ``t``; arrays are read-only once emitted."""

    t: float
    chi: np.ndarray
    v: np.ndarray
    m: np.ndarray
    zeta: np.ndarray
    mu: np.ndarray
    theta: np.ndarray
    record: StepRecord = field(default_factory=StepRecord)

    def __post_init__(self):
        for name in ("chi", "v", "m", "zeta", "mu", "theta"):
            arr = np.array(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    def enthalpy(self, problem: DynamicProblem) -> np.ndarray:
        """``w = e_th(m, zeta, theta)`` at quadrature points."""
        B = problem.basis.values_q
        return problem.model.enthalpy_terms(B @ self.m, B @ self.zeta, B @ self.theta)[0]


@dataclass
class Trajectory:
    problem: DynamicProblem
    states: list

    @property
    def times(self) -> np.ndarray:
        return np.array([s.t for s in self.states])


# ---------------------------------------------------------------------------
# fields and residuals
# ---------------------------------------------------------------------------


def _grad(basis: Basis, coeffs: np.ndarray) -> np.ndarray:
    return np.einsum("qna,n...->q...a", basis.grads_q, coeffs, optimize=True)


def _deformation(problem: DynamicProblem, chi: np.ndarray):
    F = _grad(problem.basis, chi)
    J = determinant(F)
    if J.min() <= problem.settings.min_determinant:
        raise DegenerateDeformation(f"det grad chi = {J.min():.3g} <= {problem.settings.min_determinant}")
    return F, J


def _positive(theta_q):
    return np.maximum(theta_q, 0.0)


def residual_momentum(problem: DynamicProblem, state: StateVector, t: float | None = None) -> np.ndarray:
    """Gradient of the potential energy with respect to deformation coefficients.

    The semi-discrete momentum balance reads ``rho M chi'' + r = 0`` with
    ``r`` returned here: stress and hyperstress minus the magnetic body force,
    body force and traction pairings.  Shape ``(n, d)``.

    Raises
    ------
    DegenerateDeformation
        If ``det grad chi <= 0`` at a quadrature point.
    """
    t = state.t if t is None else t
    return _chi_gradient(problem, state.chi, state.m, state.zeta, t)


def _chi_gradient(problem, chi, m_c, z_c, t):
    b, model, ld = problem.basis, problem.model, problem.loads
    B, G, w = b.values_q, b.grads_q, b.quadrature.weights
    F, _ = _deformation(problem, chi)
    m, z = B @ m_c, B @ z_c
    _, S, _, _ = model.psi_me_terms(F, m, z)
    P = S
    dy = None
    if ld.external_field is not None and not ld.external_field.is_zero:
        y = B @ chi
        h = ld.external_field.value(y, t)
        P = P - np.einsum("qi,qj->qij", h, m)
        Fm = np.einsum("qij,qj->qi", F, m)
        dy = -np.einsum("qij,qi->qj", ld.external_field.gradient(y, t), Fm)
    r = np.einsum("qna,qka->nk", G, w[:, None, None] * P, optimize=True)
    if dy is not None:
        r += B.T @ (w[:, None] * dy)
    if problem.hyper is not None:
        r += problem.hyper @ chi
    r -= _load_vector(problem, t)
    return r


def _load_vector(problem: DynamicProblem, t: float, rate: bool = False) -> np.ndarray:
    b, ld = problem.basis, problem.loads
    out = np.zeros((b.size, b.dim))
    q = b.quadrature
    f = ld.body_force
    if f is not None and not f.is_zero:
        val = f.rate(q.points, t) if rate else f.value(q.points, t)
        out += b.values_q.T @ (q.weights[:, None] * val)
    g = ld.traction
    tf = problem.traction_form
    if g is not None and not g.is_zero and tf.weights.size:
        val = g.rate(tf.points, t) if rate else g.value(tf.points, t)
        out += tf.linear(val)
    return out


def residual_magnetization(problem: DynamicProblem, state: StateVector, t: float | None = None) -> np.ndarray:
    """Gradient of the free energy with respect to magnetization coefficients.

    ``kappa1 K m + int d_m psi(F, m, zeta, theta) B - int F^T h_e(chi) B``;
    the semi-discrete equation is ``tau1 M m' + r = 0``.  Shape ``(n, d)``.
    """
    t = state.t if t is None else t
    b, model = problem.basis, problem.model
    B, w = b.values_q, b.quadrature.weights
    F, _ = _deformation(problem, state.chi)
    m, z, th = B @ state.m, B @ state.zeta, _positive(B @ state.theta)
    _, _, dm, _ = model.psi_me_terms(F, m, z)
    dm = dm + model.thermal_terms(m, z, th).d_m
    h = problem.loads.external_field
    if h is not None and not h.is_zero:
        dm = dm - np.einsum("qij,qi->qj", F, h.value(B @ state.chi, t))
    return B.T @ (w[:, None] * dm) + model.kappa1 * (problem.stiff_d @ state.m)


def residual_chemical(problem: DynamicProblem, state: StateVector) -> np.ndarray:
    """Gradient of the free energy with respect to concentration coefficients.

    ``int d_zeta psi v + kappa2 grad zeta . grad v``: the right-hand side of
    the chemical-potential system.
    """
    b, model = problem.basis, problem.model
    B, w = b.values_q, b.quadrature.weights
    F, _ = _deformation(problem, state.chi)
    m, z, th = B @ state.m, B @ state.zeta, _positive(B @ state.theta)
    _, _, _, dz = model.psi_me_terms(F, m, z)
    dz = dz + model.thermal_terms(m, z, th).d_zeta
    return B.T @ (w * dz) + model.kappa2 * (problem.stiff_d @ state.zeta)


def free_energy(problem: DynamicProblem, state: StateVector, t: float | None = None) -> float:
    """Potential whose coefficient gradients are the three residuals.

    Stored, thermal (temperature frozen), gradient and hyperstress energies
    minus the Zeeman and load pairings; no kinetic energy.
    """
    t = state.t if t is None else t
    items = _mechanical_items(problem, state, t)
    B, w = problem.basis.values_q, problem.basis.quadrature.weights
    m, z, th = B @ state.m, B @ state.zeta, _positive(B @ state.theta)
    psi_th = float(w @ problem.model.thermal_terms(m, z, th).psi)
    return sum(v for k, v in items.items() if k != "kinetic") + psi_th


def _mechanical_items(problem: DynamicProblem, state: StateVector, t: float) -> dict:
    """Items of the mechano-magneto-chemical energy with by-parts load terms."""
    b, model, ld = problem.basis, problem.model, problem.loads
    B, w = b.values_q, b.quadrature.weights
    F, _ = _deformation(problem, state.chi)
    m, z = B @ state.m, B @ state.zeta
    out = {}
    out["kinetic"] = 0.5 * model.rho * float(np.sum(state.v * (problem.mass_d @ state.v)))
    out["stored"] = float(w @ model.psi_me(F, m, z))
    out["exchange"] = 0.5 * model.kappa1 * float(np.sum(state.m * (problem.stiff_d @ state.m)))
    out["interfacial"] = 0.5 * model.kappa2 * float(state.zeta @ (problem.stiff_d @ state.zeta))
    out["hyperstress"] = 0.5 * float(np.sum(state.chi * (problem.hyper @ state.chi))) if problem.hyper is not None else 0.0
    h = ld.external_field
    if h is not None and not h.is_zero:
        Fm = np.einsum("qij,qj->qi", F, m)
        out["zeeman"] = -float(w @ np.sum(h.value(B @ state.chi, t) * Fm, axis=1))
    else:
        out["zeeman"] = 0.0
    out["load"] = -float(np.sum(_load_vector(problem, t) * state.chi))
    return out


def _explicit_rate(problem: DynamicProblem, state: StateVector, t: float) -> float:
    """Partial time derivative of the mechanical energy through the loads."""
    b, ld = problem.basis, problem.loads
    B, w = b.values_q, b.quadrature.weights
    val = -float(np.sum(_load_vector(problem, t, rate=True) * state.chi))
    h = ld.external_field
    if h is not None and not h.is_zero:
        F = _grad(b, state.chi)
        Fm = np.einsum("qij,qj->qi", F, B @ state.m)
        val -= float(w @ np.sum(h.rate(B @ state.chi, t) * Fm, axis=1))
    return val


# ---------------------------------------------------------------------------
# chemical potential
# ---------------------------------------------------------------------------


def _mobility_matrix(problem: DynamicProblem, F, m, z, th) -> tuple[np.ndarray, np.ndarray]:
    """Pulled-back mobility at quadrature points and its stiffness matrix."""
    b = problem.basis
    Mq = pull_back_tensor(F, problem.model.mobility_sp(m, z, th))
    return Mq, _tensor_stiffness(b, Mq)


def _tensor_stiffness(b: Basis, Tq: np.ndarray) -> np.ndarray:
    G, w = b.grads_q, b.quadrature.weights
    X = np.einsum("qab,qnb->qna", Tq * w[:, None, None], G, optimize=True)
    nq, n, d = G.shape
    K = G.transpose(1, 0, 2).reshape(n, nq * d) @ X.reshape(nq, n, d).transpose(0, 2, 1).reshape(nq * d, n)
    return 0.5 * (K + K.T)


def _transfer_data(problem: DynamicProblem, load: FieldLoad | None, coef: float, t: float, eps: float = 0.0):
    """Boundary mass ``coef M_Gamma`` and load ``coef int_Gamma data B``."""
    tf = problem.transfer
    n = problem.basis.size
    if coef == 0 or tf.weights.size == 0:
        return np.zeros((n, n)), np.zeros(n), None
    Mg = coef * tf.mass.toarray()
    if load is None:
        return Mg, np.zeros(n), np.zeros(tf.weights.size)
    data = load.scalar(tf.points, t)
    if eps > 0:
        data = data / (1 + eps * data)
    return Mg, coef * tf.linear(data), data


def solve_chemical_potential(problem: DynamicProblem, state: StateVector, t: float | None = None) -> np.ndarray:
    """Chemical potential from the algebraic constraint.

    Solves ``int tau2 M grad mu . grad v + mu v dx + tau2 int_Gamma M_b mu v
    = int d_zeta psi v + kappa2 grad zeta . grad v dx + tau2 int_Gamma M_b mu_e v``,
    the Galerkin form of ``mu = d_zeta psi + tau2 zeta' - kappa2 Lap zeta``
    after ``zeta'`` is eliminated through the diffusion equation.

    Raises
    ------
    SolverDivergence
        If the system matrix is not positive definite.
    """
    t = state.t if t is None else t
    A, rhs = _chemical_system(problem, state, t)
    try:
        c = cho_factor(A)
    except np.linalg.LinAlgError as exc:
        raise SolverDivergence("chemical-potential system is not positive definite") from exc
    return cho_solve(c, rhs)


def _chemical_system(problem: DynamicProblem, state: StateVector, t: float):
    b, model, ld = problem.basis, problem.model, problem.loads
    B = b.values_q
    F, _ = _deformation(problem, state.chi)
    m, z, th = B @ state.m, B @ state.zeta, _positive(B @ state.theta)
    _, KM = _mobility_matrix(problem, F, m, z, th)
    Mg, lg, _ = _transfer_data(problem, ld.mu_ext, ld.mass_transfer, t)
    tau2 = model.tau2
    A = tau2 * (KM + Mg) + problem.mass_d
    rhs = residual_chemical(problem, state) + tau2 * lg
    return A, rhs


def holonomic_residual(problem: DynamicProblem, state: StateVector) -> float:
    """Relative residual of the chemical-potential system at the stored ``mu``."""
    A, rhs = _chemical_system(problem, state, state.t)
    r = A @ state.mu - rhs
    return float(np.linalg.norm(r) / max(np.linalg.norm(rhs), np.linalg.norm(A @ state.mu), 1e-300))


def initial_state(problem: DynamicProblem) -> StateVector:
    """Initial coefficients with the chemical potential solved for."""
    d = problem.dim
    st = StateVector(
        0.0,
        problem.initial_chi(),
        _coeffs(problem.basis, problem.v0, (d,)),
        problem.initial_m(),
        problem.initial_zeta(),
        np.zeros(problem.basis.size),
        problem.initial_theta(),
    )
    if problem.dirichlet_dofs.size:
        v = np.array(st.v)
        v[problem.dirichlet_dofs] = 0.0
        st = replace(st, v=v)
    return replace(st, mu=solve_chemical_potential(problem, st))


# ---------------------------------------------------------------------------
# heat sources
# ---------------------------------------------------------------------------


def regularized_heat_source(
    tau1: float,
    tau2: float,
    m_dot: np.ndarray,
    zeta_dot: np.ndarray,
    mobility: np.ndarray,
    grad_mu: np.ndarray,
    eps: float,
    adiabatic_m: np.ndarray | None = None,
    adiabatic_zeta: np.ndarray | None = None,
) -> np.ndarray:
    """Pointwise heat production with saturated dissipation.

    ``tau1|m'|^2/(1+eps|m'|^2) + tau2 zeta'^2/(1+eps zeta'^2)
    + M grad mu . grad mu/(1+eps|grad mu|^2) + a_m . m' + a_zeta zeta'``
    where ``a_m = d_m psi_th`` and ``a_zeta = d_zeta psi_th`` are left
    unsaturated.

    Parameters
    ----------
    m_dot : ndarray, shape (nq, d)
    zeta_dot : ndarray, shape (nq,)
    mobility : ndarray, shape (nq, d, d)
    grad_mu : ndarray, shape (nq, d)
    adiabatic_m, adiabatic_zeta : ndarray, optional
        Thermal-part derivatives; omitted means no adiabatic terms.
    """
    m_dot = np.asarray(m_dot, dtype=float)
    zeta_dot = np.asarray(zeta_dot, dtype=float)
    grad_mu = np.asarray(grad_mu, dtype=float)
    mm = np.sum(m_dot * m_dot, axis=-1)
    zz = zeta_dot**2
    gg = np.sum(grad_mu * grad_mu, axis=-1)
    flux = np.einsum("...i,...ij,...j->...", grad_mu, np.asarray(mobility, dtype=float), grad_mu)
    src = tau1 * mm / (1 + eps * mm) + tau2 * zz / (1 + eps * zz) + flux / (1 + eps * gg)
    if adiabatic_m is not None:
        src = src + np.sum(np.asarray(adiabatic_m) * m_dot, axis=-1)
    if adiabatic_zeta is not None:
        src = src + np.asarray(adiabatic_zeta) * zeta_dot
    return src


# ---------------------------------------------------------------------------
# time stepping
# ---------------------------------------------------------------------------


def _newton(residual, jacobian, x0, tol, max_iter, what, xtol=1e-14):
    """Newton with backtracking on the residual norm; ``jacobian`` may lag.

    Converged when the residual is below ``tol``, a full step changes the
    iterate by less than ``xtol`` relative, or the line search stalls with the
    residual at the round-off floor ``eps |J| |x|`` (stiff systems).
    """
    x = x0.copy()
    r = residual(x)
    nr = np.linalg.norm(r, np.inf)
    lu = None
    jnorm = 0.0
    for it in range(max_iter):
        if not np.isfinite(nr):
            break
        if nr <= tol:
            return x, it
        J = jacobian(x)
        if J is not None:
            lu = lu_factor(J)
            jnorm = float(np.linalg.norm(J, np.inf))
        dx = -lu_solve(lu, r)
        if it > 0 and np.abs(dx).max() <= xtol * (1 + np.abs(x).max()):
            return x, it
        lam = 1.0
        while lam > 1e-4:
            try:
                xn = x + lam * dx
                rn = residual(xn)
                nn = np.linalg.norm(rn, np.inf)
            except DegenerateDeformation:
                nn = np.inf
            if np.isfinite(nn) and nn < (1 - 1e-4 * lam) * nr or nn <= tol:
                break
            lam *= 0.5
        else:
            if nr <= 1e3 * np.finfo(float).eps * jnorm * (1 + np.abs(x).max()):
                return x, it
            raise SolverDivergence(f"{what}: line search failed at residual {nr:.3g}")
        x, r, nr = xn, rn, nn
    if nr <= tol:
        return x, max_iter
    raise SolverDivergence(f"{what}: no convergence, residual {nr:.3g} > {tol:.3g}")


def _elastic_tangent(problem: DynamicProblem, F, m, z) -> np.ndarray:
    """``d^2/dchi^2`` of the stored energy as a dense ``(n d, n d)`` matrix."""
    b = problem.basis
    G, w = b.grads_q, b.quadrature.weights
    T = problem.model.stress_tangent(F, m, z)
    nq, n, d = G.shape
    X = np.einsum("qna,qiakb->qnikb", G * w[:, None, None], T, optimize=True)
    K = X.transpose(1, 2, 3, 0, 4).reshape(n * d * d, nq * d) @ G.transpose(0, 2, 1).reshape(nq * d, n)
    K = K.reshape(n, d, d, n).transpose(0, 1, 3, 2).reshape(n * d, n * d)
    return 0.5 * (K + K.T)


def _mechanics(problem: DynamicProblem, st: StateVector, dt: float):
    """Implicit midpoint for ``(chi, v)`` with frozen ``(m, zeta)``."""
    b, model = problem.basis, problem.model
    n, d = b.size, b.dim
    rho = model.rho
    fr = problem.free
    t_mid = st.t + 0.5 * dt
    chi0, v0 = np.asarray(st.chi), np.asarray(st.v)
    Md = problem.mass_d
    Mfull = np.kron(Md, np.eye(d))
    idx = (fr[:, None] * d + np.arange(d)[None, :]).ravel()
    B = b.values_q
    m, z = B @ st.m, B @ st.zeta
    F0, _ = _deformation(problem, chi0)
    K = _elastic_tangent(problem, F0, m, z)
    if problem.hyper is not None:
        K = K + np.kron(problem.hyper, np.eye(d))
    Jac = (2 * rho / dt**2) * Mfull + 0.5 * K
    Jac = Jac[np.ix_(idx, idx)]
    lu_once = [Jac]

    def res(x):
        delta = np.zeros(n * d)
        delta[idx] = x
        chi_mid = chi0 + 0.5 * delta.reshape(n, d)
        r = (2 * rho / dt**2) * (Mfull @ (delta - dt * v0.ravel()))
        r += _chi_gradient(problem, chi_mid, st.m, st.zeta, t_mid).ravel()
        return r[idx]

    def jac(x):
        return lu_once.pop() if lu_once else None

    scale = (2 * rho / dt**2) * np.abs(Mfull @ (dt * v0.ravel())).max() + np.abs(_load_vector(problem, t_mid)).max() + 1.0
    x0 = (dt * v0.ravel())[idx]
    x, _ = _newton(res, jac, x0, problem.settings.tol_newton * scale, problem.settings.max_newton, "momentum")
    delta = np.zeros(n * d)
    delta[idx] = x
    delta = delta.reshape(n, d)
    chi1 = chi0 + delta
    v1 = 2 * delta / dt - v0
    if problem.dirichlet_dofs.size:
        v1[problem.dirichlet_dofs] = 0.0
    _deformation(problem, chi1)
    return chi1, v1


def _local_blocks(b: Basis, w: np.ndarray, H: np.ndarray) -> np.ndarray:
    """``int H_ij B_n B_m`` as an array ``(k, k, n, n)``."""
    B = b.values_q
    k = H.shape[-1]
    out = np.empty((k, k, b.size, b.size))
    for i in range(k):
        for j in range(i, k):
            blk = (B * (w * H[:, i, j])[:, None]).T @ B
            out[i, j] = blk
            out[j, i] = blk
    return out


def _chemistry(problem: DynamicProblem, st: StateVector, chi1: np.ndarray, dt: float):
    """Implicit Euler for ``(m, zeta, mu)`` at the new deformation."""
    b, model, ld = problem.basis, problem.model, problem.loads
    B, w = b.values_q, b.quadrature.weights
    n, d = b.size, b.dim
    t1 = st.t + dt
    F, _ = _deformation(problem, chi1)
    th = _positive(B @ st.theta)
    Md, Kd = problem.mass_d, problem.stiff_d
    m_old, z_old = np.asarray(st.m), np.asarray(st.zeta)
    Mq, KM = _mobility_matrix(problem, F, B @ m_old, B @ z_old, th)
    Mg, lg, _ = _transfer_data(problem, ld.mu_ext, ld.mass_transfer, t1)
    h = ld.external_field
    drive = np.zeros((n, d))
    if h is not None and not h.is_zero:
        drive = B.T @ (w[:, None] * np.einsum("qij,qi->qj", F, h.value(B @ chi1, t1)))
    tau1, tau2, k1, k2 = model.tau1, model.tau2, model.kappa1, model.kappa2
    nm = n * d

    def split(x):
        return x[:nm].reshape(n, d), x[nm : nm + n], x[nm + n :]

    def local(mc, zc):
        m, z = B @ mc, B @ zc
        _, _, dm, dz = model.psi_me_terms(F, m, z)
        tt = model.thermal_terms(m, z, th)
        return m, z, dm + tt.d_m, dz + tt.d_zeta

    def res(x):
        mc, zc, mu = split(x)
        _, _, dm, dz = local(mc, zc)
        rm = (tau1 / dt) * (Md @ (mc - m_old)) + k1 * (Kd @ mc) + B.T @ (w[:, None] * dm) - drive
        rz = Md @ (zc - z_old) / dt + (KM + Mg) @ mu - lg
        rmu = B.T @ (w * dz) + (tau2 / dt) * (Md @ (zc - z_old)) + k2 * (Kd @ zc) - Md @ mu
        return np.concatenate([rm.ravel(), rz, rmu])

    def jac(x):
        mc, zc, _ = split(x)
        m, z, _, _ = local(mc, zc)
        H = model.local_hessian(F, m, z, th)
        blk = _local_blocks(b, w, H)
        Jm = np.zeros((nm + 2 * n, nm + 2 * n))
        Amm = np.kron((tau1 / dt) * Md + k1 * Kd, np.eye(d))
        Amm += blk[:d, :d].transpose(2, 0, 3, 1).reshape(nm, nm)
        Jm[:nm, :nm] = Amm
        Jm[:nm, nm : nm + n] = blk[:d, d].transpose(1, 0, 2).reshape(nm, n)
        Jm[nm : nm + n, nm : nm + n] = Md / dt
        Jm[nm : nm + n, nm + n :] = KM + Mg
        Jm[nm + n :, :nm] = blk[d, :d].transpose(1, 2, 0).reshape(n, nm)
        Jm[nm + n :, nm : nm + n] = blk[d, d] + (tau2 / dt) * Md + k2 * Kd
        Jm[nm + n :, nm + n :] = -Md
        return Jm

    x0 = np.concatenate([m_old.ravel(), z_old, np.asarray(st.mu)])
    scale = 1.0 + max(np.abs(drive).max(initial=0), np.abs(lg).max(initial=0), (tau1 / dt) * np.abs(Md @ m_old).max())
    x, _ = _newton(res, jac, x0, problem.settings.tol_newton * scale, problem.settings.max_newton, "magnetization/diffusion")
    m1, z1, mu1 = split(x)
    return m1, z1, mu1, Mq, KM, Mg, lg


def _heat(problem: DynamicProblem, st: StateVector, chi1, m1, z1, rates, dt: float):
    """Implicit Euler for the enthalpy with ``theta`` as unknown."""
    b, model, ld = problem.basis, problem.model, problem.loads
    B, w = b.values_q, b.quadrature.weights
    t1 = st.t + dt
    eps = problem.epsilon
    mq, zq = B @ m1, B @ z1
    w_old = st.enthalpy(problem)
    F, _ = _deformation(problem, chi1)
    Kq = pull_back_tensor(F, model.conductivity_sp(mq, zq, _positive(B @ st.theta)))
    KK = _tensor_stiffness(b, Kq)
    Kg, lg, _ = _transfer_data(problem, ld.theta_ext, ld.heat_transfer, t1, eps)
    m_dot, z_dot, dissipative = rates

    def pieces(theta):
        tq = B @ theta
        e, cv, _, _ = model.enthalpy_terms(mq, zq, tq)
        tp = _positive(tq)
        tt = model.thermal_terms(mq, zq, tp)
        adia = np.sum(tt.d_m * m_dot, axis=1) + tt.d_zeta * z_dot
        d_adia = np.where(tq > 0, np.sum(tt.d_theta_m * m_dot, axis=1) + tt.d_theta_zeta * z_dot, 0.0)
        return e, cv, adia, d_adia

    def res(theta):
        e, _, adia, _ = pieces(theta)
        return B.T @ (w * ((e - w_old) / dt - dissipative - adia)) + (KK + Kg) @ theta - lg

    def jac(theta):
        _, cv, _, d_adia = pieces(theta)
        return (B * (w * (cv / dt - d_adia))[:, None]).T @ B + KK + Kg

    th0 = np.asarray(st.theta)
    scale = 1.0 + np.abs(B.T @ (w * w_old)).max() / dt
    theta1, _ = _newton(res, jac, th0.copy(), 1e-2 * problem.settings.tol_newton * scale,
                        problem.settings.max_newton, "heat")
    e, _, adia, _ = pieces(theta1)
    source = float(w @ (dissipative + adia)) * dt
    boundary = float(np.sum(lg) - np.sum(Kg @ theta1)) * dt
    defect = float(w @ (e - w_old)) - source - boundary
    return theta1, source, boundary, defect


def _substep(problem: DynamicProblem, st: StateVector, dt: float) -> StateVector:
    b, model = problem.basis, problem.model
    B, w = b.values_q, b.quadrature.weights
    t1 = st.t + dt
    chi1, v1 = _mechanics(problem, st, dt)
    m1, z1, mu_s, Mq, KM, Mg, lg = _chemistry(problem, st, chi1, dt)
    m_dot = B @ ((m1 - st.m) / dt)
    z_dot = B @ ((z1 - st.zeta) / dt)
    grad_mu = _grad(b, mu_s)
    diss = regularized_heat_source(model.tau1, model.tau2, m_dot, z_dot, Mq, grad_mu, problem.epsilon)
    theta1, source, boundary_heat, defect = _heat(problem, st, chi1, m1, z1, (m_dot, z_dot, diss), dt)
    # adiabatic work at the lagged temperature seen by the chemistry solve
    tt = model.thermal_terms(B @ m1, B @ z1, _positive(B @ st.theta))
    adia = float(w @ (np.sum(tt.d_m * m_dot, axis=1) + tt.d_zeta * z_dot)) * dt
    dm_c = np.asarray(m1 - st.m)
    dz_c = np.asarray(z1 - st.zeta)
    diss_m = model.tau1 * float(np.sum(dm_c * (problem.mass_d @ dm_c))) / dt
    diss_z = model.tau2 * float(dz_c @ (problem.mass_d @ dz_c)) / dt
    diss_mu = float(mu_s @ (KM @ mu_s)) * dt
    chem = float(mu_s @ (lg - Mg @ mu_s)) * dt
    flux = float(np.sum(lg - Mg @ mu_s)) * dt
    new = StateVector(t1, chi1, v1, m1, z1, mu_s, theta1)
    work = 0.5 * dt * (_explicit_rate(problem, st, st.t) + _explicit_rate(problem, new, t1))
    rec = StepRecord(dt, 1, diss_m, diss_z, diss_mu, adia, source, boundary_heat, chem, work, flux, defect)
    new = replace(new, record=rec)
    return replace(new, mu=solve_chemical_potential(problem, new))


def step(problem: DynamicProblem, state: StateVector, dt: float | None = None, t: float | None = None) -> StateVector:
    """Advance one step of size ``dt``, halving on failure.

    Failed substeps (no Newton convergence or ``det grad chi <= 0``) are
    retried at half the size until ``dt * retry_floor``.

    Raises
    ------
    StepFloorReached
        When the substep would fall below the floor.
    DegenerateDeformation
        If the incoming state is already inadmissible.
    """
    dt = problem.dt if dt is None else float(dt)
    if not dt > 0:
        raise ValidationError("dt must be positive")
    if t is not None and abs(t - state.t) > 1e-12 * max(1.0, abs(t)):
        state = replace(state, t=float(t))
    _deformation(problem, state.chi)
    floor = dt * problem.settings.retry_floor
    t_goal = state.t + dt
    cur, h = state, dt
    total = StepRecord()
    while t_goal - cur.t > 1e-12 * dt:
        h = min(h, t_goal - cur.t)
        try:
            nxt = _substep(problem, cur, h)
        except (SolverDivergence, DegenerateDeformation):
            h *= 0.5
            if h < floor:
                raise StepFloorReached(f"time step fell below {floor:.3g} at t = {cur.t:.6g}") from None
            continue
        total = total + nxt.record
        cur = nxt
    return replace(cur, t=t_goal, record=total)


def simulate(problem: DynamicProblem, state: StateVector | None = None,
             callback: Callable[[StateVector], None] | None = None) -> Trajectory:
    """Run ``n_steps`` steps from the initial data (or ``state``)."""
    st = initial_state(problem) if state is None else state
    states = [st]
    if callback is not None:
        callback(st)
    for k in range(problem.n_steps):
        st = step(problem, st, problem.dt)
        st = replace(st, t=(k + 1) * problem.dt)
        states.append(st)
        if callback is not None:
            callback(st)
    return Trajectory(problem, states)


# ---------------------------------------------------------------------------
# audit and monitors
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EnergyReport:
    """Energy items at one time with the running balance residuals.

    Dissipation, adiabatic, boundary and explicit-work entries are
    integrated from ``0`` to ``t``.  ``residual_alpha0`` closes the
    mechano-magneto-chemical balance, ``residual_alpha1`` the total
    balance in which the thermal energy replaces the heat sources.
    """

    t: float
    kinetic: float
    stored: float
    exchange: float
    interfacial: float
    hyperstress: float
    thermal: float
    zeeman: float
    load: float
    diss_m: float
    diss_zeta: float
    diss_mu: float
    adiabatic: float
    boundary_heat: float
    boundary_chem: float
    explicit_work: float
    residual_alpha0: float
    residual_alpha1: float

    @property
    def mechanical(self) -> float:
        return self.kinetic + self.stored + self.exchange + self.interfacial + self.hyperstress + self.zeeman + self.load

    @property
    def total(self) -> float:
        return self.mechanical + self.thermal

    def total_at(self, alpha: int) -> float:
        return self.total if alpha else self.mechanical

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


def energy_audit(problem: DynamicProblem, trajectory: Trajectory | Sequence[StateVector], alpha: int | None = None) -> list[EnergyReport]:
    """Itemized energies and balance residuals along a trajectory.

    The Zeeman and traction work enter in integrated-by-parts form: their
    energies are part of the mechanical energy and only the explicit time
    derivatives of the loads are integrated, so no ``grad chi'`` appears.
    ``alpha`` is accepted for symmetry; both residuals are always returned.
    """
    states = trajectory.states if isinstance(trajectory, Trajectory) else list(trajectory)
    w = problem.basis.quadrature.weights
    out = []
    acc = StepRecord()
    base0 = base1 = None
    for st in states:
        if st is not states[0]:
            acc = acc + st.record
        it = _mechanical_items(problem, st, st.t)
        thermal = float(w @ st.enthalpy(problem))
        e0 = sum(it.values())
        if base0 is None:
            base0, base1 = e0, e0 + thermal
        diss = acc.diss_m + acc.diss_zeta + acc.diss_mu + acc.adiabatic
        r0 = e0 + diss - base0 - acc.explicit_work - acc.boundary_chem
        r1 = e0 + thermal - base1 - acc.explicit_work - acc.boundary_chem - acc.boundary_heat
        out.append(EnergyReport(
            st.t, it["kinetic"], it["stored"], it["exchange"], it["interfacial"], it["hyperstress"], thermal,
            it["zeeman"], it["load"], acc.diss_m, acc.diss_zeta, acc.diss_mu, acc.adiabatic,
            acc.boundary_heat, acc.boundary_chem, acc.explicit_work, abs(r0), abs(r1),
        ))
    return out


def relative_residual(reports: Sequence[EnergyReport], alpha: int) -> float:
    """Largest balance residual over the run divided by the largest energy magnitude."""
    res = max(r.residual_alpha1 if alpha else r.residual_alpha0 for r in reports)
    scale = max(abs(r.total_at(alpha)) for r in reports)
    return res / scale if scale > 0 else res


def estimate_monitor(trajectory: Trajectory, r: float = 1.2) -> dict:
    """Time series of the quantities bounded uniformly by the a-priori estimates.

    Returns a dict of arrays keyed by quantity, each with a companion
    ``"<key>_sup"`` running supremum.  Flux monitors use the weighted
    gradients ``Cof(F) grad mu / sqrt(J)`` and ``Cof(F) grad theta / sqrt(J)``.
    """
    p = trajectory.problem
    b = p.basis
    B, w = b.values_q, b.quadrature.weights
    Hq = b.hessians_q
    cols = {k: [] for k in ("mechanical_energy", "lap_zeta_l2", "lap_m_l2", "flux_mu_l2", "flux_theta_l2",
                            "theta_l1", "grad_theta_lr", "rate_m_l2", "rate_zeta_l2", "J_min")}
    prev = None
    for st in trajectory.states:
        it = _mechanical_items(p, st, st.t)
        cols["mechanical_energy"].append(sum(it.values()))
        lap = np.einsum("qnaa->qn", Hq)
        cols["lap_zeta_l2"].append(float(np.sqrt(w @ (lap @ st.zeta) ** 2)))
        cols["lap_m_l2"].append(float(np.sqrt(w @ np.sum((lap @ st.m) ** 2, axis=1))))
        F, J = _deformation(p, st.chi)
        cof = cofactor(F)
        for key, c in (("flux_mu_l2", st.mu), ("flux_theta_l2", st.theta)):
            g = np.einsum("qij,qj->qi", cof, _grad(b, c)) / np.sqrt(J)[:, None]
            cols[key].append(float(np.sqrt(w @ np.sum(g * g, axis=1))))
        tq = B @ st.theta
        cols["theta_l1"].append(float(w @ np.abs(tq)))
        gt = _grad(b, st.theta)
        cols["grad_theta_lr"].append(float((w @ np.linalg.norm(gt, axis=1) ** r) ** (1 / r)))
        if prev is None or st.record.dt == 0:
            cols["rate_m_l2"].append(0.0)
            cols["rate_zeta_l2"].append(0.0)
        else:
            dtt = st.t - prev.t
            cols["rate_m_l2"].append(float(np.sqrt(w @ np.sum((B @ (st.m - prev.m) / dtt) ** 2, axis=1))))
            cols["rate_zeta_l2"].append(float(np.sqrt(w @ (B @ (st.zeta - prev.zeta) / dtt) ** 2)))
        cols["J_min"].append(float(J.min()))
        prev = st
    out = {"t": trajectory.times}
    for k, v in cols.items():
        arr = np.asarray(v)
        out[k] = arr
        if k != "J_min":
            out[k + "_sup"] = np.maximum.accumulate(np.abs(arr))
    return out


@dataclass(frozen=True)
class TemperatureCheck:
    theta_min: float
    location: np.ndarray
    time: float
    passed: bool


def nonneg_temperature_check(trajectory: Trajectory, tol: float = 1e-8) -> TemperatureCheck:
    """Smallest temperature over quadrature points and stored times."""
    p = trajectory.problem
    B, pts = p.basis.values_q, p.basis.quadrature.points
    best = (np.inf, None, 0.0)
    for st in trajectory.states:
        tq = B @ st.theta
        i = int(np.argmin(tq))
        if tq[i] < best[0]:
            best = (float(tq[i]), pts[i].copy(), st.t)
    return TemperatureCheck(best[0], best[1], best[2], best[0] >= -tol)
