"""Constrained minimization of the static total energy in entropy form.

Unknowns are spline coefficients of the deformation ``chi``, the referential
magnetization ``m``, the concentration ``zeta`` and the entropy ``s``.  The
energy is

    U = int e~(grad chi, m, zeta, s) + kappa1/2 |grad m|^2 + kappa2/2 |grad zeta|^2
        + H(grad^2 chi) + 1/2 int grad phi . m
        - int f . chi - int_GN g . chi - int h_e . m,

minimized subject to ``int zeta = Z_tot``, ``int s = S_tot``, Dirichlet data
on ``Gamma_D`` and the Ciarlet-Necas condition.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .constitutive import MaterialModel, cofactor, determinant, invert_entropy
from .discretization import Basis, DiscreteField, assemble_mass_stiffness, boundary_form
from .errors import (
    DegenerateDeformation,
    LineSearchFailure,
    OutOfRange,
    ValidationError,
)
from .hyperstress import KernelSpec, hessian_form
from .loads import FieldLoad
from .magnetostatics import DepositedDemag, SpatialGrid, gap_report

__all__ = [
    "StaticLoads",
    "OptimizerSettings",
    "StaticProblem",
    "StaticState",
    "StaticEnergyReport",
    "TraceEntry",
    "total_static_energy",
    "static_gradient",
    "minimize",
    "temperature_from_entropy",
    "ground_state",
]


@dataclass(frozen=True)
class StaticLoads:
    """Dead loads, applied field, constraint totals and Dirichlet data.

    ``dirichlet_matrix``/``dirichlet_offset`` define the affine clamp
    ``chi_D(x) = A x + b`` on the Dirichlet facets of the mesh.  ``None``
    totals are taken from the initial state.
    """

    body_force: FieldLoad | None = None
    traction: FieldLoad | None = None
    traction_facets: str = "free"
    external_field: FieldLoad | None = None
    zeta_total: float | None = None
    entropy_total: float | None = None
    dirichlet_matrix: tuple | None = None
    dirichlet_offset: tuple | None = None


@dataclass(frozen=True)
class OptimizerSettings:
    max_iter: int = 500
    tol_grad: float = 1e-6
    tol_con: float = 1e-8
    tol_cn_factor: float = 1e-3
    memory: int = 12
    armijo: float = 1e-4
    min_step: float = 1e-14
    cn_weight: float = 10.0
    cn_escalation: float = 10.0
    cn_rounds: int = 4
    cn_samples: int = 10**6
    seed: int = 0


@dataclass
class StaticState:
    chi: np.ndarray  # (n, d)
    m: np.ndarray  # (n, d)
    zeta: np.ndarray  # (n,)
    s: np.ndarray  # (n,)

    def copy(self) -> "StaticState":
        return StaticState(self.chi.copy(), self.m.copy(), self.zeta.copy(), self.s.copy())


@dataclass
class StaticEnergyReport:
    """Itemized energy; ``total`` equals the sum of ``items`` (signs included)."""

    items: dict
    total: float
    J_min: float
    theta_min: float


@dataclass
class TraceEntry:
    iteration: int
    energy: float
    grad_norm: float
    zeta_residual: float
    entropy_residual: float
    cn_gap: float
    J_min: float
    step: float


class StaticProblem:
    """Static minimization problem on a spline basis.

    Parameters
    ----------
    model : MaterialModel
    basis : Basis
        Scalar spline space shared by all fields; the mesh must carry at
        least one Dirichlet facet.
    loads : StaticLoads
    kernel : KernelSpec, optional
        Nonlocal hyperstress kernel; omitted means no second-gradient term.
    grid : SpatialGrid, optional
        Truncation box for the magnetostatic term; omitted means no
        demagnetizing energy (1-D or field-free runs).
    settings : OptimizerSettings
    """

    def __init__(
        self,
        model: MaterialModel,
        basis: Basis,
        loads: StaticLoads = StaticLoads(),
        kernel: KernelSpec | None = None,
        grid: SpatialGrid | None = None,
        settings: OptimizerSettings = OptimizerSettings(),
    ):
        mesh = basis.mesh
        self.model, self.basis, self.loads = model, basis, loads
        self.kernel, self.grid, self.settings = kernel, grid, settings
        d = basis.dim
        if model.dim != d:
            raise ValidationError("material and mesh dimensions differ")
        facets = mesh.resolve_tags("dirichlet")
        if not facets or sum(mesh.facet_measure(f) for f in facets) <= 0:
            raise ValidationError("static problems need a Dirichlet boundary of positive measure")
        if grid is not None and d != 2:
            raise ValidationError("magnetostatics is two-dimensional")
        self.dirichlet_dofs = basis.boundary_dofs(facets)
        A = np.eye(d) if loads.dirichlet_matrix is None else np.asarray(loads.dirichlet_matrix, float).reshape(d, d)
        b = np.zeros(d) if loads.dirichlet_offset is None else np.asarray(loads.dirichlet_offset, float).reshape(d)
        self.chi_D = basis.interpolate(lambda x: x @ A.T + b)
        self.free_chi = np.setdiff1d(np.arange(basis.size), self.dirichlet_dofs)
        self.mass, self.stiffness = _stiffness(basis)
        self.hyper = hessian_form(kernel, basis) if kernel is not None else None
        q = basis.quadrature
        self.load_vector = np.zeros((basis.size, d))
        if loads.body_force is not None and not loads.body_force.is_zero:
            self.load_vector += basis.values_q.T @ (q.weights[:, None] * loads.body_force.value(q.points))
        tf = mesh.resolve_tags(loads.traction_facets)
        if loads.traction is not None and not loads.traction.is_zero and tf:
            bf = boundary_form(basis, tf)
            self.load_vector += bf.linear(loads.traction.value(bf.points))
        self.demag = (DepositedDemag(grid, DepositedDemag.smoothing_for(grid, q.points))
                      if grid is not None else None)
        self.normal = basis.integrals.copy()

    @property
    def dim(self) -> int:
        return self.basis.dim


def _stiffness(basis: Basis):
    return assemble_mass_stiffness(basis)


def ground_state(problem: StaticProblem, theta_ref: float = 1.0) -> StaticState:
    """``chi = chi_D`` interpolant, ``m = 0``, ``zeta = zeta_ref``, ``s = s(theta_ref)``."""
    b, d = problem.basis, problem.dim
    model = problem.model
    zr = float(getattr(model, "zeta_ref", 0.0))
    s0 = float(model.entropy(np.zeros(d), np.asarray(zr), np.asarray(theta_ref)))
    return StaticState(problem.chi_D.copy(), np.zeros((b.size, d)), np.full(b.size, zr), np.full(b.size, s0))


def _fields(problem: StaticProblem, st: StaticState):
    b = problem.basis
    B, G = b.values_q, b.grads_q
    F = np.einsum("qna,nk->qka", G, st.chi, optimize=True)
    y = B @ st.chi
    m = B @ st.m
    z = B @ st.zeta
    s = B @ st.s
    return F, y, m, z, s


def _evaluate(problem: StaticProblem, st: StaticState, want_grad: bool):
    """Energy report and (optionally) gradient state; ``inf`` for inadmissible states."""
    model, b = problem.model, problem.basis
    w = b.quadrature.weights
    B, G = b.values_q, b.grads_q
    F, y, m, z, s = _fields(problem, st)
    J = determinant(F)
    J_min = float(J.min())
    inf_report = StaticEnergyReport({}, np.inf, J_min, np.nan)
    if J_min <= 0:
        return inf_report, None
    try:
        theta = invert_entropy(model, m, z, s)
    except OutOfRange:
        return inf_report, None
    psi, S, dm, dz = model.psi_me_terms(F, m, z)
    e_th = model.e_th(m, z, theta)
    tt = model.thermal_terms(m, z, theta)
    K = problem.stiffness
    items = {}
    items["bulk"] = float(w @ (psi + e_th))
    Km = K @ st.m
    Kz = K @ st.zeta
    items["exchange"] = 0.5 * model.kappa1 * float(np.sum(st.m * Km))
    items["interfacial"] = 0.5 * model.kappa2 * float(st.zeta @ Kz)
    if problem.hyper is not None:
        Hc = problem.hyper @ st.chi
        items["hyperstress"] = 0.5 * float(np.sum(st.chi * Hc))
    else:
        Hc = np.zeros_like(st.chi)
        items["hyperstress"] = 0.0
    Fm = np.einsum("qij,qj->qi", F, m)
    dE_dF = w[:, None, None] * S
    dE_dy = np.zeros_like(y)
    dE_dm = w[:, None] * (dm + tt.d_m)
    if problem.demag is not None:
        e_mag, d_mom, d_y = problem.demag.energy_and_gradient(y, w[:, None] * Fm)
        if not np.isfinite(e_mag):
            return inf_report, None
        items["magnetostatic"] = float(e_mag)
        dE_dF += w[:, None, None] * np.einsum("qi,qj->qij", d_mom, m)
        dE_dm += w[:, None] * np.einsum("qij,qi->qj", F, d_mom)
        dE_dy += d_y
    else:
        items["magnetostatic"] = 0.0
    h_load = problem.loads.external_field
    if h_load is not None and not h_load.is_zero:
        h = h_load.value(y)
        items["zeeman"] = -float(w @ np.sum(h * Fm, axis=1))
        dE_dF -= w[:, None, None] * np.einsum("qi,qj->qij", h, m)
        dE_dm -= w[:, None] * np.einsum("qij,qi->qj", F, h)
        dE_dy -= w[:, None] * np.einsum("qij,qi->qj", h_load.gradient(y), Fm)
    else:
        items["zeeman"] = 0.0
    items["load"] = -float(np.sum(problem.load_vector * st.chi))
    total = float(sum(items.values()))
    rep = StaticEnergyReport(items, total, J_min, float(theta.min()))
    if not want_grad:
        return rep, None
    g_chi = np.einsum("qna,qka->nk", G, dE_dF, optimize=True) + B.T @ dE_dy + Hc - problem.load_vector
    g_m = B.T @ dE_dm + model.kappa1 * Km
    g_z = B.T @ (w * (dz + tt.d_zeta)) + model.kappa2 * Kz
    g_s = B.T @ (w * theta)
    return rep, StaticState(g_chi, g_m, g_z, g_s)


def total_static_energy(problem: StaticProblem, chi, m, zeta, s) -> StaticEnergyReport:
    """Itemized static energy.

    Raises
    ------
    DegenerateDeformation
        If ``det grad chi <= 0`` at a quadrature point.
    """
    st = StaticState(np.asarray(chi, float), np.asarray(m, float), np.asarray(zeta, float), np.asarray(s, float))
    rep, _ = _evaluate(problem, st, False)
    if rep.J_min <= 0:
        raise DegenerateDeformation(f"det grad chi = {rep.J_min:.3g} <= 0")
    return rep


def static_gradient(problem: StaticProblem, state: StaticState) -> StaticState:
    """First variation of the static energy with respect to all coefficients."""
    rep, g = _evaluate(problem, state, True)
    if g is None:
        raise DegenerateDeformation("gradient requested at an inadmissible state")
    return g


def temperature_from_entropy(model: MaterialModel, chi, m, zeta, s) -> np.ndarray:
    """Temperature ``theta = d_s e~`` at the quadrature points of the fields.

    ``chi`` is accepted for interface symmetry; the bundled thermal part does
    not depend on the deformation.  Accepts discrete fields or point arrays.
    """
    def at_q(v):
        if isinstance(v, DiscreteField):
            return v.basis.values_q @ v.coeffs
        return np.asarray(v, float)

    return invert_entropy(model, at_q(m), at_q(zeta), at_q(s))


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------


class _Packer:
    """Free-variable vector <-> state, with metric and constraint projections.

    The metric is block diagonal: ``M + lame K + Hs`` on free deformation
    coefficients (per component), ``M + kappa1 K`` on magnetization,
    ``M + kappa2 K`` on concentration and ``M`` on entropy, with ``M`` and
    ``K`` the scalar mass and stiffness matrices.
    """

    def __init__(self, problem: StaticProblem):
        self.p = problem
        n, d = problem.basis.size, problem.dim
        self.n, self.d = n, d
        self.nf = problem.free_chi.size
        self.sizes = [self.nf * d, n * d, n, n]
        self.offsets = np.cumsum([0] + self.sizes)
        self.a = problem.normal
        M = problem.mass.toarray()
        K = problem.stiffness.toarray()
        model = problem.model
        fr = problem.free_chi
        P_chi = M + getattr(model, "lame", 1.0) * K
        if problem.hyper is not None:
            P_chi = P_chi + problem.hyper
        self.factors = [
            cho_factor(P_chi[np.ix_(fr, fr)]),
            cho_factor(M + model.kappa1 * K),
            cho_factor(M + model.kappa2 * K),
            cho_factor(M),
        ]
        self.a_hat = [cho_solve(self.factors[k], self.a) for k in (2, 3)]

    def pack(self, st: StaticState) -> np.ndarray:
        return np.concatenate([st.chi[self.p.free_chi].ravel(), st.m.ravel(), st.zeta, st.s])

    def unpack(self, x: np.ndarray) -> StaticState:
        o = self.offsets
        chi = self.p.chi_D.copy()
        chi[self.p.free_chi] = x[o[0] : o[1]].reshape(self.nf, self.d)
        return StaticState(chi, x[o[1] : o[2]].reshape(self.n, self.d).copy(), x[o[2] : o[3]].copy(), x[o[3] : o[4]].copy())

    def pack_grad(self, g: StaticState) -> np.ndarray:
        return np.concatenate([g.chi[self.p.free_chi].ravel(), g.m.ravel(), g.zeta, g.s])

    def precondition(self, v: np.ndarray) -> tuple[np.ndarray, float, float]:
        """Riesz representative of ``v`` projected onto the constraint tangent space.

        Also returns the multipliers of the two integral constraints.
        """
        o = self.offsets
        r = np.empty_like(v)
        r[o[0] : o[1]] = cho_solve(self.factors[0], v[o[0] : o[1]].reshape(self.nf, self.d)).ravel()
        r[o[1] : o[2]] = cho_solve(self.factors[1], v[o[1] : o[2]].reshape(self.n, self.d)).ravel()
        lam = []
        for j, k in enumerate((2, 3)):
            blk = slice(o[k], o[k + 1])
            rv = cho_solve(self.factors[k], v[blk])
            mu = float(self.a @ rv / (self.a @ self.a_hat[j]))
            r[blk] = rv - mu * self.a_hat[j]
            lam.append(mu)
        return r, lam[0], lam[1]

    def restore(self, x: np.ndarray, z_tot: float, s_tot: float) -> np.ndarray:
        """Shift zeta and s by constants so the integral constraints hold exactly."""
        o = self.offsets
        vol = float(self.a.sum())
        x = x.copy()
        x[o[2] : o[3]] += (z_tot - self.a @ x[o[2] : o[3]]) / vol
        x[o[3] : o[4]] += (s_tot - self.a @ x[o[3] : o[4]]) / vol
        return x


@dataclass
class MinimizeResult:
    state: StaticState
    trace: list = field(default_factory=list)
    converged: bool = False
    status: str = ""
    multipliers: tuple = (np.nan, np.nan)
    report: StaticEnergyReport | None = None
    cn_gap: float = np.nan
    cn_weight: float = 0.0


def _cn_terms(problem: StaticProblem, st: StaticState, samples: int, seed: int):
    """Gap estimate and the derivative of ``int J`` (image measure frozen)."""
    b = problem.basis
    fld = DiscreteField(b, st.chi)
    gap = gap_report(fld, n_samples=samples, seed=seed).gap if problem.dim == 2 else 0.0
    F, *_ = _fields(problem, st)
    dJ = b.quadrature.weights[:, None, None] * cofactor(F)
    g_chi = np.einsum("qna,qka->nk", b.grads_q, dJ, optimize=True)
    return gap, g_chi


def minimize(problem: StaticProblem, initial_state: StaticState) -> MinimizeResult:
    """Limited-memory quasi-Newton descent in the feasible affine subspace.

    Linear constraints are kept exactly by working in their tangent space;
    the Ciarlet-Necas condition enters as ``w/2 max(gap, 0)^2`` with ``w``
    escalated in outer rounds.  Trial steps with ``det grad chi <= 0`` or
    nonfinite energy are rejected by the backtracking line search.

    Raises
    ------
    DegenerateDeformation
        If the initial state has ``det grad chi <= 0``.
    LineSearchFailure
        If no admissible descent step exists above ``min_step``.
    """
    cfg = problem.settings
    st0 = initial_state.copy()
    rep0, _ = _evaluate(problem, replace(st0, chi=_clamped(problem, st0.chi)), False)
    if rep0.J_min <= 0:
        raise DegenerateDeformation(f"initial det grad chi = {rep0.J_min:.3g} <= 0")
    if np.max(np.abs(st0.chi[problem.dirichlet_dofs] - problem.chi_D[problem.dirichlet_dofs])) > 1e-10:
        raise ValidationError("initial deformation violates the Dirichlet data")
    pk = _Packer(problem)
    a = pk.a
    z_tot = problem.loads.zeta_total if problem.loads.zeta_total is not None else float(a @ st0.zeta)
    s_tot = problem.loads.entropy_total if problem.loads.entropy_total is not None else float(a @ st0.s)
    x = pk.restore(pk.pack(st0), z_tot, s_tot)
    result = MinimizeResult(pk.unpack(x))
    weight = 0.0
    cn_grad = None
    cn_ref = 0.0
    tol_cn = cfg.tol_cn_factor * problem.basis.mesh.measure
    it_total = 0

    def objective(xv, grad=True):
        st = pk.unpack(xv)
        rep, g = _evaluate(problem, st, grad)
        val = rep.total
        if not np.isfinite(val):
            return rep, val, None
        gv = pk.pack_grad(g) if grad else None
        if weight > 0 and cn_grad is not None:
            # linearized penalty: gap moves with int J at frozen image measure
            intJ = float(np.sum(cn_grad * st.chi))
            gap = max(cn_ref + intJ, 0.0)
            val = val + 0.5 * weight * gap**2
            if grad and gap > 0:
                gv = gv + weight * gap * pk.pack_grad(StaticState(cn_grad, 0 * st.m, 0 * st.zeta, 0 * st.s))
        return rep, val, gv

    for rnd in range(cfg.cn_rounds + 1):
        x, it_total, status, lam = _lbfgs(objective, x, pk, cfg, result.trace, it_total, z_tot, s_tot)
        st = pk.unpack(x)
        gap, dJ = _cn_terms(problem, st, cfg.cn_samples, cfg.seed)
        if result.trace:
            result.trace[-1].cn_gap = gap
        result.cn_gap = gap
        if gap <= tol_cn or rnd == cfg.cn_rounds:
            break
        weight = cfg.cn_weight if weight == 0 else weight * cfg.cn_escalation
        cn_grad = dJ
        cn_ref = gap - float(np.sum(dJ * st.chi))
    result.state = pk.unpack(x)
    result.report, _ = _evaluate(problem, result.state, False)
    result.status = status
    result.converged = status == "converged" and result.cn_gap <= tol_cn
    result.multipliers = lam
    result.cn_weight = weight
    return result


def _clamped(problem: StaticProblem, chi: np.ndarray) -> np.ndarray:
    out = chi.copy()
    out[problem.dirichlet_dofs] = problem.chi_D[problem.dirichlet_dofs]
    return out


def _lbfgs(objective, x, pk: _Packer, cfg: OptimizerSettings, trace: list, it0: int, z_tot: float, s_tot: float):
    rep, f, g = objective(x)
    if g is None:
        raise DegenerateDeformation("inadmissible starting point")
    S, Y = [], []
    status = "max_iter"
    lam = (np.nan, np.nan)
    it = it0
    step = 0.0
    while True:
        pg, lz, ls = pk.precondition(g)
        lam = (lz, ls)
        gnorm = float(np.max(np.abs(pg)))
        o = pk.offsets
        trace.append(
            TraceEntry(
                it,
                f,
                gnorm,
                float(pk.a @ x[o[2] : o[3]] - z_tot),
                float(pk.a @ x[o[3] : o[4]] - s_tot),
                np.nan,
                rep.J_min,
                step,
            )
        )
        if gnorm <= cfg.tol_grad:
            status = "converged"
            break
        if it - it0 >= cfg.max_iter:
            break
        d = -_two_loop(g, S, Y, pk)
        if not g @ d < 0:
            S, Y = [], []
            d = -pg
        alpha = 1.0
        accepted = False
        while alpha >= cfg.min_step:
            xt = pk.restore(x + alpha * d, z_tot, s_tot)
            rep_t, ft, gt = objective(xt)
            if np.isfinite(ft) and gt is not None and ft <= f + cfg.armijo * alpha * (g @ d):
                accepted = True
                break
            alpha *= 0.5
        if not accepted:
            if S:
                S, Y = [], []
                continue
            # no descent possible: accept convergence only at round-off level
            if gnorm <= 1e3 * cfg.tol_grad:
                status = "stalled_at_roundoff"
                break
            raise LineSearchFailure(f"no admissible step above {cfg.min_step:g} (gradient {gnorm:.3g})")
        sv, yv = xt - x, gt - g
        if sv @ yv > 1e-12 * np.linalg.norm(sv) * np.linalg.norm(yv):
            S.append(sv)
            Y.append(yv)
            if len(S) > cfg.memory:
                S.pop(0)
                Y.pop(0)
        x, f, g, rep, step = xt, ft, gt, rep_t, alpha
        it += 1
    return x, it, status, lam


def _two_loop(g, S, Y, pk: _Packer) -> np.ndarray:
    q = g.copy()
    alphas = []
    for s, y in zip(reversed(S), reversed(Y)):
        rho = 1.0 / (y @ s)
        a = rho * (s @ q)
        alphas.append(a)
        q -= a * y
    r, _, _ = pk.precondition(q)
    if S:
        s, y = S[-1], Y[-1]
        hy, _, _ = pk.precondition(y)
        r *= (s @ y) / (y @ hy)
    for (s, y), a in zip(zip(S, Y), reversed(alphas)):
        rho = 1.0 / (y @ s)
        b = rho * (y @ r)
        r += s * (a - b)
    return r
