"""Material models, the free-energy split and temperature/entropy/enthalpy maps.

The bulk free energy is ``psi = psi_me(F, m, zeta) + psi_th(m, zeta, theta)``
with ``psi_me = phi(F, m, zeta) + xi(det F, m, zeta)``.  The volumetric part
is split as ``xi = xi0(J) + xi1(m, zeta)`` inside :class:`MaterialModel`, so
``xi`` has no mixed ``J``-``m`` or ``J``-``zeta`` derivatives by construction.

Array conventions: ``F`` has shape ``(..., d, d)``, ``m`` ``(..., d)``, and
``zeta``/``theta`` ``(...)``.  Every function broadcasts over leading axes.
"""

from __future__ import annotations

from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy.special import xlogy

from .errors import DegenerateDeformation, OutOfRange, ValidationError

__all__ = [
    "ThermalTerms",
    "ThermalState",
    "MaterialModel",
    "DefaultMaterial",
    "SampleSpec",
    "AssumptionCheck",
    "AssumptionReport",
    "determinant",
    "cofactor",
    "eval_bulk_energy",
    "eval_stress",
    "pull_back_tensor",
    "thermal_closure",
    "invert_enthalpy",
    "invert_entropy",
    "legendre_internal_energy",
    "check_assumptions",
    "dissipation_rate",
]

TOL_NEWTON = 1e-12
THETA_MAX = 1e6


def determinant(F: np.ndarray) -> np.ndarray:
    F = np.asarray(F, dtype=float)
    d = F.shape[-1]
    if d == 1:
        return F[..., 0, 0].copy()
    if d == 2:
        return F[..., 0, 0] * F[..., 1, 1] - F[..., 0, 1] * F[..., 1, 0]
    return np.linalg.det(F)


def cofactor(F: np.ndarray) -> np.ndarray:
    """Cofactor matrix ``Cof F = det(F) F^{-T}``, polynomial in ``F``."""
    F = np.asarray(F, dtype=float)
    d = F.shape[-1]
    if d == 1:
        return np.ones_like(F)
    if d == 2:
        out = np.empty_like(F)
        out[..., 0, 0] = F[..., 1, 1]
        out[..., 0, 1] = -F[..., 1, 0]
        out[..., 1, 0] = -F[..., 0, 1]
        out[..., 1, 1] = F[..., 0, 0]
        return out
    return determinant(F)[..., None, None] * np.linalg.inv(F).swapaxes(-1, -2)


# Levi-Civita symbol in 2-D: Cof(H)_{iJ} = eps_{ik} eps_{JL} H_{kL}
_EPS2 = np.array([[0.0, 1.0], [-1.0, 0.0]])


class ThermalTerms(NamedTuple):
    """``psi_th`` and the partial derivatives the solvers use."""

    psi: np.ndarray
    d_m: np.ndarray
    d_zeta: np.ndarray
    d_theta: np.ndarray
    d_theta_theta: np.ndarray
    d_theta_m: np.ndarray
    d_theta_zeta: np.ndarray


@dataclass(frozen=True)
class ThermalState:
    """Temperature, entropy density and thermal internal energy ``w = e_th``."""

    theta: np.ndarray
    s: np.ndarray
    w: np.ndarray
    c_v: np.ndarray


class MaterialModel(ABC):
    """Constitutive ingredients of the magneto-elastic diffusion model.

    Subclasses supply ``phi``, ``xi0``, ``xi1`` and ``psi_th`` together with
    their analytic derivatives.  Instances are immutable and safe to share
    between threads.
    """

    dim: int
    rho: float
    tau1: float
    tau2: float
    kappa1: float
    kappa2: float
    q_xi: float
    xi_eps: float

    # ---- mechanical part -------------------------------------------------
    @abstractmethod
    def phi_terms(self, F, m, zeta) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """Return ``(phi, d_F phi, d_m phi, d_zeta phi)``."""

    @abstractmethod
    def xi0_terms(self, J) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Return ``(xi0, xi0', xi0'')`` for ``J > 0``."""

    def xi1_terms(self, m, zeta) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Return ``(xi1, d_m xi1, d_zeta xi1)``; zero unless overridden."""
        zeta = np.asarray(zeta, dtype=float)
        return np.zeros_like(zeta), np.zeros_like(np.asarray(m, dtype=float)), np.zeros_like(zeta)

    @abstractmethod
    def stress_tangent(self, F, m, zeta) -> np.ndarray:
        """``d^2 psi_me / dF dF`` with shape ``(..., d, d, d, d)``."""

    @abstractmethod
    def local_hessian(self, F, m, zeta, theta) -> np.ndarray:
        """Hessian of ``psi`` in ``(m, zeta)`` at fixed ``F, theta``; ``(..., d+1, d+1)``."""

    # ---- thermal part ----------------------------------------------------
    @abstractmethod
    def thermal_terms(self, m, zeta, theta) -> ThermalTerms:
        """``psi_th`` and derivatives for ``theta >= 0``."""

    @abstractmethod
    def mobility_sp(self, m, zeta, theta) -> np.ndarray:
        """Spatial mobility tensor ``(..., d, d)``."""

    @abstractmethod
    def conductivity_sp(self, m, zeta, theta) -> np.ndarray:
        """Spatial heat conductivity tensor ``(..., d, d)``."""

    # ---- derived maps ----------------------------------------------------
    def xi(self, J, m, zeta) -> np.ndarray:
        J = np.asarray(J, dtype=float)
        pos = J > 0
        safe = np.where(pos, J, 1.0)
        val = self.xi0_terms(safe)[0] + self.xi1_terms(m, zeta)[0]
        return np.where(pos, val, np.inf)

    def psi_me(self, F, m, zeta) -> np.ndarray:
        return self.phi_terms(F, m, zeta)[0] + self.xi(determinant(F), m, zeta)

    def psi_me_terms(self, F, m, zeta):
        """``(psi_me, S, d_m psi_me, d_zeta psi_me)`` for ``det F > 0``."""
        J = determinant(F)
        if np.any(J <= 0):
            raise DegenerateDeformation("det F <= 0")
        p, pF, pm, pz = self.phi_terms(F, m, zeta)
        x0, dx0, _ = self.xi0_terms(J)
        x1, x1m, x1z = self.xi1_terms(m, zeta)
        S = pF + dx0[..., None, None] * cofactor(F)
        return p + x0 + x1, S, pm + x1m, pz + x1z

    def psi_th(self, m, zeta, theta) -> np.ndarray:
        return self.thermal_terms(m, zeta, theta).psi

    def entropy(self, m, zeta, theta) -> np.ndarray:
        return -self.thermal_terms(m, zeta, theta).d_theta

    def e_th(self, m, zeta, theta) -> np.ndarray:
        t = self.thermal_terms(m, zeta, theta)
        th = np.asarray(theta, dtype=float)
        return t.psi - np.where(th > 0, th * t.d_theta, 0.0)

    def c_v(self, m, zeta, theta) -> np.ndarray:
        t = self.thermal_terms(m, zeta, theta)
        return -np.asarray(theta, dtype=float) * t.d_theta_theta

    @property
    def ground_energy(self) -> float:
        """``psi`` at ``F = I, m = 0, zeta = zeta_ref, theta = 0``."""
        d = self.dim
        return float(
            eval_bulk_energy(self, np.eye(d), np.zeros(d), getattr(self, "zeta_ref", 0.0), 0.0)
        )

    def s_min(self, m, zeta) -> np.ndarray:
        """Entropy at zero temperature; ``-inf`` when ``psi_th`` has a log singularity."""
        return self.entropy(m, zeta, np.zeros_like(np.asarray(zeta, dtype=float)))

    # ---- enthalpy form used inside the time stepper ------------------------
    def enthalpy_terms(self, m, zeta, theta):
        """``(e_th, c_v, d_m e_th, d_zeta e_th)`` with a C^1 linear extension below 0.

        For ``theta < 0`` the enthalpy continues with slope ``c_v(0)`` so Newton
        iterations for the heat equation stay well defined; nonnegativity of the
        temperature is monitored rather than imposed.
        """
        theta = np.asarray(theta, dtype=float)
        tp = np.maximum(theta, 0.0)
        tm = self.thermal_terms_mz_derivs(m, zeta, tp)
        e = self.e_th(m, zeta, tp)
        cv = self.c_v(m, zeta, tp)
        cv0 = self.c_v(m, zeta, np.zeros_like(tp))
        neg = theta < 0
        e = np.where(neg, e + cv0 * theta, e)
        cv = np.where(neg, cv0, cv)
        return e, cv, tm[0], tm[1]

    def thermal_terms_mz_derivs(self, m, zeta, theta):
        """``(d_m e_th, d_zeta e_th)`` from ``e_th = psi_th - theta d_theta psi_th``."""
        t = self.thermal_terms(m, zeta, theta)
        th = np.asarray(theta, dtype=float)
        return t.d_m - th[..., None] * t.d_theta_m, t.d_zeta - th * t.d_theta_zeta


def _safe_log(theta):
    return np.log(np.where(theta > 0, theta, 1.0))


@dataclass(frozen=True)
class DefaultMaterial(MaterialModel):
    """Bundled model family.

    ``phi = (lame/4)|C-I|^2 + (mag_a/2)(|m|^4 + 2 mag_reg^2 |m|^2)
    + chem_alpha (zeta-zeta_ref)^2 + coupling_beta (zeta-zeta_ref) tr(C-I)``,
    ``xi0(J) = xi_eps/J^q + (J-1)^2 + q xi_eps (J-1)`` and
    ``psi_th = -c theta(ln theta - 1) - ln(1+theta) g(m, zeta)`` with the
    bounded coupling ``g = g_m |m|^2/(1+|m|^2) + g_z zeta^2/(1+zeta^2)``.

    The affine term in ``xi0`` puts its minimum at ``J = 1``, so the reference
    configuration is stress free.
    """

    dim: int = 2
    rho: float = 1.0
    tau1: float = 1.0
    tau2: float = 1.0
    kappa1: float = 1e-2
    kappa2: float = 1e-2
    lame: float = 1.0
    mag_a: float = 1.0
    mag_reg: float = 0.5
    chem_alpha: float = 1.0
    zeta_ref: float = 0.0
    coupling_beta: float = 0.1
    xi_eps: float = 0.05
    q_xi: float = 4.0
    heat_c: float = 1.0
    g_m: float = 0.5
    g_z: float = 0.5
    mobility: float = 1.0
    conductivity: float = 1.0
    gamma: float = 0.6
    p1: float = 4.0
    p2: float = 4.0
    p3: float = 2.0
    p4: float = 4.0
    q_growth: float = 4.0
    delta: float = 1.5
    name: str = field(default="default", repr=False)

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise ValidationError("dim must be 1 or 2")
        for key in ("rho", "tau1", "tau2", "kappa1", "kappa2", "heat_c", "mobility", "conductivity", "xi_eps", "lame"):
            if not getattr(self, key) > 0:
                raise ValidationError(f"material parameter {key} must be positive")
        if abs(self.g_m) + abs(self.g_z) >= 4 * self.heat_c:
            raise ValidationError("|g_m| + |g_z| must stay below 4 c for c_v > 0")

    # ---- mechanical ------------------------------------------------------
    def phi_terms(self, F, m, zeta):
        F = np.asarray(F, dtype=float)
        m = np.asarray(m, dtype=float)
        dz = np.asarray(zeta, dtype=float) - self.zeta_ref
        d = F.shape[-1]
        C = np.swapaxes(F, -1, -2) @ F
        E = C - np.eye(d)
        trE = np.trace(E, axis1=-2, axis2=-1)
        m2 = np.sum(m * m, axis=-1)
        r2 = self.mag_reg**2
        val = (
            0.25 * self.lame * np.sum(E * E, axis=(-2, -1))
            + 0.5 * self.mag_a * (m2 * m2 + 2 * r2 * m2)
            + self.chem_alpha * dz**2
            + self.coupling_beta * dz * trE
        )
        dF = self.lame * (F @ E) + 2 * self.coupling_beta * dz[..., None, None] * F
        dm = 2 * self.mag_a * (m2 + r2)[..., None] * m
        dzeta = 2 * self.chem_alpha * dz + self.coupling_beta * trE
        return val, dF, dm, dzeta

    def xi0_terms(self, J):
        J = np.asarray(J, dtype=float)
        e, q = self.xi_eps, self.q_xi
        v = e / J**q + (J - 1) ** 2 + q * e * (J - 1)
        d1 = -q * e / J ** (q + 1) + 2 * (J - 1) + q * e
        d2 = q * (q + 1) * e / J ** (q + 2) + 2.0
        return v, d1, d2

    def stress_tangent(self, F, m, zeta):
        F = np.asarray(F, dtype=float)
        d = F.shape[-1]
        dz = np.asarray(zeta, dtype=float) - self.zeta_ref
        I = np.eye(d)
        E = np.swapaxes(F, -1, -2) @ F - I
        FFt = F @ np.swapaxes(F, -1, -2)
        mu = self.lame
        T = mu * np.einsum("ik,...LJ->...iJkL", I, E)
        T = T + mu * np.einsum("...iL,...kJ->...iJkL", F, F)
        T = T + mu * np.einsum("...ik,JL->...iJkL", FFt, I)
        T = T + 2 * self.coupling_beta * dz[..., None, None, None, None] * np.einsum("ik,JL->iJkL", I, I)
        J = determinant(F)
        _, d1, d2 = self.xi0_terms(J)
        cof = cofactor(F)
        T = T + d2[..., None, None, None, None] * np.einsum("...iJ,...kL->...iJkL", cof, cof)
        if d == 2:
            T = T + d1[..., None, None, None, None] * np.einsum("ik,JL->iJkL", _EPS2, _EPS2)
        return T

    def _g_terms(self, m, zeta):
        m = np.asarray(m, dtype=float)
        zeta = np.asarray(zeta, dtype=float)
        u = np.sum(m * m, axis=-1)
        v = zeta**2
        s = lambda x: x / (1 + x)  # noqa: E731
        s1 = lambda x: 1 / (1 + x) ** 2  # noqa: E731
        s2 = lambda x: -2 / (1 + x) ** 3  # noqa: E731
        g = self.g_m * s(u) + self.g_z * s(v)
        gm = 2 * self.g_m * s1(u)[..., None] * m
        gz = 2 * self.g_z * s1(v) * zeta
        d = m.shape[-1]
        gmm = self.g_m * (2 * s1(u)[..., None, None] * np.eye(d) + 4 * s2(u)[..., None, None] * m[..., :, None] * m[..., None, :])
        gzz = self.g_z * (2 * s1(v) + 4 * v * s2(v))
        return g, gm, gz, gmm, gzz

    def local_hessian(self, F, m, zeta, theta):
        m = np.asarray(m, dtype=float)
        d = m.shape[-1]
        shape = m.shape[:-1]
        H = np.zeros((*shape, d + 1, d + 1))
        m2 = np.sum(m * m, axis=-1)
        a, r2 = self.mag_a, self.mag_reg**2
        H[..., :d, :d] = 2 * a * ((m2 + r2)[..., None, None] * np.eye(d) + 2 * m[..., :, None] * m[..., None, :])
        H[..., d, d] = 2 * self.chem_alpha
        _, _, _, gmm, gzz = self._g_terms(m, zeta)
        L = np.log1p(np.maximum(np.asarray(theta, dtype=float), 0.0))
        H[..., :d, :d] -= L[..., None, None] * gmm
        H[..., d, d] -= L * gzz
        return H

    # ---- thermal ---------------------------------------------------------
    def thermal_terms(self, m, zeta, theta):
        theta = np.asarray(theta, dtype=float)
        c = self.heat_c
        g, gm, gz, _, _ = self._g_terms(m, zeta)
        L = np.log1p(theta)
        psi = -c * (xlogy(theta, theta) - theta) - L * g
        with np.errstate(divide="ignore"):
            logt = np.where(theta > 0, _safe_log(theta), -np.inf)
        d_th = -c * logt - g / (1 + theta)
        with np.errstate(divide="ignore"):
            d_thth = np.where(theta > 0, -c / np.where(theta > 0, theta, 1.0), -np.inf) + g / (1 + theta) ** 2
        return ThermalTerms(
            psi=psi,
            d_m=-L[..., None] * gm,
            d_zeta=-L * gz,
            d_theta=d_th,
            d_theta_theta=d_thth,
            d_theta_m=-gm / (1 + theta)[..., None],
            d_theta_zeta=-gz / (1 + theta),
        )

    def e_th(self, m, zeta, theta):
        theta = np.asarray(theta, dtype=float)
        g = self._g_terms(m, zeta)[0]
        return self.heat_c * theta + g * (theta / (1 + theta) - np.log1p(theta))

    def c_v(self, m, zeta, theta):
        theta = np.asarray(theta, dtype=float)
        g = self._g_terms(m, zeta)[0]
        return self.heat_c - theta * g / (1 + theta) ** 2

    def mobility_sp(self, m, zeta, theta):
        shape = np.shape(zeta)
        return self.mobility * np.broadcast_to(np.eye(self.dim), (*shape, self.dim, self.dim)).copy()

    def conductivity_sp(self, m, zeta, theta):
        shape = np.shape(zeta)
        return self.conductivity * np.broadcast_to(np.eye(self.dim), (*shape, self.dim, self.dim)).copy()


# ---------------------------------------------------------------------------
# operations
# ---------------------------------------------------------------------------


def eval_bulk_energy(model: MaterialModel, F, m, zeta, theta) -> np.ndarray:
    """Bulk free energy ``phi + xi(det F) + psi_th``; ``+inf`` where ``det F <= 0``.

    Raises
    ------
    ValidationError
        If a temperature is negative.
    """
    theta = np.asarray(theta, dtype=float)
    if np.any(theta < 0):
        raise ValidationError("temperature must be nonnegative")
    F = np.asarray(F, dtype=float)
    J = determinant(F)
    phi = model.phi_terms(F, m, zeta)[0]
    val = phi + model.xi(J, m, zeta) + model.psi_th(m, zeta, theta)
    return np.where(J > 0, val, np.inf)


def eval_stress(model: MaterialModel, F, m, zeta) -> np.ndarray:
    """First Piola stress ``d_F phi + xi0'(det F) Cof F``.

    Raises
    ------
    DegenerateDeformation
        If ``det F <= 0`` anywhere.
    """
    return model.psi_me_terms(F, m, zeta)[1]


def pull_back_tensor(F, T_sp) -> np.ndarray:
    """Referential transport tensor ``Cof(F)^T T_sp Cof(F) / det F``.

    Raises
    ------
    DegenerateDeformation
        If ``det F <= 0`` anywhere.
    """
    F = np.asarray(F, dtype=float)
    J = determinant(F)
    if np.any(J <= 0):
        raise DegenerateDeformation("det F <= 0 in pull-back")
    cof = cofactor(F)
    out = np.swapaxes(cof, -1, -2) @ np.asarray(T_sp, dtype=float) @ cof / J[..., None, None]
    return 0.5 * (out + np.swapaxes(out, -1, -2))


def thermal_closure(model: MaterialModel, m, zeta, theta) -> ThermalState:
    """Entropy ``-d_theta psi_th``, enthalpy ``psi_th - theta d_theta psi_th`` and ``c_v``."""
    theta = np.asarray(theta, dtype=float)
    if np.any(theta < 0):
        raise ValidationError("temperature must be nonnegative")
    t = model.thermal_terms(m, zeta, theta)
    w = model.e_th(m, zeta, theta)
    return ThermalState(theta=theta, s=-t.d_theta, w=w, c_v=model.c_v(m, zeta, theta))


def _monotone_solve(f, df, lo, hi, target, tol, max_iter=200):
    """Vectorized safeguarded Newton for increasing ``f`` on ``[lo, hi]``."""
    x = np.clip(np.where(np.isfinite(target), 1.0, lo), lo, hi)
    lo = np.array(lo, dtype=float, copy=True)
    hi = np.array(hi, dtype=float, copy=True)
    for _ in range(max_iter):
        r = f(x) - target
        scale = tol * (1 + np.abs(target))
        done = np.abs(r) <= scale
        if np.all(done):
            return x
        lo = np.where(r < 0, x, lo)
        hi = np.where(r > 0, x, hi)
        with np.errstate(divide="ignore", invalid="ignore"):
            xn = x - r / df(x)
        bad = ~np.isfinite(xn) | (xn <= lo) | (xn >= hi)
        xn = np.where(bad, 0.5 * (lo + hi), xn)
        x = np.where(done, x, xn)
        if np.all(np.abs(hi - lo) <= 4 * np.finfo(float).eps * np.maximum(1.0, np.abs(x))):
            return x
    return x


def invert_enthalpy(model: MaterialModel, m, zeta, w, tol: float = TOL_NEWTON, theta_max: float = THETA_MAX) -> np.ndarray:
    """Temperature with ``e_th(m, zeta, theta) = w``.

    Raises
    ------
    OutOfRange
        If ``w`` is below ``e_th(m, zeta, 0)`` or above ``e_th(m, zeta, theta_max)``.
    """
    w = np.asarray(w, dtype=float)
    zeta_b = np.broadcast_to(np.asarray(zeta, dtype=float), w.shape)
    m_b = np.broadcast_to(np.asarray(m, dtype=float), (*w.shape, np.shape(m)[-1]))
    e0 = model.e_th(m_b, zeta_b, np.zeros_like(w))
    emax = model.e_th(m_b, zeta_b, np.full_like(w, theta_max))
    if np.any(w < e0 - tol * (1 + np.abs(w))):
        raise OutOfRange("enthalpy below its zero-temperature value")
    if np.any(w > emax):
        raise OutOfRange("enthalpy above the bracket limit")
    at0 = w <= e0
    theta = _monotone_solve(
        lambda th: model.e_th(m_b, zeta_b, th),
        lambda th: model.c_v(m_b, zeta_b, th),
        np.zeros_like(w),
        np.full_like(w, theta_max),
        w,
        tol,
    )
    return np.where(at0, 0.0, theta)


def invert_entropy(model: MaterialModel, m, zeta, s, tol: float = TOL_NEWTON, theta_max: float = THETA_MAX) -> np.ndarray:
    """Temperature with ``-d_theta psi_th(m, zeta, theta) = s``.

    Raises
    ------
    OutOfRange
        If ``s < s_min`` or ``s`` exceeds the entropy at ``theta_max``.
    """
    s = np.asarray(s, dtype=float)
    zeta_b = np.broadcast_to(np.asarray(zeta, dtype=float), s.shape)
    m_b = np.broadcast_to(np.asarray(m, dtype=float), (*s.shape, np.shape(m)[-1]))
    smin = model.entropy(m_b, zeta_b, np.zeros_like(s))
    smax = model.entropy(m_b, zeta_b, np.full_like(s, theta_max))
    if np.any(s < smin - tol * (1 + np.abs(s))):
        raise OutOfRange("entropy below s_min")
    if np.any(s > smax):
        raise OutOfRange("entropy above the bracket limit")
    at0 = s <= smin

    def ds(th):
        t = model.thermal_terms(m_b, zeta_b, th)
        return -t.d_theta_theta

    # solve in log-temperature: the bundled entropy is c ln(theta) + bounded
    def f(u):
        return model.entropy(m_b, zeta_b, np.exp(u))

    def df(u):
        th = np.exp(u)
        return ds(th) * th

    u = _monotone_solve(f, df, np.full_like(s, -745.0), np.full_like(s, np.log(theta_max)), np.where(at0, 0.0, s), tol)
    return np.where(at0, 0.0, np.exp(u))


def legendre_internal_energy(model: MaterialModel, F, m, zeta, s) -> np.ndarray:
    """Internal energy as a function of entropy, ``sup_theta psi + theta s``.

    Below ``s_min`` the supremum over the tangent-line extension of ``psi`` is
    infinite.  Otherwise the maximizer solves ``-d_theta psi = s`` and the
    value equals ``psi_me + e_th`` at that temperature.
    """
    s = np.asarray(s, dtype=float)
    zeta = np.asarray(zeta, dtype=float)
    m = np.asarray(m, dtype=float)
    smin = model.s_min(np.broadcast_to(m, (*s.shape, m.shape[-1])), np.broadcast_to(zeta, s.shape))
    ok = s >= smin
    s_ok = np.where(ok, s, np.where(np.isfinite(smin), smin, 0.0))
    theta = invert_entropy(model, m, zeta, s_ok)
    val = model.psi_me(F, m, zeta) + model.e_th(m, zeta, theta)
    return np.where(ok, val, np.inf)


def dissipation_rate(tau1, tau2, m_dot, zeta_dot, M, grad_mu, K, grad_theta) -> np.ndarray:
    """Pointwise ``tau1|m'|^2 + tau2 zeta'^2 + M grad mu . grad mu + K grad theta . grad theta``."""
    return (
        tau1 * np.sum(m_dot**2, axis=-1)
        + tau2 * zeta_dot**2
        + np.einsum("...i,...ij,...j->...", grad_mu, M, grad_mu)
        + np.einsum("...i,...ij,...j->...", grad_theta, K, grad_theta)
    )


# ---------------------------------------------------------------------------
# assumption checker
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SampleSpec:
    """Sampling grids and bounds for :func:`check_assumptions`."""

    thetas: tuple[float, ...] = tuple(np.logspace(-3, 3, 25))
    m_norms: tuple[float, ...] = (0.0, 0.25, 0.5, 1.0, 2.0)
    m_angles: int = 4
    zetas: tuple[float, ...] = (-2.0, -1.0, 0.0, 0.5, 1.0, 2.0)
    jacobians: tuple[float, ...] = tuple(np.logspace(-2, 1, 25))
    bound: float = 100.0
    cv_floor: float = 1e-3
    decay_eps: float = 0.05
    fd_step: float = 1e-6


@dataclass(frozen=True)
class AssumptionCheck:
    name: str
    passed: bool
    worst_value: float
    worst_point: dict


@dataclass(frozen=True)
class AssumptionReport:
    checks: tuple[AssumptionCheck, ...]

    @property
    def all_passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def __getitem__(self, name: str) -> AssumptionCheck:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def failed(self) -> list[str]:
        return [c.name for c in self.checks if not c.passed]

    def to_dict(self) -> dict:
        return {
            "all_passed": self.all_passed,
            "checks": [
                {"name": c.name, "passed": c.passed, "worst_value": c.worst_value, "worst_point": c.worst_point}
                for c in self.checks
            ],
        }


def _grid(model: MaterialModel, spec: SampleSpec):
    d = model.dim
    dirs = [np.array([np.cos(a), np.sin(a)])[:d] for a in np.linspace(0, np.pi, spec.m_angles, endpoint=False)]
    if d == 1:
        dirs = [np.array([1.0]), np.array([-1.0])]
    ms = np.array([r * u for r in spec.m_norms for u in dirs])
    M, Z, T = np.meshgrid(np.arange(len(ms)), np.array(spec.zetas), np.array(spec.thetas), indexing="ij")
    return ms[M.ravel()], Z.ravel(), T.ravel()


def _check(name, values, ok, m, z, t) -> AssumptionCheck:
    values = np.asarray(values, dtype=float)
    bad = ~ok | ~np.isfinite(values)
    k = int(np.argmax(bad)) if np.any(bad) else int(np.argmax(np.abs(values)))
    pt = {"m": np.asarray(m[k]).tolist(), "zeta": float(z[k]), "theta": float(t[k])}
    return AssumptionCheck(name, bool(not np.any(bad)), float(values[k]), pt)


def check_assumptions(model: MaterialModel, sample_spec: SampleSpec | None = None) -> AssumptionReport:
    """Evaluate the structural inequalities of the model on sampled grids.

    Failures are reported as entries, never raised.  Derivatives of ``c_v`` in
    ``m`` and ``zeta`` are taken by central differences.
    """
    spec = sample_spec or SampleSpec()
    m, z, t = _grid(model, spec)
    C = spec.bound
    checks = []
    tt = model.thermal_terms(m, z, t)
    conc = -tt.d_theta_theta
    checks.append(_check("entropy_concavity", conc, conc > 0, m, z, t))
    cv = model.c_v(m, z, t)
    checks.append(_check("heat_capacity_bounds", cv, (cv >= spec.cv_floor) & (cv <= C), m, z, t))
    gm = np.linalg.norm(tt.d_m, axis=-1)
    checks.append(_check("thermal_magnetic_slope", gm, gm <= C, m, z, t))
    gz = np.abs(tt.d_zeta)
    checks.append(_check("thermal_chemical_slope", gz, gz <= C, m, z, t))
    cm = np.linalg.norm(tt.d_theta_m, axis=-1) * (1 + t)
    checks.append(_check("thermal_cross_decay_m", cm, cm <= C, m, z, t))
    cz = np.abs(tt.d_theta_zeta) * (1 + t)
    checks.append(_check("thermal_cross_decay_zeta", cz, cz <= C, m, z, t))
    h = spec.fd_step
    d = model.dim
    dcv_m = np.stack(
        [(model.c_v(m + h * e, z, t) - model.c_v(m - h * e, z, t)) / (2 * h) for e in np.eye(d)], axis=-1
    )
    dcv_z = (model.c_v(m, z + h, t) - model.c_v(m, z - h, t)) / (2 * h)
    w = (1 + t) ** (1 + spec.decay_eps)
    vm = np.linalg.norm(dcv_m, axis=-1) * w
    vz = np.abs(dcv_z) * w
    checks.append(_check("heat_capacity_decay_m", vm, vm <= C, m, z, t))
    checks.append(_check("heat_capacity_decay_zeta", vz, vz <= C, m, z, t))
    for label, fn in (("mobility_spd", model.mobility_sp), ("conductivity_spd", model.conductivity_sp)):
        T = fn(m, z, t)
        sym = np.max(np.abs(T - np.swapaxes(T, -1, -2)), axis=(-2, -1))
        lam = np.linalg.eigvalsh(0.5 * (T + np.swapaxes(T, -1, -2)))[..., 0]
        checks.append(_check(label, lam, (lam > 0) & (sym <= 1e-12 * (1 + np.abs(lam))), m, z, t))
    # volumetric blow-up and infinite energy for J <= 0
    Js = np.asarray(spec.jacobians)
    zero_m = np.zeros((Js.size, d))
    zero_z = np.zeros(Js.size)
    xv = model.xi(Js, zero_m, zero_z)
    ratio = xv * Js**model.q_xi
    ok = ratio >= model.xi_eps * (1 - 1e-12)
    neg = model.xi(np.array([0.0, -0.5]), np.zeros((2, d)), np.zeros(2))
    ok_all = ok & np.all(np.isinf(neg))
    checks.append(_check("volumetric_blowup", ratio, ok_all, zero_m, zero_z, Js))
    x2 = model.xi0_terms(Js)[2]
    checks.append(_check("volumetric_convexity", x2, x2 >= 0, zero_m, zero_z, Js))
    return AssumptionReport(tuple(checks))
