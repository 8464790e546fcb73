"""Nonlocal second-gradient energy, its derivative and determinant bounds.

The energy of a tensor field ``G`` on the box ``Omega`` is

    H(G) = 1/4 int int k(|x - y|) |G(x) - G(y)|^2 dx dy,

with the isotropic kernel ``k(r) = strength * r^-(d+2 gamma) * ramp(r/cutoff)``.
Substituting ``y = x + z`` and integrating ``z`` over a half space gives

    H(G) = 1/2 int_{half space} k(|z|) I(z) dz,
    I(z) = int_{Omega cap (Omega - z)} |G(x + z) - G(x)|^2 dx.

``z`` is written in polar form ``r * omega``.  For smooth ``G`` the inner
integral behaves like ``r^2``, so the radial integrand near the origin is
``r^(1 - 2 gamma)`` times a smooth function and is integrated by a
Gauss-Jacobi rule with exactly that weight.  Away from the origin and beyond
the flat part of the cutoff a Gauss-Legendre rule is used.  The inner box
integral is split at the cell breakpoints of both ``x`` and ``x + z`` so that
it is exact for piecewise polynomial fields.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable

import numpy as np
from scipy.special import roots_jacobi

from .constitutive import determinant
from .discretization import Basis, DiscreteField, Mesh, evaluate
from .errors import InvalidExponents, QuadratureDivergence, ValidationError

__all__ = [
    "KernelSpec",
    "PairRule",
    "build_pair_rule",
    "gagliardo_energy",
    "hyperstress_force",
    "hyperstress_matrix",
    "hessian_form",
    "healey_kromer_eta",
    "holder_constant",
    "min_determinant_monitor",
    "DeterminantBound",
    "determinant_bound",
]

_BLOCK = 16  # pair nodes per reduction block


def _ramp(t: np.ndarray) -> np.ndarray:
    """C^1 cutoff: 1 on [0, 1/2], 0 on [1, inf), cubic smoothstep between."""
    t = np.asarray(t, dtype=float)
    s = np.clip(2 * t - 1, 0.0, 1.0)
    return 1 - s * s * (3 - 2 * s)


@dataclass(frozen=True)
class KernelSpec:
    """Isotropic singular kernel ``k(r) I_6`` for the second-gradient energy.

    Parameters
    ----------
    gamma : float
        Singularity exponent, ``d/2 - 1 < gamma < 1``.
    strength : float
        Prefactor ``eps_K > 0``.
    cutoff_radius : float
        Radius beyond which the kernel vanishes; ``inf`` for no cutoff.
    dim : int
        Spatial dimension.
    """

    gamma: float = 0.6
    strength: float = 1e-3
    cutoff_radius: float = 0.5
    dim: int = 2

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise ValidationError("kernel dimension must be 1 or 2")
        if not self.dim / 2 - 1 < self.gamma < 1:
            raise ValidationError(f"gamma must lie in ({self.dim / 2 - 1}, 1)")
        if not self.strength > 0 or not self.cutoff_radius > 0:
            raise ValidationError("kernel strength and cutoff must be positive")

    def __call__(self, r) -> np.ndarray:
        r = np.asarray(r, dtype=float)
        with np.errstate(divide="ignore"):
            val = self.strength * r ** (-(self.dim + 2 * self.gamma)) * _ramp(r / self.cutoff_radius)
        return np.where(r > 0, val, np.inf)

    @property
    def flat_radius(self) -> float:
        """Radius up to which the kernel equals the bare power law."""
        return 0.5 * self.cutoff_radius


@dataclass(frozen=True)
class PairRule:
    """Quadrature nodes ``z_k = r_k omega_k`` with weights for ``H = sum W_k I(z_k)``."""

    shifts: np.ndarray
    weights: np.ndarray
    n_inner: int


def _angle_breaks(extents, R_cut, R_flat) -> np.ndarray:
    L1, L2 = extents
    br = {0.0, np.pi / 2}
    if np.hypot(L1, L2) < R_cut:
        br.add(float(np.arctan2(L2, L1)))
    for R in (R_cut, R_flat):
        if np.isfinite(R):
            if R > L1:
                br.add(float(np.arccos(L1 / R)))
            if R > L2:
                br.add(float(np.arcsin(L2 / R)))
    q1 = sorted(b for b in br if 0 <= b <= np.pi / 2)
    q2 = sorted(np.pi - b for b in q1)
    return np.unique(np.round(np.array(q1 + q2), 15))


def _gauss(a, b, n):
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (a + b) + 0.5 * (b - a) * x, 0.5 * (b - a) * w


@lru_cache(maxsize=64)
def build_pair_rule(kernel: KernelSpec, mesh: Mesh, n_radial: int = 8, n_angular: int = 8, n_inner: int = 4) -> PairRule:
    """Half-space polar quadrature for the relative coordinate ``z``.

    Raises
    ------
    QuadratureDivergence
        If the radial weight ``r^(1-2 gamma)`` is not integrable.
    """
    d = mesh.dim
    if kernel.dim != d:
        raise ValidationError("kernel and mesh dimensions differ")
    beta = 1 - 2 * kernel.gamma
    if beta <= -1:
        raise QuadratureDivergence("radial weight r^(1-2 gamma) is not integrable")
    L = mesh.extents
    Rc, Rf = kernel.cutoff_radius, kernel.flat_radius
    if d == 1:
        dirs, dir_w = np.array([[1.0]]), np.array([1.0])
    else:
        br = _angle_breaks(L, Rc, Rf)
        th, tw = [], []
        for a, b in zip(br[:-1], br[1:]):
            if b - a > 1e-14:
                x, w = _gauss(a, b, n_angular)
                th.append(x)
                tw.append(w)
        th, tw = np.concatenate(th), np.concatenate(tw)
        dirs, dir_w = np.stack([np.cos(th), np.sin(th)], axis=1), tw
    xj, wj = roots_jacobi(n_radial, 0.0, beta)
    shifts, weights = [], []
    for om, aw in zip(dirs, dir_w):
        with np.errstate(divide="ignore"):
            r_box = np.min(np.where(np.abs(om) > 1e-15, L / np.abs(om), np.inf))
        r_max = min(Rc, r_box)
        r1 = min(r_max, Rf)
        # singular segment [0, r1]: weight r^beta absorbed by Gauss-Jacobi
        r = 0.5 * r1 * (1 + xj)
        w = (0.5 * r1) ** (beta + 1) * wj * kernel.strength * _ramp(r / Rc) / r**2
        shifts.append(r[:, None] * om[None, :])
        weights.append(0.5 * aw * w)
        if r_max > r1 * (1 + 1e-14):
            r, wl = _gauss(r1, r_max, n_radial)
            w = wl * kernel.strength * r ** (-1 - 2 * kernel.gamma) * _ramp(r / Rc)
            shifts.append(r[:, None] * om[None, :])
            weights.append(0.5 * aw * w)
    return PairRule(np.concatenate(shifts), np.concatenate(weights), int(n_inner))


def _axis_nodes(breaks: np.ndarray, shift: float, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Gauss nodes on ``{x in box : x + shift in box}`` split at both break sets."""
    a0, a1 = breaks[0], breaks[-1]
    lo, hi = max(a0, a0 - shift), min(a1, a1 - shift)
    if hi <= lo:
        return np.zeros(0), np.zeros(0)
    pts = np.concatenate([breaks, breaks - shift, [lo, hi]])
    pts = np.unique(pts[(pts >= lo) & (pts <= hi)])
    keep = np.concatenate([[True], np.diff(pts) > 1e-13 * (a1 - a0)])
    pts = pts[keep]
    pts[-1] = hi
    x, w = np.polynomial.legendre.leggauss(n)
    a, b = pts[:-1, None], pts[1:, None]
    return (0.5 * (a + b) + 0.5 * (b - a) * x).ravel(), (0.5 * (b - a) * w).ravel()


def _lagrange_rows(basis: Basis, axis: int, x: np.ndarray) -> np.ndarray:
    """Rows interpolating per-cell Gauss samples along one axis at points ``x``."""
    mesh, q = basis.mesh, basis.quad_order
    br = mesh.breakpoints(axis)
    nc = mesh.cells[axis]
    h = mesh.h[axis]
    cell = np.clip(((x - br[0]) / h).astype(int), 0, nc - 1)
    t = 2 * (x - br[cell]) / h - 1
    nodes = np.polynomial.legendre.leggauss(q)[0]
    out = np.zeros((x.size, nc * q))
    for k in range(q):
        lk = np.ones_like(t)
        for j in range(q):
            if j != k:
                lk *= (t - nodes[j]) / (nodes[k] - nodes[j])
        out[np.arange(x.size), cell * q + k] = lk
    return out


class _SampledField:
    """Piecewise polynomial interpolant of per-cell Gauss samples."""

    def __init__(self, basis: Basis, samples: np.ndarray):
        self.basis = basis
        nq_axis = [c * basis.quad_order for c in basis.mesh.cells]
        s = np.asarray(samples, dtype=float)
        if s.shape[0] != int(np.prod(nq_axis)):
            raise ValidationError("sample array does not match the quadrature layout")
        self.comp_shape = s.shape[1:]
        self.grid = s.reshape((*nq_axis, -1))

    def tensor_values(self, axis_points: list[np.ndarray]) -> np.ndarray:
        rows = [_lagrange_rows(self.basis, a, x) for a, x in enumerate(axis_points)]
        if len(rows) == 1:
            return rows[0] @ self.grid
        return np.einsum("ai,bj,ijc->abc", rows[0], rows[1], self.grid, optimize=True).reshape(-1, self.grid.shape[-1])


def _tensor_points(axes: list[np.ndarray]) -> np.ndarray:
    if len(axes) == 1:
        return axes[0][:, None]
    g = np.meshgrid(*axes, indexing="ij")
    return np.stack([x.ravel() for x in g], axis=1)


def _inner_integral(field, mesh: Mesh, z: np.ndarray, n_inner: int, swap: bool) -> float:
    nodes = [_axis_nodes(mesh.breakpoints(a), z[a], n_inner) for a in range(mesh.dim)]
    if any(x.size == 0 for x, _ in nodes):
        return 0.0
    xs = [x for x, _ in nodes]
    ws = nodes[0][1] if mesh.dim == 1 else np.outer(nodes[0][1], nodes[1][1]).ravel()
    if isinstance(field, _SampledField):
        g0 = field.tensor_values(xs)
        g1 = field.tensor_values([x + z[a] for a, x in enumerate(xs)])
    else:
        pts = _tensor_points(xs)
        g0 = np.asarray(field(pts), dtype=float).reshape(pts.shape[0], -1)
        g1 = np.asarray(field(pts + z[None, :]), dtype=float).reshape(pts.shape[0], -1)
    diff = g0 - g1 if swap else g1 - g0
    return float(ws @ np.sum(diff * diff, axis=1))


def _tree_sum(values: list[float]) -> float:
    vals = list(values)
    if not vals:
        return 0.0
    while len(vals) > 1:
        nxt = [vals[i] + vals[i + 1] for i in range(0, len(vals) - 1, 2)]
        if len(vals) % 2:
            nxt.append(vals[-1])
        vals = nxt
    return vals[0]


def _resolve_layout(mesh) -> tuple[Mesh, Basis]:
    if isinstance(mesh, Basis):
        return mesh.mesh, mesh
    return mesh, Basis(mesh, 3)


def gagliardo_energy(
    kernel: KernelSpec,
    G_field,
    mesh,
    *,
    n_radial: int = 8,
    n_angular: int = 8,
    n_inner: int | None = None,
    swap: bool = False,
    threads: int = 1,
    check: float | None = None,
) -> float:
    """Nonlocal quadratic energy of a tensor field.

    Parameters
    ----------
    kernel : KernelSpec
    G_field : callable or ndarray
        Either a function mapping ``(n, d)`` points to ``(n, ...)`` values, or
        samples at the quadrature points of ``mesh`` (a :class:`Basis`).
    mesh : Mesh or Basis
        Domain; a Basis also fixes the sample layout.
    n_radial, n_angular, n_inner : int
        Orders of the radial, angular and inner Gauss rules.
    swap : bool
        Evaluate differences as ``G(x) - G(x + z)``; the result is
        bit-identical to the default orientation.
    threads : int
        Worker threads; blocks and reduction order do not depend on it.
    check : float, optional
        If given, also evaluate with two fewer radial and angular nodes and
        raise when the relative change exceeds this tolerance.

    Raises
    ------
    QuadratureDivergence
        If the kernel is not integrable or the convergence check fails.
    """
    m, basis = _resolve_layout(mesh)
    n_inner = n_inner or basis.quad_order
    if callable(G_field):
        field = G_field
    else:
        samples = np.asarray(G_field, dtype=float)
        # the energy ignores constants; subtracting one keeps constants exactly zero
        field = _SampledField(basis, samples - samples[:1])
    rule = build_pair_rule(kernel, m, n_radial, n_angular, n_inner)
    val = _reduce(field, m, rule, swap, threads)
    if not np.isfinite(val):
        raise QuadratureDivergence("nonfinite pair quadrature")
    if check is not None:
        coarse = build_pair_rule(kernel, m, max(2, n_radial - 2), max(2, n_angular - 2), n_inner)
        val_c = _reduce(field, m, coarse, swap, threads)
        if abs(val - val_c) > check * max(abs(val), 1e-300):
            raise QuadratureDivergence(f"pair quadrature not converged: {val} vs {val_c}")
    return val


def _reduce(field, mesh: Mesh, rule: PairRule, swap: bool, threads: int) -> float:
    n = rule.weights.size
    blocks = [range(s, min(s + _BLOCK, n)) for s in range(0, n, _BLOCK)]

    def block_sum(idx):
        return _tree_sum([rule.weights[k] * _inner_integral(field, mesh, rule.shifts[k], rule.n_inner, swap) for k in idx])

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            parts = list(ex.map(block_sum, blocks))
    else:
        parts = [block_sum(b) for b in blocks]
    return _tree_sum(parts)


def _axis_grams(basis: Basis, axis: int, shift: float, n_inner: int):
    x, w = _axis_nodes(basis.mesh.breakpoints(axis), shift, n_inner)
    P0 = _lagrange_rows(basis, axis, x)
    P1 = _lagrange_rows(basis, axis, x + shift)
    return (P1.T * w) @ P1, (P1.T * w) @ P0, (P0.T * w) @ P0


@lru_cache(maxsize=16)
def _sample_matrix(kernel: KernelSpec, basis_key, n_radial: int, n_angular: int, n_inner: int) -> np.ndarray:
    basis = _BASIS_REGISTRY[basis_key]
    mesh = basis.mesh
    rule = build_pair_rule(kernel, mesh, n_radial, n_angular, n_inner)
    n_axis = [c * basis.quad_order for c in mesh.cells]
    N = int(np.prod(n_axis))
    # sum_k W_k kron(X_k, Y_k) as one contraction over stacked axis Grams
    xs, ys = [], []
    for z, W in zip(rule.shifts, rule.weights):
        grams = [_axis_grams(basis, a, z[a], n_inner) for a in range(mesh.dim)]
        if mesh.dim == 1:
            g11, g10, g00 = grams[0]
            xs.append(W * (g11 - g10 - g10.T + g00))
        else:
            (x11, x10, x00), (y11, y10, y00) = grams
            xs += [W * x11, -W * x10, -W * x10.T, W * x00]
            ys += [y11, y10, y10.T, y00]
    if mesh.dim == 1:
        A = np.sum(xs, axis=0)
    else:
        X, Y = np.array(xs), np.array(ys)
        n0, n1 = n_axis
        A = np.einsum("kab,kcd->acbd", X, Y, optimize=True).reshape(N, N)
    # Hessian of H = sum_k W_k I(z_k) in the samples
    return A + A.T


_BASIS_REGISTRY: dict = {}


def _basis_key(basis: Basis):
    key = (basis.mesh, basis.degree, basis.quad_order)
    _BASIS_REGISTRY.setdefault(key, basis)
    return key


def hyperstress_matrix(kernel: KernelSpec, basis: Basis, n_radial: int = 8, n_angular: int = 8) -> np.ndarray:
    """Symmetric matrix ``A`` with ``H(G) = 1/2 g^T A g`` on quadrature samples ``g``.

    One scalar component at a time; tensor fields sum over components.
    """
    return _sample_matrix(kernel, _basis_key(basis), n_radial, n_angular, basis.quad_order)


def hyperstress_force(kernel: KernelSpec, G_field, mesh, n_radial: int = 8, n_angular: int = 8) -> np.ndarray:
    """Nonlocal hyperstress sampled at the quadrature points.

    Defined as the Riesz representative of the derivative of the discrete
    energy in the weighted sample inner product, so that
    ``sum_q w_q Hs(G)_q : Gt_q = DH(G)[Gt]`` holds exactly for sampled fields.
    """
    m, basis = _resolve_layout(mesh)
    if callable(G_field):
        G_field = G_field(basis.quadrature.points)
    g = np.asarray(G_field, dtype=float)
    shape = g.shape
    A = hyperstress_matrix(kernel, basis, n_radial, n_angular)
    out = A @ g.reshape(shape[0], -1)
    return (out / basis.quadrature.weights[:, None]).reshape(shape)


@lru_cache(maxsize=16)
def _hessian_form_cached(kernel: KernelSpec, basis_key, n_radial: int, n_angular: int) -> np.ndarray:
    basis = _BASIS_REGISTRY[basis_key]
    A = _sample_matrix(kernel, basis_key, n_radial, n_angular, basis.quad_order)
    D2 = basis.hessians_q
    d = basis.dim
    Hs = np.zeros((basis.size, basis.size))
    for i in range(d):
        for j in range(d):
            Dij = D2[:, :, i, j]
            Hs += Dij.T @ (A @ Dij)
    return 0.5 * (Hs + Hs.T)


def hessian_form(kernel: KernelSpec, basis: Basis, n_radial: int = 8, n_angular: int = 8) -> np.ndarray:
    """Matrix ``Hs`` with ``H(grad^2 chi) = 1/2 sum_k c_k^T Hs c_k`` for spline coefficients."""
    return _hessian_form_cached(kernel, _basis_key(basis), n_radial, n_angular)


# ---------------------------------------------------------------------------
# determinant bounds
# ---------------------------------------------------------------------------


def healey_kromer_eta(C_alpha: float, M_int: float, p: float, gamma: float, d: int) -> float:
    """Lower bound ``sup_{0<eta<1} eta - C_alpha M^(alpha/d) eta^(p alpha/d)``.

    ``alpha = gamma - (d/2 - 1)``.  With ``a = C_alpha M^(alpha/d)`` and
    ``q = p alpha/d > 1`` the supremum is ``eta0 (1 - 1/q)`` at
    ``eta0 = (a q)^(-1/(q-1))`` when ``eta0 < 1`` and ``1 - a`` otherwise.

    Raises
    ------
    InvalidExponents
        If ``gamma <= d/2 - 1``, ``p alpha/d <= 1``, ``C_alpha < 0`` or ``M_int <= 0``.
    """
    alpha = gamma - (d / 2 - 1)
    if alpha <= 0:
        raise InvalidExponents("gamma must exceed d/2 - 1")
    q = p * alpha / d
    if not q > 1:
        raise InvalidExponents(f"exponent p*alpha/d = {q} must exceed 1")
    if C_alpha < 0 or not M_int > 0:
        raise InvalidExponents("need C_alpha >= 0 and M_int > 0")
    a = C_alpha * M_int ** (alpha / d)
    if a == 0:
        return 1.0
    eta0 = (a * q) ** (-1.0 / (q - 1))
    if eta0 >= 1:
        return 1.0 - a
    return eta0 * (1 - 1 / q)


def holder_constant(values: np.ndarray, points: np.ndarray, alpha: float, block: int = 2048) -> float:
    """``max |J(x) - J(y)| / |x - y|^alpha`` over distinct sample pairs."""
    v = np.asarray(values, dtype=float)
    p = np.asarray(points, dtype=float)
    best = 0.0
    for s in range(0, v.size, block):
        dv = np.abs(v[s : s + block, None] - v[None, :])
        dist = np.linalg.norm(p[s : s + block, None, :] - p[None, :, :], axis=-1)
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(dist > 0, dv / dist**alpha, 0.0)
        best = max(best, float(ratio.max()))
    return best


def min_determinant_monitor(chi_field: DiscreteField, mesh=None, points: np.ndarray | None = None):
    """Smallest ``det grad chi`` over quadrature points (or given points).

    Returns
    -------
    J_min : float
    location : ndarray, shape (d,)
    """
    basis = chi_field.basis
    pts = basis.quadrature.points if points is None else np.asarray(points, dtype=float)
    F = evaluate(chi_field, pts, 1)
    J = determinant(F)
    k = int(np.argmin(J))
    return float(J[k]), pts[k].copy()


def field_callable(fld: DiscreteField, order) -> Callable[[np.ndarray], np.ndarray]:
    """Closure evaluating a spline field derivative, for use as ``G_field``."""
    return lambda pts: evaluate(fld, pts, order)


@dataclass(frozen=True)
class DeterminantBound:
    """Observed ``J_min`` next to the theoretical lower bound ``eta*``."""

    J_min: float
    location: tuple
    C_alpha: float
    M_int: float
    eta_star: float


def determinant_bound(chi_field: DiscreteField, gamma: float, p: float) -> DeterminantBound:
    """Compare the smallest ``det grad chi`` with the bound from ``int J^-p``.

    ``C_alpha`` is the largest Hoelder quotient of ``J`` over quadrature-point
    pairs with ``alpha = gamma - (d/2 - 1)``; ``M_int = int J^-p dx``.
    """
    basis = chi_field.basis
    q = basis.quadrature
    J = determinant(evaluate(chi_field, q.points, 1))
    k = int(np.argmin(J))
    d = basis.dim
    alpha = gamma - (d / 2 - 1)
    if J[k] <= 0:
        return DeterminantBound(float(J[k]), tuple(q.points[k]), np.inf, np.inf, 0.0)
    C = holder_constant(J, q.points, alpha)
    M = float(q.weights @ J ** (-p))
    eta = healey_kromer_eta(C, M, p, gamma, d)
    return DeterminantBound(float(J[k]), tuple(q.points[k]), C, M, eta)
