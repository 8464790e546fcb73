"""Box meshes, tensor-product B-spline spaces, quadrature and field evaluation.

All scalar and vector fields of the model live in one spline space of degree
``p >= 3`` with maximal smoothness ``C^{p-1}``, so second gradients are
continuous and Laplacians are square integrable.  Basis functions are ordered
x-major: the 2-D index of the pair ``(i, j)`` is ``i * n_y + j``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.interpolate import BSpline

from .errors import OutOfDomain, UnknownTag, UnsupportedOrder, ValidationError

__all__ = [
    "Mesh",
    "Basis",
    "DiscreteField",
    "QuadratureRule",
    "BoundaryForm",
    "evaluate",
    "assemble_mass_stiffness",
    "boundary_form",
]

_FACETS = {1: ("left", "right"), 2: ("left", "right", "bottom", "top")}
_DOMAIN_SLACK = 1e-12


@dataclass(frozen=True)
class Mesh:
    """Uniform Cartesian mesh of a box ``prod_a [lower_a, upper_a]``.

    Parameters
    ----------
    lower, upper : sequence of float
        Box corners, one entry per axis (``d = 1`` or ``2``).
    cells : sequence of int
        Number of cells per axis, at least 2.
    dirichlet : sequence of str
        Facets forming the clamped part of the boundary (statics only).
    """

    lower: tuple[float, ...]
    upper: tuple[float, ...]
    cells: tuple[int, ...]
    dirichlet: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "lower", tuple(float(v) for v in self.lower))
        object.__setattr__(self, "upper", tuple(float(v) for v in self.upper))
        object.__setattr__(self, "cells", tuple(int(v) for v in self.cells))
        object.__setattr__(self, "dirichlet", tuple(self.dirichlet))
        d = len(self.lower)
        if d not in _FACETS or len(self.upper) != d or len(self.cells) != d:
            raise ValidationError("mesh dimension must be 1 or 2 with matching lower/upper/cells")
        if any(u <= l for l, u in zip(self.lower, self.upper)):
            raise ValidationError("mesh extents must be positive")
        if any(n < 2 for n in self.cells):
            raise ValidationError("mesh needs at least 2 cells per axis")
        for tag in self.dirichlet:
            if tag not in _FACETS[d]:
                raise UnknownTag(f"unknown dirichlet facet {tag!r}")

    @classmethod
    def unit(cls, dim: int = 2, cells: int = 8, dirichlet: Sequence[str] = ()) -> "Mesh":
        return cls((0.0,) * dim, (1.0,) * dim, (cells,) * dim, tuple(dirichlet))

    @property
    def dim(self) -> int:
        return len(self.lower)

    @property
    def extents(self) -> np.ndarray:
        return np.array(self.upper) - np.array(self.lower)

    @property
    def h(self) -> np.ndarray:
        return self.extents / np.array(self.cells)

    @property
    def measure(self) -> float:
        return float(np.prod(self.extents))

    @property
    def facets(self) -> tuple[str, ...]:
        return _FACETS[self.dim]

    def breakpoints(self, axis: int) -> np.ndarray:
        return np.linspace(self.lower[axis], self.upper[axis], self.cells[axis] + 1)

    def resolve_tags(self, tag: str | Sequence[str]) -> tuple[str, ...]:
        """Expand a tag expression into a tuple of facet names.

        ``"boundary"`` selects every facet, ``"dirichlet"`` the clamped set,
        ``"free"`` its complement and ``""`` nothing.  A comma-separated string
        or a sequence selects facets by name.
        """
        if isinstance(tag, str):
            key = tag.strip()
            if key in ("boundary", "all"):
                return self.facets
            if key == "dirichlet":
                return self.dirichlet
            if key == "free":
                return tuple(f for f in self.facets if f not in self.dirichlet)
            names = [t.strip() for t in key.split(",") if t.strip()]
        else:
            names = list(tag)
        for n in names:
            if n not in self.facets:
                raise UnknownTag(f"unknown facet tag {n!r}; known: {self.facets}")
        # keep canonical order so forms are assembled deterministically
        return tuple(f for f in self.facets if f in names)

    def facet_measure(self, facet: str) -> float:
        if self.dim == 1:
            return 1.0
        axis = 0 if facet in ("left", "right") else 1
        return float(self.extents[1 - axis])

    def contains(self, points: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(points)
        lo = np.array(self.lower) - _DOMAIN_SLACK
        hi = np.array(self.upper) + _DOMAIN_SLACK
        return np.all((pts >= lo) & (pts <= hi), axis=1)


@dataclass(frozen=True)
class QuadratureRule:
    """Tensor Gauss rule; ``points`` ordered x-major like the basis."""

    points: np.ndarray
    weights: np.ndarray
    axis_points: tuple[np.ndarray, ...]
    axis_weights: tuple[np.ndarray, ...]
    per_cell: int


def _gauss_axis(breaks: np.ndarray, order: int) -> tuple[np.ndarray, np.ndarray]:
    xg, wg = np.polynomial.legendre.leggauss(order)
    a, b = breaks[:-1, None], breaks[1:, None]
    pts = 0.5 * (a + b) + 0.5 * (b - a) * xg[None, :]
    wts = 0.5 * (b - a) * wg[None, :]
    return pts.ravel(), wts.ravel()


def _tensor(arrays: Sequence[np.ndarray]) -> np.ndarray:
    if len(arrays) == 1:
        return arrays[0][:, None]
    g = np.meshgrid(*arrays, indexing="ij")
    return np.stack([x.ravel() for x in g], axis=1)


class Basis:
    """Tensor-product B-spline space on a :class:`Mesh`.

    Parameters
    ----------
    mesh : Mesh
    degree : int
        Spline degree; the space is ``C^{degree-1}``.  Deformations need
        ``degree >= 3``.
    quad_order : int, optional
        Gauss points per axis and cell, ``degree + 1`` by default.
    """

    def __init__(self, mesh: Mesh, degree: int = 3, quad_order: int | None = None):
        if degree < 1:
            raise ValidationError("spline degree must be >= 1")
        self.mesh = mesh
        self.degree = int(degree)
        self.quad_order = int(quad_order or degree + 1)
        p = self.degree
        self.knots = []
        self.axis_sizes = []
        self._splines = []
        for a in range(mesh.dim):
            br = mesh.breakpoints(a)
            t = np.concatenate([[br[0]] * p, br, [br[-1]] * p])
            n = len(t) - p - 1
            self.knots.append(t)
            self.axis_sizes.append(n)
            base = BSpline(t, np.eye(n), p, extrapolate=False)
            self._splines.append([base] + [base.derivative(k) for k in range(1, p + 1)])
        self.size = int(np.prod(self.axis_sizes))

    def __repr__(self) -> str:
        return f"Basis(cells={self.mesh.cells}, degree={self.degree})"

    @property
    def dim(self) -> int:
        return self.mesh.dim

    @property
    def smoothness(self) -> int:
        return self.degree - 1

    def greville(self, axis: int) -> np.ndarray:
        t, p = self.knots[axis], self.degree
        n = self.axis_sizes[axis]
        return np.array([t[i + 1 : i + p + 1].mean() for i in range(n)])

    def axis_matrix(self, axis: int, x: np.ndarray, order: int = 0) -> np.ndarray:
        """Dense ``(len(x), n_axis)`` matrix of 1-D basis derivatives."""
        x = np.asarray(x, dtype=float)
        lo, hi = self.mesh.lower[axis], self.mesh.upper[axis]
        xc = np.clip(x, lo, hi)
        if order > self.degree:
            return np.zeros((x.size, self.axis_sizes[axis]))
        out = self._splines[axis][order](xc)
        # the right end is excluded by the half-open knot spans
        right = xc >= hi
        if np.any(right):
            out[right] = self._splines[axis][order](np.nextafter(hi, lo))
        return np.nan_to_num(out, nan=0.0)

    def _check_order(self, order) -> int:
        k = 2 if order == "laplacian" else int(order)
        if k not in (0, 1, 2):
            raise UnsupportedOrder(f"derivative order {order!r} not supported")
        if k > 0 and self.smoothness < k:
            raise UnsupportedOrder(
                f"order {k} needs a C^{k} space; degree {self.degree} is C^{self.smoothness}"
            )
        return k

    def _check_points(self, points: np.ndarray) -> np.ndarray:
        pts = np.asarray(points, dtype=float)
        pts = pts.reshape(-1, self.dim) if pts.ndim != 2 else pts
        if pts.shape[1] != self.dim:
            raise ValidationError("points have the wrong dimension")
        if not np.all(self.mesh.contains(pts)):
            raise OutOfDomain("evaluation point outside the closed domain")
        return pts

    def tabulate(self, points: np.ndarray, order: int = 0) -> np.ndarray:
        """Dense basis tabulation at scattered points.

        Returns shape ``(npts, size)`` for order 0, ``(npts, size, d)`` for
        order 1 and ``(npts, size, d, d)`` for order 2.
        """
        k = self._check_order(order)
        pts = self._check_points(points)
        d = self.dim
        mats = [[self.axis_matrix(a, pts[:, a], o) for o in range(k + 1)] for a in range(d)]
        if d == 1:
            m = mats[0]
            if k == 0:
                return m[0]
            if k == 1:
                return m[1][:, :, None]
            return m[2][:, :, None, None]
        npts = pts.shape[0]

        def prod(ox, oy):
            return np.einsum("pi,pj->pij", mats[0][ox], mats[1][oy]).reshape(npts, -1)

        if k == 0:
            return prod(0, 0)
        if k == 1:
            return np.stack([prod(1, 0), prod(0, 1)], axis=-1)
        dxy = prod(1, 1)
        return np.stack(
            [np.stack([prod(2, 0), dxy], axis=-1), np.stack([dxy, prod(0, 2)], axis=-1)],
            axis=-2,
        )

    @cached_property
    def quadrature(self) -> QuadratureRule:
        ap, aw = zip(*(_gauss_axis(self.mesh.breakpoints(a), self.quad_order) for a in range(self.dim)))
        pts = _tensor(ap)
        wts = np.prod(_tensor(aw), axis=1)
        return QuadratureRule(pts, wts, tuple(ap), tuple(aw), self.quad_order**self.dim)

    @cached_property
    def values_q(self) -> np.ndarray:
        """Basis values at quadrature points, ``(nq, size)``."""
        return self.tabulate(self.quadrature.points, 0)

    @cached_property
    def grads_q(self) -> np.ndarray:
        """Basis gradients at quadrature points, ``(nq, size, d)``."""
        return self.tabulate(self.quadrature.points, 1)

    @cached_property
    def hessians_q(self) -> np.ndarray:
        """Basis second gradients at quadrature points, ``(nq, size, d, d)``."""
        if self.smoothness < 2:
            raise UnsupportedOrder("second gradients need degree >= 3")
        return self.tabulate(self.quadrature.points, 2)

    @cached_property
    def integrals(self) -> np.ndarray:
        """``int_Omega B_i dx`` for every basis function."""
        return self.values_q.T @ self.quadrature.weights

    def interpolate(self, func: Callable[[np.ndarray], np.ndarray]) -> np.ndarray:
        """Coefficients of the spline interpolating ``func`` at Greville points."""
        grids = [self.greville(a) for a in range(self.dim)]
        pts = _tensor(grids)
        vals = np.asarray(func(pts), dtype=float)
        rank_shape = vals.shape[1:]
        vals = vals.reshape((*self.axis_sizes, -1))
        for a in range(self.dim):
            col = self.axis_matrix(a, grids[a], 0)
            vals = np.moveaxis(np.tensordot(np.linalg.inv(col), vals, axes=(1, a)), 0, a)
        return vals.reshape((self.size, *rank_shape))

    def refine(self) -> "Basis":
        """Same degree on a mesh with every cell split in two."""
        m = self.mesh
        fine = Mesh(m.lower, m.upper, tuple(2 * c for c in m.cells), m.dirichlet)
        return Basis(fine, self.degree, self.quad_order)

    def prolongation(self, fine: "Basis") -> np.ndarray:
        """Matrix mapping coarse coefficients to the nested fine space."""
        mats = []
        for a in range(self.dim):
            g = fine.greville(a)
            mats.append(np.linalg.solve(fine.axis_matrix(a, g, 0), self.axis_matrix(a, g, 0)))
        out = mats[0]
        for m in mats[1:]:
            out = np.kron(out, m)
        return out

    def boundary_dofs(self, facets: Sequence[str]) -> np.ndarray:
        """Indices of coefficients whose functions do not vanish on the facets."""
        idx = np.arange(self.size).reshape(self.axis_sizes)
        sel = np.zeros(self.axis_sizes, dtype=bool)
        for f in facets:
            if f == "left":
                sel[0, ...] = True
            elif f == "right":
                sel[-1, ...] = True
            elif f == "bottom":
                sel[:, 0] = True
            elif f == "top":
                sel[:, -1] = True
        return idx[sel]


@dataclass(frozen=True)
class DiscreteField:
    """Spline expansion ``sum_i c_i B_i`` with scalar or vector values.

    ``coeffs`` has shape ``(size,)`` for scalars and ``(size, rank)`` for
    vector fields.
    """

    basis: Basis
    coeffs: np.ndarray = field(repr=False)

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=float)
        if c.shape[0] != self.basis.size or c.ndim > 2:
            raise ValidationError(
                f"coefficient array of shape {c.shape} does not match basis size {self.basis.size}"
            )
        object.__setattr__(self, "coeffs", c)

    @property
    def rank(self) -> int:
        return 1 if self.coeffs.ndim == 1 else self.coeffs.shape[1]

    @property
    def is_scalar(self) -> bool:
        return self.coeffs.ndim == 1


def evaluate(fld: DiscreteField, points: np.ndarray, derivative_order=0, chunk: int = 65536) -> np.ndarray:
    """Exact values or derivatives of a spline field at points.

    Parameters
    ----------
    fld : DiscreteField
    points : ndarray, shape (npts, d)
    derivative_order : {0, 1, 2, "laplacian"}

    Returns
    -------
    ndarray
        Shapes ``(npts, [rank])``, ``(npts, [rank], d)``, ``(npts, [rank], d, d)``
        or ``(npts, [rank])`` for the Laplacian; the rank axis is absent for
        scalar fields.

    Raises
    ------
    UnsupportedOrder
        If the space is not smooth enough for the requested order.
    OutOfDomain
        If a point lies outside the closed box.
    """
    basis = fld.basis
    k = basis._check_order(derivative_order)
    pts = basis._check_points(points)
    d = basis.dim
    coef = fld.coeffs.reshape((*basis.axis_sizes, -1))
    rank = coef.shape[-1]
    out_parts = []
    for s in range(0, pts.shape[0], chunk):
        p = pts[s : s + chunk]
        mats = [[basis.axis_matrix(a, p[:, a], o) for o in range(k + 1)] for a in range(d)]

        def contract(orders):
            if d == 1:
                return mats[0][orders[0]] @ coef
            tmp = np.tensordot(mats[0][orders[0]], coef, axes=(1, 0))  # (n, ny, r)
            return np.einsum("pj,pjr->pr", mats[1][orders[1]], tmp)

        if k == 0:
            res = contract((0,) * d)
        elif k == 1:
            res = np.stack([contract(tuple(int(a == b) for b in range(d))) for a in range(d)], axis=-1)
        else:
            res = np.empty((p.shape[0], rank, d, d))
            for a in range(d):
                for b in range(a, d):
                    o = [0] * d
                    o[a] += 1
                    o[b] += 1
                    res[..., a, b] = res[..., b, a] = contract(tuple(o))
        out_parts.append(res)
    out = np.concatenate(out_parts, axis=0)
    if derivative_order == "laplacian":
        out = np.trace(out, axis1=-2, axis2=-1)
    if fld.is_scalar:
        out = out[:, 0]
    return out


def _at_quadrature(basis: Basis, coefficient) -> np.ndarray | None:
    if coefficient is None:
        return None
    if callable(coefficient):
        return np.asarray(coefficient(basis.quadrature.points), dtype=float)
    return np.asarray(coefficient, dtype=float)


def assemble_mass_stiffness(basis: Basis, coefficient=None, mass_weight=None) -> tuple[sp.csr_matrix, sp.csr_matrix]:
    """Galerkin mass and stiffness matrices.

    Parameters
    ----------
    basis : Basis
    coefficient : ndarray or callable, optional
        Stiffness weight at quadrature points: scalar ``(nq,)`` or tensor
        ``(nq, d, d)``.  Identity when omitted.
    mass_weight : ndarray or callable, optional
        Scalar mass weight at quadrature points.

    Returns
    -------
    mass, stiffness : scipy.sparse.csr_matrix
    """
    w = basis.quadrature.weights
    B, G = basis.values_q, basis.grads_q
    mw = _at_quadrature(basis, mass_weight)
    wm = w if mw is None else w * mw
    mass = (B * wm[:, None]).T @ B
    coef = _at_quadrature(basis, coefficient)
    if coef is None:
        stiff = np.einsum("qia,q,qja->ij", G, w, G, optimize=True)
    elif coef.ndim == 1:
        stiff = np.einsum("qia,q,qja->ij", G, w * coef, G, optimize=True)
    else:
        stiff = np.einsum("qia,qab,q,qjb->ij", G, coef, w, G, optimize=True)
    mass = 0.5 * (mass + mass.T)
    stiff = 0.5 * (stiff + stiff.T)
    return sp.csr_matrix(mass), sp.csr_matrix(stiff)


@dataclass(frozen=True)
class BoundaryForm:
    """Surface quadrature and forms on a set of facets."""

    facets: tuple[str, ...]
    points: np.ndarray
    weights: np.ndarray
    normals: np.ndarray
    values: np.ndarray = field(repr=False)
    size: int = 0

    @property
    def mass(self) -> sp.csr_matrix:
        m = (self.values * self.weights[:, None]).T @ self.values
        return sp.csr_matrix(0.5 * (m + m.T)) if m.size else sp.csr_matrix((self.size, self.size))

    def weighted_mass(self, weight: np.ndarray) -> np.ndarray:
        return (self.values * (self.weights * weight)[:, None]).T @ self.values

    def linear(self, data) -> np.ndarray:
        """Load vector ``int_Gamma data B_i dS``; data scalar or vector per point."""
        if callable(data):
            data = data(self.points)
        data = np.asarray(data, dtype=float)
        if data.ndim == 0:
            data = np.full(self.weights.shape, float(data))
        if self.weights.size == 0:
            return np.zeros((self.size, *data.shape[1:]))
        return np.tensordot(self.values * self.weights[:, None], data, axes=(0, 0))

    @property
    def measure(self) -> float:
        return float(self.weights.sum())


def boundary_form(basis: Basis, facet_tag) -> BoundaryForm:
    """Surface mass matrix and load functionals over tagged facets.

    Raises
    ------
    UnknownTag
        If the tag names a facet the mesh does not have.
    """
    mesh = basis.mesh
    facets = mesh.resolve_tags(facet_tag)
    pts, wts, nrm = [], [], []
    for f in facets:
        if mesh.dim == 1:
            x = mesh.lower[0] if f == "left" else mesh.upper[0]
            pts.append(np.array([[x]]))
            wts.append(np.array([1.0]))
            nrm.append(np.array([[-1.0 if f == "left" else 1.0]]))
            continue
        axis = 0 if f in ("left", "right") else 1
        other = 1 - axis
        s, ws = _gauss_axis(mesh.breakpoints(other), basis.quad_order)
        fixed = mesh.lower[axis] if f in ("left", "bottom") else mesh.upper[axis]
        p = np.empty((s.size, 2))
        p[:, axis] = fixed
        p[:, other] = s
        n = np.zeros((s.size, 2))
        n[:, axis] = -1.0 if f in ("left", "bottom") else 1.0
        pts.append(p)
        wts.append(ws)
        nrm.append(n)
    d = mesh.dim
    if pts:
        P, W, N = np.concatenate(pts), np.concatenate(wts), np.concatenate(nrm)
        V = basis.tabulate(P, 0)
    else:
        P, W, N = np.zeros((0, d)), np.zeros(0), np.zeros((0, d))
        V = np.zeros((0, basis.size))
    return BoundaryForm(facets, P, W, N, V, basis.size)

