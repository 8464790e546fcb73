"""Spatial-frame magnetostatics on a truncated box.

The scalar potential lives on the nodes of a uniform grid with bilinear
elements and zero Dirichlet data on the box boundary; the spatial
magnetization is piecewise constant on grid cells.  The potential solves

    mu0 * Laplace(phi) = div(m_bar),

so that the demagnetizing field is ``-grad phi`` and the energy
``(mu0/2) int |grad phi|^2`` equals ``1/2 int grad phi . m_bar`` at the
solution.  The bilinear stiffness on a uniform grid is diagonalized by the
type-I discrete sine transform, which is used as preconditioner for CG.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np
from scipy.fft import dstn
from scipy.ndimage import uniform_filter
from scipy.sparse.linalg import LinearOperator, cg
from scipy.spatial import cKDTree

from .constitutive import determinant
from .discretization import DiscreteField, Mesh, evaluate
from .errors import DegenerateDeformation, NonInjective, SolverDivergence, ValidationError

__all__ = [
    "SpatialGrid",
    "PotentialSolution",
    "GapReport",
    "push_forward_magnetization",
    "solve_scalar_potential",
    "pull_back_external_field",
    "ciarlet_necas_gap",
    "gap_report",
    "DepositedDemag",
    "DiskStudy",
    "uniform_disk_study",
]

CG_RTOL = 1e-10


@dataclass(frozen=True)
class SpatialGrid:
    """Uniform 2-D grid on a truncation box for the spatial potential.

    Parameters
    ----------
    lower, upper : tuple of float
        Box corners.
    cells : tuple of int
        Cells per axis.
    mu0 : float
        Vacuum permeability.
    """

    lower: tuple
    upper: tuple
    cells: tuple
    mu0: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "lower", tuple(float(v) for v in self.lower))
        object.__setattr__(self, "upper", tuple(float(v) for v in self.upper))
        object.__setattr__(self, "cells", tuple(int(v) for v in self.cells))
        if len(self.lower) != 2 or len(self.upper) != 2 or len(self.cells) != 2:
            raise ValidationError("spatial grids are two-dimensional")
        if any(u <= l for l, u in zip(self.lower, self.upper)) or min(self.cells) < 2:
            raise ValidationError("invalid spatial grid")
        if not self.mu0 > 0:
            raise ValidationError("mu0 must be positive")

    @classmethod
    def enclosing(cls, image_lower, image_upper, cells, margin: float = 4.0, mu0: float = 1.0) -> "SpatialGrid":
        """Box around an image bounding box, padded by ``margin`` image diameters.

        The diameter is the largest bounding-box extent; ``margin >= 1``.
        """
        lo, hi = np.asarray(image_lower, float), np.asarray(image_upper, float)
        if margin < 1:
            raise ValidationError("margin must be at least one image diameter")
        pad = margin * float(np.max(hi - lo))
        if np.ndim(cells) == 0:
            cells = (cells, cells)
        return cls(tuple(lo - pad), tuple(hi + pad), tuple(cells), mu0)

    @classmethod
    def around(cls, chi, mesh: Mesh | None = None, cells=128, margin: float = 4.0, mu0: float = 1.0) -> "SpatialGrid":
        """Grid enclosing the image of a deformation (bounding box of mapped boundary)."""
        pts = _boundary_loop(_domain(chi, mesh), 256)
        y, _ = _map(chi, pts)
        return cls.enclosing(y.min(axis=0), y.max(axis=0), cells, margin, mu0)

    @property
    def h(self) -> np.ndarray:
        return (np.array(self.upper) - np.array(self.lower)) / np.array(self.cells)

    @property
    def cell_area(self) -> float:
        return float(np.prod(self.h))

    @property
    def cell_centers(self) -> np.ndarray:
        """Cell centers, shape ``(nx, ny, 2)``."""
        ax = [self.lower[a] + (np.arange(self.cells[a]) + 0.5) * self.h[a] for a in range(2)]
        return np.stack(np.meshgrid(*ax, indexing="ij"), axis=-1)

    @property
    def nodes(self) -> np.ndarray:
        ax = [np.linspace(self.lower[a], self.upper[a], self.cells[a] + 1) for a in range(2)]
        return np.stack(np.meshgrid(*ax, indexing="ij"), axis=-1)

    def strictly_contains(self, lo, hi, cells_inside: float = 2.0) -> bool:
        slack = cells_inside * self.h
        return bool(np.all(np.asarray(lo) > np.array(self.lower) + slack) and np.all(np.asarray(hi) < np.array(self.upper) - slack))

    # -- bilinear element operators on interior nodes --------------------

    def _axis_ops(self, a: int):
        n, h = self.cells[a] - 1, self.h[a]
        k = np.arange(1, n + 1)
        c = np.cos(np.pi * k / self.cells[a])
        return (2 - 2 * c) / h, h * (4 + 2 * c) / 6

    def apply_stiffness(self, phi_int: np.ndarray) -> np.ndarray:
        """``K phi`` for interior nodal values, shape ``(nx-1, ny-1)``."""
        hx, hy = self.h

        def tri(u, axis, diag, off):
            out = diag * u
            sl = [slice(None)] * 2
            lo, hi = list(sl), list(sl)
            lo[axis], hi[axis] = slice(None, -1), slice(1, None)
            out[tuple(lo)] += off * u[tuple(hi)]
            out[tuple(hi)] += off * u[tuple(lo)]
            return out

        kx = lambda u: tri(u, 0, 2 / hx, -1 / hx)
        mx = lambda u: tri(u, 0, 4 * hx / 6, hx / 6)
        ky = lambda u: tri(u, 1, 2 / hy, -1 / hy)
        my = lambda u: tri(u, 1, 4 * hy / 6, hy / 6)
        return kx(my(phi_int)) + mx(ky(phi_int))

    def fast_inverse(self, rhs_int: np.ndarray) -> np.ndarray:
        """Exact inverse of the interior stiffness via the type-I sine transform."""
        kx, mx = self._axis_ops(0)
        ky, my = self._axis_ops(1)
        lam = kx[:, None] * my[None, :] + mx[:, None] * ky[None, :]
        return dstn(dstn(rhs_int, type=1, norm="ortho") / lam, type=1, norm="ortho")

    def divergence_load(self, m_bar: np.ndarray) -> np.ndarray:
        """Nodal vector ``b_i = int m_bar . grad N_i`` on all nodes."""
        hx, hy = self.h
        b = np.zeros((self.cells[0] + 1, self.cells[1] + 1))
        for a in (0, 1):
            for c in (0, 1):
                b[a : a + self.cells[0], c : c + self.cells[1]] += (2 * a - 1) * 0.5 * hy * m_bar[..., 0] + (2 * c - 1) * 0.5 * hx * m_bar[..., 1]
        return b

    def divergence_load_adjoint(self, phi: np.ndarray) -> np.ndarray:
        """Transpose of :meth:`divergence_load`: cellwise ``int grad phi``."""
        hx, hy = self.h
        g = np.zeros((*self.cells, 2))
        for a in (0, 1):
            for c in (0, 1):
                blk = phi[a : a + self.cells[0], c : c + self.cells[1]]
                g[..., 0] += (2 * a - 1) * 0.5 * hy * blk
                g[..., 1] += (2 * c - 1) * 0.5 * hx * blk
        return g


class PotentialSolution(NamedTuple):
    phi: np.ndarray  # nodal values, shape (nx+1, ny+1)
    energy: float  # (mu0/2) int |grad phi|^2
    energy_coupling: float  # 1/2 int grad phi . m_bar
    iterations: int

    def demag_field(self, grid: SpatialGrid) -> np.ndarray:
        """Cell-averaged ``-grad phi``, shape ``(nx, ny, 2)``."""
        return -grid.divergence_load_adjoint(self.phi) / grid.cell_area


def solve_scalar_potential(m_bar: np.ndarray, grid: SpatialGrid, rtol: float = CG_RTOL, maxiter: int = 200) -> PotentialSolution:
    """Solve the truncated potential problem for a cellwise magnetization.

    Parameters
    ----------
    m_bar : ndarray, shape (nx, ny, 2)
        Spatial magnetization per grid cell.
    grid : SpatialGrid

    Raises
    ------
    SolverDivergence
        If CG does not reach ``rtol``.
    """
    m_bar = np.asarray(m_bar, dtype=float)
    if m_bar.shape != (*grid.cells, 2):
        raise ValidationError(f"m_bar must have shape {(*grid.cells, 2)}")
    b_full = grid.divergence_load(m_bar)
    b = b_full[1:-1, 1:-1]
    phi = np.zeros_like(b_full)
    if not np.any(b):
        return PotentialSolution(phi, 0.0, 0.0, 0)
    shape = b.shape
    mu0 = grid.mu0
    A = LinearOperator((b.size, b.size), matvec=lambda x: mu0 * grid.apply_stiffness(x.reshape(shape)).ravel(), dtype=float)
    P = LinearOperator((b.size, b.size), matvec=lambda x: grid.fast_inverse(x.reshape(shape)).ravel() / mu0, dtype=float)
    count = [0]

    def cb(_):
        count[0] += 1

    x, info = cg(A, b.ravel(), rtol=rtol, atol=0.0, M=P, maxiter=maxiter, callback=cb)
    res = np.linalg.norm(b.ravel() - A @ x) / np.linalg.norm(b)
    if info != 0 or not res <= 10 * rtol:
        raise SolverDivergence(f"potential solve stalled at relative residual {res:.2e}")
    phi[1:-1, 1:-1] = x.reshape(shape)
    e_grad = 0.5 * mu0 * float(x @ grid.apply_stiffness(x.reshape(shape)).ravel())
    e_coup = 0.5 * float(x @ b.ravel())
    return PotentialSolution(phi, e_grad, e_coup, count[0])


# ---------------------------------------------------------------------------
# deformation helpers
# ---------------------------------------------------------------------------


def _domain(chi, mesh: Mesh | None) -> Mesh:
    if mesh is not None:
        return mesh
    if isinstance(chi, DiscreteField):
        return chi.basis.mesh
    raise ValidationError("a mesh is required for callable deformations")


def _map(chi, pts: np.ndarray):
    """Images and gradients of a spline field or of a callable ``pts -> (y, F)``."""
    if isinstance(chi, DiscreteField):
        return evaluate(chi, pts, 0), evaluate(chi, pts, 1)
    y, F = chi(pts)
    return np.asarray(y, float), np.asarray(F, float)


def _boundary_loop(mesh: Mesh, per_side: int) -> np.ndarray:
    """Counter-clockwise closed polyline along the box boundary."""
    (x0, y0), (x1, y1) = mesh.lower, mesh.upper
    t = np.linspace(0, 1, per_side, endpoint=False)
    return np.concatenate(
        [
            np.stack([x0 + t * (x1 - x0), np.full_like(t, y0)], 1),
            np.stack([np.full_like(t, x1), y0 + t * (y1 - y0)], 1),
            np.stack([x1 - t * (x1 - x0), np.full_like(t, y1)], 1),
            np.stack([np.full_like(t, x0), y1 - t * (y1 - y0)], 1),
        ]
    )


def _winding_raster(loop: np.ndarray, lower, h, shape) -> np.ndarray:
    """Winding number of a closed polyline at the centers of a raster."""
    p0, p1 = loop, np.roll(loop, -1, axis=0)
    ny, nx = shape[1], shape[0]
    yc0 = lower[1] + 0.5 * h[1]
    diff = np.zeros((nx + 1, ny))
    ylo, yhi = np.minimum(p0[:, 1], p1[:, 1]), np.maximum(p0[:, 1], p1[:, 1])
    r0 = np.ceil((ylo - yc0) / h[1]).astype(int)
    r1 = np.ceil((yhi - yc0) / h[1]).astype(int)  # half-open [ylo, yhi)
    r0, r1 = np.clip(r0, 0, ny), np.clip(r1, 0, ny)
    counts = np.maximum(r1 - r0, 0)
    edge = np.repeat(np.arange(loop.shape[0]), counts)
    if edge.size == 0:
        return np.zeros(shape, dtype=int)
    row = np.concatenate([np.arange(a, b) for a, b in zip(r0, r1) if b > a])
    yr = yc0 + row * h[1]
    a, b = p0[edge], p1[edge]
    xc = a[:, 0] + (yr - a[:, 1]) * (b[:, 0] - a[:, 0]) / (b[:, 1] - a[:, 1])
    sign = np.where(b[:, 1] > a[:, 1], 1.0, -1.0)
    col = np.clip(np.ceil((xc - lower[0] - 0.5 * h[0]) / h[0]).astype(int), 0, nx)
    # cells left of the crossing see it on their rightward ray
    np.add.at(diff, (np.zeros_like(col), row), sign)
    np.add.at(diff, (col, row), -sign)
    return np.rint(np.cumsum(diff, axis=0)[:nx]).astype(int)


class GapReport(NamedTuple):
    gap: float
    integral_J: float
    image_measure: float
    degenerate: bool


def gap_report(chi, mesh: Mesh | None = None, n_samples: int = 10**6, seed: int = 0, raster: int = 1024, per_side: int = 4096) -> GapReport:
    """Monte-Carlo estimate of ``int det grad chi - meas(chi(Omega))``.

    Samples ``x_s`` uniform in the reference box give
    ``gap ~ |Omega|/N sum_s J_s (1 - 1/N(chi(x_s)))`` where the multiplicity
    ``N`` is read from a raster of the winding number of the mapped boundary
    (the Brouwer degree, equal to the preimage count where ``J > 0``).
    """
    mesh = _domain(chi, mesh)
    rng = np.random.default_rng(seed)
    lo, hi = np.array(mesh.lower), np.array(mesh.upper)
    x = lo + (hi - lo) * rng.random((n_samples, mesh.dim))
    y, F = _map(chi, x)
    J = determinant(F) if mesh.dim == 2 else F.reshape(-1)
    degenerate = bool(np.any(J <= 0))
    vol = mesh.measure
    int_J = vol * float(np.mean(J))
    if mesh.dim == 1:
        mult = np.ones(n_samples)
    else:
        loop, _ = _map(chi, _boundary_loop(mesh, per_side))
        rlo, rhi = loop.min(axis=0), loop.max(axis=0)
        pad = 1e-9 * max(1.0, float(np.max(rhi - rlo)))
        rlo, rhi = rlo - pad, rhi + pad
        h = (rhi - rlo) / raster
        wind = _winding_raster(loop, rlo, h, (raster, raster))
        idx = np.clip(((y - rlo) / h).astype(int), 0, raster - 1)
        mult = np.maximum(np.abs(wind[idx[:, 0], idx[:, 1]]), 1).astype(float)
    image = vol * float(np.mean(J / mult))
    return GapReport(int_J - image, int_J, image, degenerate)


def ciarlet_necas_gap(chi, mesh: Mesh | None = None, n_samples: int = 10**6, seed: int = 0) -> float:
    """Injectivity defect ``int_Omega det grad chi dx - meas(chi(Omega))``.

    Zero (to sampling tolerance) for injective maps, positive for overlaps.
    """
    return gap_report(chi, mesh, n_samples, seed).gap


# ---------------------------------------------------------------------------
# push-forward, pull-back
# ---------------------------------------------------------------------------


def push_forward_magnetization(
    chi,
    m_field,
    grid: SpatialGrid,
    mesh: Mesh | None = None,
    check_injective: bool = True,
    gap_tol: float = 0.01,
    max_samples: int = 4_000_000,
    supersample: int = 4,
) -> np.ndarray:
    """Spatial magnetization ``(J^-1 F m) o chi^-1`` rasterized on grid cells.

    A tensor sub-sampling of the reference box is mapped forward.  Each cell
    takes the value of the nearest image sample scaled by the fraction of its
    area inside ``chi(Omega)``, counted on a ``supersample``-times finer
    raster of the boundary winding number; cells outside the image are zero.

    Parameters
    ----------
    chi : DiscreteField or callable
        Deformation; callables return ``(y, F)``.
    m_field : DiscreteField or callable
        Referential magnetization.
    grid : SpatialGrid
    check_injective : bool
        Raise :class:`NonInjective` if the gap exceeds ``gap_tol |Omega|``.

    Raises
    ------
    DegenerateDeformation
        If ``det grad chi <= 0`` at any sample.
    NonInjective
        If the injectivity check fails.
    """
    mesh = _domain(chi, mesh)
    lo, hi = np.array(mesh.lower), np.array(mesh.upper)
    probe = lo + (hi - lo) * (np.stack(np.meshgrid(*[np.linspace(0, 1, 17)] * 2, indexing="ij"), -1).reshape(-1, 2))
    _, Fp = _map(chi, probe)
    stretch = float(np.max(np.linalg.norm(Fp, ord=2, axis=(1, 2))))
    step = min(grid.h) / (2.0 * max(stretch, 1e-12))
    n_axis = np.ceil((hi - lo) / step).astype(int)
    scale = np.sqrt(max_samples / float(np.prod(n_axis)))
    if scale < 1:
        n_axis = np.maximum((n_axis * scale).astype(int), 2)
    ax = [lo[a] + (np.arange(n_axis[a]) + 0.5) * (hi[a] - lo[a]) / n_axis[a] for a in range(2)]
    x = np.stack(np.meshgrid(*ax, indexing="ij"), -1).reshape(-1, 2)
    y, F = _map(chi, x)
    J = determinant(F)
    if np.any(J <= 0):
        raise DegenerateDeformation("det grad chi <= 0 at a rasterization sample")
    if check_injective:
        rep = gap_report(chi, mesh)
        if rep.gap > gap_tol * mesh.measure:
            raise NonInjective(f"Ciarlet-Necas gap {rep.gap:.4g} exceeds tolerance")
    m = m_field(x) if callable(m_field) else evaluate(m_field, x, 0)
    val = np.einsum("nij,nj->ni", F, m) / J[:, None]
    cell = np.floor((y - np.array(grid.lower)) / grid.h).astype(int)
    inside = np.all((cell >= 0) & (cell < np.array(grid.cells)), axis=1)
    if not np.all(inside):
        raise ValidationError("deformed body leaves the truncation box")
    # covered area fraction per cell from the winding number on a finer raster
    loop, _ = _map(chi, _boundary_loop(mesh, 4 * max(grid.cells)))
    fine = (grid.cells[0] * supersample, grid.cells[1] * supersample)
    wind = _winding_raster(loop, np.array(grid.lower), grid.h / supersample, fine)
    cover = (wind != 0).reshape(grid.cells[0], supersample, grid.cells[1], supersample).mean(axis=(1, 3))
    hit = cover > 0
    out = np.zeros((*grid.cells, 2))
    _, nearest = cKDTree(y).query(grid.cell_centers[hit])
    out[hit] = cover[hit, None] * val[nearest]
    return out


def pull_back_external_field(chi, h_sp: Callable[[np.ndarray], np.ndarray], points: np.ndarray | None = None) -> np.ndarray:
    """Referential field ``F^T (h_sp o chi)`` at quadrature points (or ``points``)."""
    if points is None:
        points = chi.basis.quadrature.points
    y, F = _map(chi, points)
    return np.einsum("nji,nj->ni", F, np.asarray(h_sp(y), float))


# ---------------------------------------------------------------------------
# differentiable deposition used by the static energy
# ---------------------------------------------------------------------------


def _quadratic_weights(u: np.ndarray):
    """Quadratic B-spline weights and derivatives for cell-center coordinate ``u``."""
    base = np.floor(u + 0.5).astype(int)
    t = u - base
    w = np.stack([0.5 * (0.5 - t) ** 2, 0.75 - t * t, 0.5 * (0.5 + t) ** 2], axis=-1)
    dw = np.stack([-(0.5 - t), -2 * t, 0.5 + t], axis=-1)
    return base, w, dw


class DepositedDemag:
    """Magnetostatic energy of quadrature-point dipoles spread onto a grid.

    ``m_bar = sum_q w_q (F m)_q K(z - chi_q) / |cell|`` with a tensor quadratic
    B-spline ``K``, optionally averaged over a ``smoothing`` box of cells; the energy ``1/2 int grad phi . m_bar`` is then a smooth
    function of the point positions ``chi_q`` and moments ``(F m)_q``.
    """

    def __init__(self, grid: SpatialGrid, smoothing: int = 1):
        if smoothing < 1 or smoothing % 2 == 0:
            raise ValidationError("smoothing must be a positive odd number of cells")
        self.grid = grid
        self.smoothing = int(smoothing)

    @staticmethod
    def smoothing_for(grid: SpatialGrid, points: np.ndarray) -> int:
        """Smallest odd box width (in cells) spanning the widest gap between point rows.

        Points sparser than the grid deposit isolated spikes whose self-energy
        dominates; averaging over the gap restores a resolved ``m_bar``.
        """
        gap = 0.0
        for a in range(points.shape[1]):
            xs = np.unique(np.round(points[:, a], 12))
            if xs.size > 1:
                gap = max(gap, float(np.diff(xs).max()))
        k = int(np.ceil(gap / float(np.min(grid.h)) - 1e-12))
        return max(1, k + (k % 2 == 0))

    def _smooth(self, arr: np.ndarray) -> np.ndarray:
        # symmetric zero-padded box average, hence self-adjoint
        if self.smoothing == 1:
            return arr
        return np.stack([uniform_filter(arr[..., c], size=self.smoothing, mode="constant") for c in (0, 1)], axis=-1)

    def _stencil(self, y: np.ndarray):
        g = self.grid
        u = (y - np.array(g.lower)) / g.h - 0.5
        bx, wx, dwx = _quadratic_weights(u[:, 0])
        by, wy, dwy = _quadratic_weights(u[:, 1])
        r = 1 + self.smoothing // 2
        if np.any(bx < r) or np.any(by < r) or np.any(bx > g.cells[0] - 1 - r) or np.any(by > g.cells[1] - 1 - r):
            return None
        off = np.arange(-1, 2)
        ix = (bx[:, None] + off)[:, :, None] + 0 * off[None, None, :]
        iy = 0 * off[None, :, None] + (by[:, None] + off)[:, None, :]
        K = wx[:, :, None] * wy[:, None, :]
        Kx = dwx[:, :, None] * wy[:, None, :] / g.h[0]
        Ky = wx[:, :, None] * dwy[:, None, :] / g.h[1]
        return ix.reshape(len(y), 9), iy.reshape(len(y), 9), K.reshape(len(y), 9), Kx.reshape(len(y), 9), Ky.reshape(len(y), 9)

    def deposit(self, y: np.ndarray, moments: np.ndarray) -> np.ndarray:
        st = self._stencil(y)
        if st is None:
            raise ValidationError("deformed body leaves the truncation box")
        ix, iy, K, _, _ = st
        out = np.zeros((*self.grid.cells, 2))
        for c in (0, 1):
            np.add.at(out[..., c], (ix, iy), K * moments[:, c : c + 1])
        return self._smooth(out) / self.grid.cell_area

    def energy_and_gradient(self, y: np.ndarray, moments: np.ndarray):
        """Energy and its derivatives w.r.t. ``y`` and the moments.

        ``moments`` already include the quadrature weights.  Returns
        ``(inf, None, None)`` if a point leaves the interior of the box.
        """
        st = self._stencil(y)
        if st is None:
            return np.inf, None, None
        ix, iy, K, Kx, Ky = st
        out = np.zeros((*self.grid.cells, 2))
        for c in (0, 1):
            np.add.at(out[..., c], (ix, iy), K * moments[:, c : c + 1])
        m_bar = self._smooth(out) / self.grid.cell_area
        sol = solve_scalar_potential(m_bar, self.grid)
        # dE/dm_bar = (B^T phi); chain through the deposition
        g = self._smooth(self.grid.divergence_load_adjoint(sol.phi)) / self.grid.cell_area
        gq = g[ix, iy]  # (nq, 9, 2)
        d_mom = np.einsum("qk,qkc->qc", K, gq)
        proj = np.einsum("qkc,qc->qk", gq, moments)
        d_y = np.stack([np.sum(Kx * proj, 1), np.sum(Ky * proj, 1)], axis=1)
        return sol.energy_coupling, d_mom, d_y


class DiskStudy(NamedTuple):
    energy: float
    energy_coupling: float
    reference: float
    rel_error: float
    coupling_mismatch: float
    half_width: float
    iterations: int
    slice_x: np.ndarray  # cell centers along the row through the disk center
    slice_field: np.ndarray  # demag field -grad phi on that row, shape (cells, 2)


def uniform_disk_study(radius: float = 1.0, magnetization=(1.0, 0.0), cells: int = 256, margin: float = 4.0,
                       mu0: float = 1.0, supersample: int = 8) -> DiskStudy:
    """Stray-field energy of a uniformly magnetized disk against ``|M|^2 pi R^2 / (4 mu0)``.

    With ``mu0`` inside the divergence the whole-space interior field is
    ``-M / (2 mu0)``, so the closed form carries ``1 / mu0``.

    The box is centered on the disk with half width ``radius * (1 + margin)``
    (``margin`` counts radii of padding); cell magnetizations are area
    fractions from ``supersample^2`` sub-cell samples.
    """
    if not radius > 0 or margin < 0 or supersample < 1:
        raise ValidationError("need radius > 0, margin >= 0 and supersample >= 1")
    L = radius * (1 + margin)
    grid = SpatialGrid((-L, -L), (L, L), (cells, cells), mu0)
    c, h = grid.cell_centers, grid.h
    off = (np.arange(supersample) + 0.5) / supersample - 0.5
    frac = np.zeros(grid.cells)
    for a in off:
        for b in off:
            frac += (c[..., 0] + a * h[0]) ** 2 + (c[..., 1] + b * h[1]) ** 2 < radius**2
    frac /= supersample**2
    M = np.asarray(magnetization, dtype=float)
    sol = solve_scalar_potential(frac[..., None] * M, grid)
    ref = float(M @ M) * np.pi * radius**2 / (4 * mu0)
    mismatch = abs(sol.energy - sol.energy_coupling) / max(abs(sol.energy), 1e-300)
    row = cells // 2
    H = sol.demag_field(grid)
    return DiskStudy(sol.energy, sol.energy_coupling, ref, sol.energy / ref - 1, mismatch, L, sol.iterations,
                     c[:, row, 0].copy(), 0.5 * (H[:, row - 1] + H[:, row]) if cells % 2 == 0 else H[:, row])
