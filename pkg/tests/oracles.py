"""Independent reference computations used by the test-suite.

Nothing here imports the production quadrature or solvers; each oracle is a
deliberately naive second implementation.
"""

from __future__ import annotations

import numpy as np
from scipy import integrate, optimize


def brute_gagliardo_1d(G, kernel_r, a=0.0, b=1.0, rtol=1e-10):
    """``1/4 int int k(|x-y|) (G(x)-G(y))^2 dx dy`` on ``(a, b)^2`` by adaptive quadrature.

    The square is split along the diagonal and the substitution
    ``y = x + r`` puts the singularity on the edge ``r = 0``.
    """
    def inner(x):
        f = lambda r: kernel_r(r) * (G(x + r) - G(x)) ** 2  # noqa: E731
        val, _ = integrate.quad(f, 0.0, b - x, limit=200, epsabs=0.0, epsrel=rtol)
        return val

    outer, _ = integrate.quad(inner, a, b, limit=200, epsabs=0.0, epsrel=rtol)
    return 0.5 * outer  # two triangles, 1/4 prefactor


def cutoff_kernel(strength, gamma, cutoff, d):
    """``strength r^-(d + 2 gamma)`` times a C^1 ramp: 1 below cutoff/2, 0 above cutoff."""
    def k(r):
        t = np.clip(2 * np.asarray(r, float) / cutoff - 1, 0.0, 1.0)
        return strength * np.asarray(r, float) ** (-(d + 2 * gamma)) * (1 - t * t * (3 - 2 * t))

    return k


def brute_gagliardo_2d(G, kernel_r, breaks=(), n_gauss=30, rtol=1e-10):
    """``1/4 int int k |G(x)-G(y)|^2`` on the unit square.

    With ``y = x + z`` the inner integral ``I(z)`` over the overlap
    rectangle uses an ``n_gauss^2`` Gauss rule (exact for polynomial ``G``
    of modest degree); ``z = r (cos a, sin a)`` over the upper half plane is
    integrated adaptively, so each unordered pair is counted once.
    ``G`` maps ``(n, 2)`` points to ``(n, k)`` values.
    """
    g, w = np.polynomial.legendre.leggauss(n_gauss)

    def overlap(z):
        lo = np.maximum(0.0, -z)
        hi = np.minimum(1.0, 1.0 - z)
        if np.any(hi <= lo):
            return 0.0
        xa = lo[0] + (hi[0] - lo[0]) * (g + 1) / 2
        xb = lo[1] + (hi[1] - lo[1]) * (g + 1) / 2
        X = np.stack(np.meshgrid(xa, xb, indexing="ij"), -1).reshape(-1, 2)
        W = np.outer(w, w).ravel() * np.prod(hi - lo) / 4
        diff = np.asarray(G(X + z)) - np.asarray(G(X))
        return float(W @ np.sum(diff.reshape(len(X), -1) ** 2, axis=1))

    def along(a):
        c, s = np.cos(a), np.sin(a)
        r_end = min(1.0 / abs(c) if abs(c) > 1e-15 else np.inf, 1.0 / s if s > 1e-15 else np.inf)
        pts = sorted({0.0, r_end, *[b for b in breaks if b < r_end]})
        f = lambda r: kernel_r(r) * r * overlap(r * np.array([c, s]))  # noqa: E731
        return sum(integrate.quad(f, lo, hi, limit=200, epsabs=0.0, epsrel=rtol)[0] for lo, hi in zip(pts[:-1], pts[1:]))

    brk = [0.0, np.pi / 4, np.pi / 2, 3 * np.pi / 4, np.pi]
    total = sum(integrate.quad(along, lo, hi, limit=200, epsabs=0.0, epsrel=rtol)[0] for lo, hi in zip(brk[:-1], brk[1:]))
    return 0.5 * total


def eta_grid_search(a, q, n=200001):
    """``sup_{0<eta<1} eta - a eta^q`` by grid search refined with golden section."""
    eta = np.linspace(0.0, 1.0, n)
    f = eta - a * eta**q
    k = int(np.argmax(f))
    lo, hi = eta[max(k - 1, 0)], eta[min(k + 1, n - 1)]
    if hi - lo <= 0:
        return float(f[k])
    res = optimize.minimize_scalar(lambda e: -(e - a * e**q), bounds=(lo, hi), method="bounded",
                                   options={"xatol": 1e-14})
    return float(max(-res.fun, f[k]))


def central_difference(fun, x, direction, h):
    """``(f(x + h d) - f(x - h d)) / 2h``."""
    return (fun(x + h * direction) - fun(x - h * direction)) / (2 * h)


def rotation(angle):
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s], [s, c]])


def random_rotation(rng, d=2):
    if d == 1:
        return np.ones((1, 1))
    return rotation(rng.uniform(0, 2 * np.pi))


def random_deformation_gradient(rng, d=2, spread=0.3):
    """Random matrix near the identity with positive determinant."""
    while True:
        F = np.eye(d) + spread * rng.normal(size=(d, d))
        if np.linalg.det(F) > 0.2:
            return F


def annulus_double_cover(inner: float = 0.5):
    """Smooth map of ``(0,2) x (0,1)`` winding twice around an annulus of area one.

    ``theta = 2 pi x1`` covers the circle twice and ``r^2 = inner^2 + (1 - x2)/pi``
    makes ``J = 1`` everywhere, so ``int J = 2`` while the image has measure 1.
    """

    def chi(x):
        r = np.sqrt(inner**2 + (1 - x[:, 1]) / np.pi)
        th = 2 * np.pi * x[:, 0]
        y = np.stack([r * np.cos(th), r * np.sin(th)], 1)
        dr = -1 / (2 * np.pi * r)
        F = np.empty((len(x), 2, 2))
        F[:, 0, 0] = -2 * np.pi * r * np.sin(th)
        F[:, 1, 0] = 2 * np.pi * r * np.cos(th)
        F[:, 0, 1] = np.cos(th) * dr
        F[:, 1, 1] = np.sin(th) * dr
        return y, F

    return chi


def affine_map(A, b=(0.0, 0.0)):
    A, b = np.asarray(A, float), np.asarray(b, float)
    return lambda x: (x @ A.T + b, np.broadcast_to(A, (len(x), 2, 2)))
