"""Material variants with closed-form parts, shared by the test modules."""

from dataclasses import dataclass

import numpy as np

from magnetoelastic.constitutive import DefaultMaterial, ThermalTerms

PLAIN = DefaultMaterial(g_m=0.0, g_z=0.0, heat_c=2.0)  # psi_th = -c theta (ln theta - 1)


@dataclass(frozen=True)
class PureVolumetric(DefaultMaterial):
    """phi = 0 and xi0(J) = (J - 1)^2 / 2."""

    def phi_terms(self, F, m, zeta):
        F = np.asarray(F, float)
        z = np.zeros(F.shape[:-2])
        return z, np.zeros_like(F), np.zeros_like(np.asarray(m, float)), z

    def xi0_terms(self, J):
        J = np.asarray(J, float)
        return 0.5 * (J - 1) ** 2, J - 1, np.ones_like(J)


@dataclass(frozen=True)
class ConvexInTemperature(DefaultMaterial):
    def thermal_terms(self, m, zeta, theta):
        theta = np.asarray(theta, float)
        z = np.zeros_like(theta)
        mz = np.zeros((*theta.shape, self.dim))
        return ThermalTerms(theta**2, mz, z, 2 * theta, 2 + z, mz, z)


@dataclass(frozen=True)
class QuadraticThermal(DefaultMaterial):
    """psi_th = -theta^2 / 2: entropy theta, finite floor s_min = 0."""

    def thermal_terms(self, m, zeta, theta):
        theta = np.asarray(theta, float)
        z = np.zeros_like(theta)
        mz = np.zeros((*theta.shape, self.dim))
        return ThermalTerms(-0.5 * theta**2, mz, z, -theta, z - 1, mz, z)

    def e_th(self, m, zeta, theta):
        return 0.5 * np.asarray(theta, float) ** 2

    def c_v(self, m, zeta, theta):
        return np.asarray(theta, float)


@dataclass(frozen=True)
class IndefiniteMobility(DefaultMaterial):
    def mobility_sp(self, m, zeta, theta):
        shape = np.shape(zeta)
        return np.broadcast_to(np.diag([1.0, -1.0]), (*shape, 2, 2)).copy()


@dataclass(frozen=True)
class LinearMagnet(DefaultMaterial):
    """Magnetic part replaced by ``a |m|^2 / 2`` so ``d_m psi = a m``."""

    def phi_terms(self, F, m, zeta):
        m = np.asarray(m, float)
        val, dF, _, dz = super().phi_terms(F, np.zeros_like(m), zeta)
        return val + 0.5 * self.mag_a * np.sum(m * m, axis=-1), dF, self.mag_a * m, dz

    def local_hessian(self, F, m, zeta, theta):
        H = super().local_hessian(F, np.zeros_like(np.asarray(m, float)), zeta, theta)
        d = np.shape(m)[-1]
        H[..., :d, :d] = self.mag_a * np.eye(d)
        return H
