"""Degree-m H-bubbles: profile angle, Frenet frame, z-axis rotations and the
two pieces (Dirichlet and H-volume) of the energy functional.

The degree-m bubble in polar coordinates is

    B_m(rho, theta) = ( sin(w_m) cos(m theta), sin(w_m) sin(m theta), cos(w_m) ),
    w_m(rho) = pi - 2 arctan(rho^m),

so sin w_m = 2 rho^m / (1 + rho^{2m}) and cos w_m = (rho^{2m} - 1)/(rho^{2m} + 1).
`energies` integrates (1/2)|grad u|^2 and (2/3) u . (u_x1 ^ u_x2) for any map
sampled on a polar grid.
"""

from dataclasses import dataclass, field

import numpy as np

from . import grids


@dataclass(frozen=True)
class PolarPoint:
    """Point (rho, theta) with rho >= 0 and theta reduced mod 2pi."""

    rho: float
    theta: float

    def __post_init__(self):
        if self.rho < 0:
            raise ValueError("rho must be nonnegative")
        object.__setattr__(self, "theta", float(self.theta) % (2.0 * np.pi))


@dataclass(frozen=True)
class Rotation:
    """Rotation by gamma around the z-axis."""

    gamma: float

    @property
    def matrix(self):
        c, s = np.cos(self.gamma), np.sin(self.gamma)
        return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])

    def apply(self, v):
        v = np.asarray(v, dtype=float)
        return v @ self.matrix.T


# generator of the z-rotations: matrix(gamma) = expm(gamma * JZ)
JZ = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 0.0]])


def rotate_z(rotation: Rotation, v):
    """Apply the z-axis rotation; length preserving, z-component unchanged."""
    return rotation.apply(v)


@dataclass(frozen=True)
class BubbleProfile:
    """Degree-m bubble (m >= 1) with its profile angle and frame evaluators."""

    m: int = 1

    def __post_init__(self):
        if self.m < 1:
            raise ValueError("degree m must be a positive integer")

    # -- profile angle -------------------------------------------------------

    def angle(self, rho):
        """w_m(rho) = pi - 2 arctan(rho^m), decreasing from pi to 0."""
        rho = np.asarray(rho, dtype=float)
        return np.pi - 2.0 * np.arctan(rho**self.m)

    def angle_derivative(self, rho):
        """dw_m/drho = -2 m rho^(m-1) / (1 + rho^(2m)).

        The rho -> 0 limit is -2 for m = 1 and 0 for m >= 2; the formula
        already realizes both without special casing.
        """
        rho = np.asarray(rho, dtype=float)
        m = self.m
        return -2.0 * m * rho ** (m - 1) / (1.0 + rho ** (2 * m))

    def sin_cos_angle(self, rho):
        """(sin w_m, cos w_m) in rational form, stable for all rho."""
        rho = np.asarray(rho, dtype=float)
        u = rho ** (2 * self.m)
        return 2.0 * rho**self.m / (1.0 + u), (u - 1.0) / (u + 1.0)

    # -- map and frame -------------------------------------------------------

    def value(self, rho, theta):
        """Unit 3-vector B_m(rho, theta); third component (rho^2m-1)/(rho^2m+1).

        rho = 0 is exact: (0, 0, -1).  Arrays broadcast; the 3-vector lives on
        the last axis.
        """
        rho = np.asarray(rho, dtype=float)
        theta = np.asarray(theta, dtype=float)
        sw, cw = self.sin_cos_angle(rho)
        mth = self.m * theta
        return np.stack(
            np.broadcast_arrays(sw * np.cos(mth), sw * np.sin(mth), cw), axis=-1
        )

    def frame(self, rho, theta):
        """Frenet pair (E1, E2); (E1, E2, B_m) is orthonormal at every point."""
        rho = np.asarray(rho, dtype=float)
        theta = np.asarray(theta, dtype=float)
        sw, cw = self.sin_cos_angle(rho)
        mth = self.m * theta
        e1 = np.stack(
            np.broadcast_arrays(cw * np.cos(mth), cw * np.sin(mth), -sw), axis=-1
        )
        zero = np.zeros(np.broadcast_shapes(rho.shape, theta.shape))
        e2 = np.stack(np.broadcast_arrays(-np.sin(mth), np.cos(mth), zero), axis=-1)
        return e1, e2

    def value_at(self, p: PolarPoint):
        return self.value(p.rho, p.theta)

    def frame_at(self, p: PolarPoint):
        return self.frame(p.rho, p.theta)


def profile_angle(profile: BubbleProfile, rho):
    return profile.angle(rho)


def eval_bubble(profile: BubbleProfile, p: PolarPoint):
    return profile.value_at(p)


def eval_frame(profile: BubbleProfile, p: PolarPoint):
    return profile.frame_at(p)


# -- sampled maps and energies ----------------------------------------------


@dataclass
class SampledMap:
    """R^3-valued map sampled on a polar grid (rho strictly increasing, theta
    uniform on [0, 2pi)); values indexed [i_rho, j_theta, xyz]."""

    rho: np.ndarray
    theta: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        self.rho = np.asarray(self.rho, dtype=float)
        self.theta = np.asarray(self.theta, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if np.any(np.diff(self.rho) <= 0):
            raise ValueError("rho nodes must be strictly increasing")
        dth = np.diff(self.theta)
        if len(self.theta) > 1 and not np.allclose(dth, dth[0]):
            raise ValueError("theta nodes must be uniform")
        if self.values.shape != (len(self.rho), len(self.theta), 3):
            raise ValueError("values must have shape (n_rho, n_theta, 3)")

    @classmethod
    def from_function(cls, fn, rho, theta):
        R, TH = np.meshgrid(rho, theta, indexing="ij")
        return cls(rho, theta, np.asarray(fn(R, TH), dtype=float))

    @classmethod
    def of_bubble(cls, profile: BubbleProfile, rho, theta):
        R, TH = np.meshgrid(rho, theta, indexing="ij")
        return cls(rho, theta, profile.value(R, TH))


def _polar_derivatives(m: SampledMap):
    # df/drho by centered differences on the (possibly log) grid, df/dtheta
    # spectrally (values are periodic in theta).
    dr = np.gradient(m.values, m.rho, axis=0)
    n = len(m.theta)
    coef = np.fft.fft(m.values, axis=1)
    k = np.fft.fftfreq(n, d=1.0 / n)
    # drop the unmatched Nyquist mode for even n; it carries no derivative info
    if n % 2 == 0:
        k[n // 2] = 0.0
    dth = np.real(np.fft.ifft(1j * k[None, :, None] * coef, axis=1))
    return dr, dth


def energies(m: SampledMap):
    """(dirichlet, volume, total) by composite quadrature on the grid.

    dirichlet = 1/2 int |grad u|^2 = pi-weighted integral of
    (|u_r|^2 + |u_theta|^2 / r^2) r dr dtheta / 2, and
    volume = 2/3 int u . (u_x1 ^ u_x2) = 2/3 int u . (u_r ^ u_theta) dr dtheta.
    """
    dr, dth = _polar_derivatives(m)
    r = m.rho[:, None]
    grad2 = np.sum(dr**2, axis=-1) + np.sum(dth**2, axis=-1) / r**2
    jac = np.einsum("ijk,ijk->ij", m.values, np.cross(dr, dth))
    dtheta = 2.0 * np.pi / len(m.theta)
    dirichlet = 0.5 * np.trapezoid(np.sum(grad2 * r, axis=1) * dtheta, x=m.rho)
    volume = (2.0 / 3.0) * np.trapezoid(np.sum(jac, axis=1) * dtheta, x=m.rho)
    return dirichlet, volume, dirichlet + volume


def hsystem_residual(m: SampledMap):
    """Pointwise residual of Delta u - 2 u_x1 ^ u_x2 on interior nodes.

    Returns (residual array on [2:-2, :], sup norm); the two boundary rings
    are dropped because the nested gradient stencils are one-sided there.
    Second-order accurate on smooth maps, so the stationary bubble residual
    decays like h^2.
    """
    dr, dth = _polar_derivatives(m)
    r = m.rho[:, None, None]
    drr = np.gradient(dr, m.rho, axis=0)
    n = len(m.theta)
    coef = np.fft.fft(m.values, axis=1)
    k = np.fft.fftfreq(n, d=1.0 / n)
    dthth = np.real(np.fft.ifft(-(k[None, :, None] ** 2) * coef, axis=1))
    lap = drr + dr / r + dthth / r**2
    wedge = np.cross(dr, dth) / r
    res = (lap - 2.0 * wedge)[2:-2]
    return res, float(np.max(np.linalg.norm(res, axis=-1)))


# -- closed-form radial integrals used by the modulation dynamics ------------


def profile_cubed_integral(rtol=1e-10):
    """int_0^inf rho^3 w_rho^3 drho for the degree-1 profile (equals -2)."""
    from scipy.integrate import quad

    val, _ = quad(lambda r: r**3 * (-2.0 / (1.0 + r**2)) ** 3, 0.0, np.inf,
                  epsrel=rtol, limit=200)
    return val


def profile_cos_integral(rtol=1e-10):
    """int_0^inf rho w_rho^2 cos(w) drho for the degree-1 profile (equals 0)."""
    from scipy.integrate import quad

    val, _ = quad(
        lambda r: r * (2.0 / (1.0 + r**2)) ** 2 * ((r**2 - 1.0) / (r**2 + 1.0)),
        0.0, np.inf, epsrel=rtol, limit=200,
    )
    return val
