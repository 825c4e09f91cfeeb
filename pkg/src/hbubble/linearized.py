"""Linearized H-system operator around the degree-m bubble.

The frame decomposition phi = phi1 E1 + phi2 E2 + phi3 B decouples the
linearization: the complex combination phi1 + i phi2 evolves under the
harmonic-map-type block and phi3 under the Liouville-type block.  In the
angular mode e^{i k theta} both blocks reduce to radial operators

    L g = g'' + g'/rho + c0(rho) g,

whose zeroth-order coefficients are rational in u = rho^(2m):

    perp block:  c0 = -[(k-m)^2 + (2k^2-6m^2) u + (k+m)^2 u^2] / (rho^2 (1+u)^2)
    B block:     c0 = -[k^2 + (2k^2-8m^2) u + k^2 u^2] / (rho^2 (1+u)^2)

(The first form absorbs the coupling between the two perp components; writing
the numerators this way avoids the catastrophic 1/rho^2 cancellation at the
origin and makes the degree-1 identity "B block at |k|=1 == perp block at
k=0" hold bitwise.)

The module hosts the full catalog of 4m+5 bounded kernels, the closed-form
radial solutions of the mode ODE systems (all four angular-mode cases), and
analytic evaluators for the first-order part of the linearization in its
frame, mode-split and special-shape forms.
"""

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import sympy as sp

from . import grids
from .bubble import BubbleProfile

K_MAX_DEFAULT = 8


class GridError(ValueError):
    pass


# ---------------------------------------------------------------------------
# fields
# ---------------------------------------------------------------------------


@dataclass
class FrameField:
    """Coefficients along (E1, E2, B) on a polar grid; arrays (n_rho, n_theta)."""

    rho: np.ndarray
    theta: np.ndarray
    phi1: np.ndarray
    phi2: np.ndarray
    phi3: np.ndarray

    def __post_init__(self):
        self.rho = np.asarray(self.rho, dtype=float)
        self.theta = np.asarray(self.theta, dtype=float)
        shape = (len(self.rho), len(self.theta))
        for name in ("phi1", "phi2", "phi3"):
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.shape != shape:
                raise GridError(f"{name} must have shape {shape}")
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} contains nonfinite values")
            setattr(self, name, arr)

    @classmethod
    def zeros(cls, rho, theta):
        z = np.zeros((len(rho), len(theta)))
        return cls(rho, theta, z, z.copy(), z.copy())

    def to_vector(self, profile: BubbleProfile):
        """Resolve the frame coefficients into an R^3-valued sampled map."""
        R, TH = np.meshgrid(self.rho, self.theta, indexing="ij")
        e1, e2 = profile.frame(R, TH)
        w = profile.value(R, TH)
        return self.phi1[..., None] * e1 + self.phi2[..., None] * e2 + self.phi3[..., None] * w


@dataclass
class ModeScalar:
    """Complex radial profile at a fixed Fourier mode k."""

    k: int
    rho: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        self.rho = np.asarray(self.rho, dtype=float)
        self.values = np.asarray(self.values, dtype=complex)
        if np.any(np.diff(self.rho) <= 0):
            raise GridError("rho grid must be strictly increasing")
        if self.values.shape != self.rho.shape:
            raise GridError("values must match the radial grid")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("values contain nonfinite entries")


# ---------------------------------------------------------------------------
# mode coefficients and operator application
# ---------------------------------------------------------------------------


def mode_poly(m: int, k: int, direction: str):
    """Integer coefficients (q0, q1, q2) of the zeroth-order numerator."""
    if direction == "perp":
        return ((k - m) ** 2, 2 * k * k - 6 * m * m, (k + m) ** 2)
    if direction == "w":
        return (k * k, 2 * k * k - 8 * m * m, k * k)
    raise ValueError("direction must be 'perp' or 'w'")


def mode_coefficient(m: int, k: int, direction: str, rho):
    """c0(rho) of the radial mode operator g'' + g'/rho + c0 g."""
    rho = np.asarray(rho, dtype=float)
    q0, q1, q2 = mode_poly(m, k, direction)
    u = rho ** (2 * m)
    return -(q0 + q1 * u + q2 * u * u) / (rho**2 * (1.0 + u) ** 2)


def mode_operator(k: int, direction: str, u: ModeScalar, m: int = 1) -> ModeScalar:
    """Apply the degree-m radial mode operator with second-order stencils.

    direction 'w' is the Liouville-type block (mode k in the bubble
    direction); 'perp' is the harmonic-map-type block.  For m = 1 the 'w'
    operator at k = +-1 and the 'perp' operator at k = 0 coincide exactly at
    the coefficient level.
    """
    if u.k != k:
        raise GridError("mode mismatch between operator and scalar")
    if len(u.rho) < 5:
        raise GridError("need at least 5 radial nodes")
    s = np.log(u.rho)
    if not np.allclose(np.diff(s), s[1] - s[0], rtol=1e-8):
        raise GridError("mode_operator expects a log-uniform radial grid")
    h = s[1] - s[0]
    lap = grids.d2_ds(u.values, h) / u.rho**2
    c0 = mode_coefficient(m, k, direction, u.rho)
    return ModeScalar(k, u.rho, lap + c0 * u.values)


def apply_linearized(m: int, f: FrameField, k_max: int = K_MAX_DEFAULT) -> FrameField:
    """Frame coefficients of the linearized operator applied to f.

    Angular derivatives are exact per mode (the field is projected onto
    |k| <= k_max first); radial derivatives use centered second-order
    stencils in log(rho).
    """
    if len(f.rho) < 5:
        raise GridError("need at least 5 radial nodes")
    s = np.log(f.rho)
    h = s[1] - s[0]
    if not np.allclose(np.diff(s), h, rtol=1e-8):
        raise GridError("apply_linearized expects a log-uniform radial grid")

    perp = f.phi1 + 1j * f.phi2
    perp_modes = grids.fourier_modes(perp, k_max=k_max, axis=1)
    w_modes = grids.fourier_modes(f.phi3.astype(complex), k_max=k_max, axis=1)

    out_perp = {}
    out_w = {}
    rho2 = f.rho**2
    for k in range(-k_max, k_max + 1):
        g = perp_modes[k]
        out_perp[k] = grids.d2_ds(g, h) / rho2 + mode_coefficient(m, k, "perp", f.rho) * g
        gw = w_modes[k]
        out_w[k] = grids.d2_ds(gw, h) / rho2 + mode_coefficient(m, k, "w", f.rho) * gw

    perp_out = grids.synthesize_modes(out_perp, f.theta, axis=1)
    w_out = grids.synthesize_modes(out_w, f.theta, axis=1)
    return FrameField(f.rho, f.theta, perp_out.real, perp_out.imag, w_out.real)


def residual_sup(f: FrameField, m: int, k_max: int = K_MAX_DEFAULT) -> float:
    """Sup over interior nodes of |apply_linearized(m, f)| (all components)."""
    out = apply_linearized(m, f, k_max=k_max)
    mag = np.sqrt(out.phi1**2 + out.phi2**2 + out.phi3**2)
    return float(np.max(mag[2:-2, :]))


# ---------------------------------------------------------------------------
# kernel catalog
# ---------------------------------------------------------------------------


@dataclass
class KernelEntry:
    """One of the 4m+5 bounded kernel families, realized on a grid."""

    label: str
    field: FrameField
    decay_class: str  # 'order-one' (nonzero limit at infinity) or 'decaying'
    mode: int  # angular mode of the frame coefficients


def kernel_catalog(m: int, rho=None, theta=None, k_max: int = K_MAX_DEFAULT):
    """All 4m+5 bounded kernels of the degree-m linearization.

    Three families along the bubble direction, 2(m+1) perp families with an
    r^(m-k) prefactor (k = 0..m) and 2m perp families with an r^(m+l)
    prefactor (l = 1..m).
    """
    if m < 1:
        raise ValueError("m must be >= 1")
    if rho is None:
        rho, _, _ = grids.log_radial_grid()
    if theta is None:
        theta = grids.theta_grid()
    rho = np.asarray(rho, dtype=float)
    theta = np.asarray(theta, dtype=float)
    R, TH = np.meshgrid(rho, theta, indexing="ij")
    u = R ** (2 * m)
    zero = np.zeros_like(R)

    entries = []

    def add(label, phi1, phi2, phi3, decay, mode):
        entries.append(
            KernelEntry(label, FrameField(rho, theta, phi1, phi2, phi3), decay, mode)
        )

    # bubble-direction families
    add("b-radial", zero, zero, (u - 1.0) / (u + 1.0), "order-one", 0)
    g = R**m / (1.0 + u)
    add("b-cos", zero, zero, g * np.cos(m * TH), "decaying", m)
    add("b-sin", zero, zero, g * np.sin(m * TH), "decaying", m)

    # perp families with r^(m-k), k = 0..m
    for k in range(0, m + 1):
        gk = R ** (m - k) / (1.0 + u)
        ck, sk = np.cos(k * TH), np.sin(k * TH)
        add(f"perp-minus{k}-a", gk * ck, gk * sk, zero, "decaying", k)
        add(f"perp-minus{k}-b", gk * sk, -gk * ck, zero, "decaying", k)

    # perp families with r^(m+l), l = 1..m
    for l in range(1, m + 1):
        gl = R ** (m + l) / (1.0 + u)
        cl, sl = np.cos(l * TH), np.sin(l * TH)
        decay = "order-one" if l == m else "decaying"
        add(f"perp-plus{l}-a", gl * cl, -gl * sl, zero, decay, -l)
        add(f"perp-plus{l}-b", gl * sl, gl * cl, zero, decay, -l)

    assert len(entries) == 4 * m + 5
    return entries


# ---------------------------------------------------------------------------
# closed-form radial solutions of the mode ODE systems (four cases)
# ---------------------------------------------------------------------------


@dataclass
class ClosedFormSolution:
    """One displayed radial solution of the per-mode ODE system.

    `branch` is 'w' for the bubble-direction equation or the signed angular
    mode q (the two perp components combine into e^{i q theta} with q = +-k).
    `expr` is a sympy expression in `r`.
    """

    case: int
    family: str
    branch: object
    expr: sp.Expr
    bounded: bool

    def ode_coefficient(self, m: int, k: int):
        if self.branch == "w":
            return ("w", k)
        return ("perp", int(self.branch))

    def residual(self, m: int, k: int, radii, dps: int = 40):
        """|u'' + u'/r + c0 u| / scale at the given radii, via mpmath with
        analytic derivatives; independent of any grid."""
        import mpmath

        mpmath.mp.dps = dps
        r = _R_SYMBOL
        d1 = sp.diff(self.expr, r)
        d2 = sp.diff(d1, r)
        direction, mode = self.ode_coefficient(m, k)
        q0, q1, q2 = mode_poly(m, mode, direction)
        fu = sp.lambdify(r, self.expr, "mpmath")
        fd1 = sp.lambdify(r, d1, "mpmath")
        fd2 = sp.lambdify(r, d2, "mpmath")
        out = []
        for rv in radii:
            rv = mpmath.mpf(rv)
            u = rv ** (2 * m)
            c0 = -(q0 + q1 * u + q2 * u * u) / (rv**2 * (1 + u) ** 2)
            t1, t2, t3 = fd2(rv), fd1(rv) / rv, c0 * fu(rv)
            scale = 1 + abs(t1) + abs(t2) + abs(t3)
            out.append(float(abs(t1 + t2 + t3) / scale))
        return np.array(out)

    def __call__(self, radii):
        fn = sp.lambdify(_R_SYMBOL, self.expr, "numpy")
        return fn(np.asarray(radii, dtype=float))


_R_SYMBOL = sp.symbols("r", positive=True)


@lru_cache(maxsize=64)
def closed_form_mode_solutions(m: int, k: int):
    """Displayed radial solutions for angular mode k around the degree-m bubble.

    Routing: k = 0 -> case 1, k = 1 -> case 2 (this covers k = 1 = m when
    m = 1), k = m -> case 3, otherwise case 4.  For k > m no entry is flagged
    bounded.
    """
    if m < 1 or k < 0:
        raise ValueError("need m >= 1 and k >= 0")
    r = _R_SYMBOL
    u = r ** (2 * m)
    sols = []

    def add(case, family, branch, expr, bounded):
        sols.append(ClosedFormSolution(case, family, branch, sp.together(expr), bounded))

    if k == 0:
        s1 = r**m / (1 + u)
        s2 = (2 * r**m * sp.log(u) + r ** (3 * m) - r ** (-m)) / (1 + u)
        e1 = (u - 1) / (1 + u)
        e2 = r**m * ((r**m - r ** (-m)) * sp.log(u) - 4 * r ** (-m)) / (1 + u)
        add(1, "a", 0, s1, True)
        add(1, "a", 0, s2, False)
        add(1, "b", 0, s1, True)
        add(1, "b", 0, s2, False)
        add(1, "e", "w", e1, True)
        add(1, "e", "w", e2, False)
    elif k == 1:
        a1 = r ** (m - 1) / (2 * (1 + u))
        a2 = r * (
            (-1 - m) * r ** (-m) + 2 * m**2 * r**m + m * r ** (3 * m)
            - 2 * r**m - r ** (3 * m)
        ) / (2 * (1 + u))
        c1 = r ** (m + 1) / (2 * (1 + u))
        c2 = (
            ((-1 + m) * r ** (-m) + 2 * m**2 * r**m - m * r ** (3 * m)
             - 2 * r**m - r ** (3 * m)) / r
        ) / (2 * (1 + u))
        w1 = ((1 - m) * r ** (-m) + (1 + m) * r**m) * r ** (m - 1) / (1 + u)
        w2 = ((1 + m) * r ** (-m) + (1 - m) * r**m) * r ** (m + 1) / (1 + u)
        deg = m == 1  # the log-free partners degenerate to bounded multiples
        add(2, "a", +1, a1, True)
        add(2, "a", +1, a2, deg)
        add(2, "a", -1, c1, True)
        add(2, "a", -1, c2, deg)
        add(2, "e", "w", w1, m == 1)
        add(2, "e", "w", w2, m == 1)
    elif k == m:
        m1 = 1 / (2 * (1 + u))
        m2 = r**m * (r ** (3 * m) + 2 * r ** (-m) * sp.log(u) + 4 * r**m) / (2 * (1 + u))
        n1 = u / (2 * (1 + u))
        n2 = r ** (-m) * (-2 * r ** (3 * m) * sp.log(u) + 4 * r**m + r ** (-m)) / (2 * (1 + u))
        wm1 = r**m / (1 + u)
        wm2 = (2 * r**m * sp.log(u) + r ** (3 * m) - r ** (-m)) / (1 + u)
        add(3, "a", +k, m1, True)
        add(3, "a", +k, m2, False)
        add(3, "a", -k, n1, True)
        add(3, "a", -k, n2, False)
        add(3, "e", "w", wm1, True)
        add(3, "e", "w", wm2, False)
    else:
        kk = sp.Integer(k)
        p1 = r ** (m - k) / (2 * (1 + u))
        p2 = r**k * (
            kk * (kk + m) / 2 * r ** (-m)
            + (kk - m) * (kk * r ** (3 * m) / 2 + (kk + m) * r**m)
        ) / (2 * (1 + u))
        p3 = r ** (m + k) / (2 * (1 + u))
        p4 = r ** (-k) * (
            kk * (kk - m) / 2 * r ** (-m)
            + (kk + m) * (kk * r ** (3 * m) / 2 + (kk - m) * r**m)
        ) / (2 * (1 + u))
        b1 = r ** (-m - k) * (
            1 + (kk + m) * u * (sp.Rational(2, 1) / kk + u / (kk - m))
        ) / (1 + u)
        b3 = r ** (-m - k) * r ** (2 * k) * (
            kk * (kk + m) + 2 * (kk**2 - m**2) * u + kk * (kk - m) * u**2
        ) / (kk * (kk + m) * (1 + u))
        v1 = ((kk - m) * r ** (-m) + (kk + m) * r**m) * r ** (m - k) / (1 + u)
        v2 = ((kk + m) * r ** (-m) + (kk - m) * r**m) * r ** (m + k) / (1 + u)
        add(4, "a", +k, p1, k < m)
        add(4, "a", +k, p2, False)
        add(4, "a", -k, p3, k < m)
        add(4, "a", -k, p4, False)
        add(4, "b", -k, b1, False)
        add(4, "b", +k, b3, False)
        add(4, "e", "w", v1, False)
        add(4, "e", "w", v2, False)
    return tuple(sols)


# ---------------------------------------------------------------------------
# analytic forms of the first-order part of the linearization (degree 1)
# ---------------------------------------------------------------------------
#
# tilde_L[Phi] = -2 U_x1 ^ Phi_x2 - 2 Phi_x1 ^ U_x2 around U = Q_gamma B(x/lam),
# evaluated pointwise from analytic field data.  Three equivalent routes are
# provided (direct wedge, frame form, mode-split form) plus the closed forms
# for the two special field shapes used by the correction analysis.


def _frame_at(lam, gamma, x):
    from .bubble import Rotation

    prof = BubbleProfile(1)
    r = float(np.hypot(x[0], x[1]))
    th = float(np.arctan2(x[1], x[0]))
    rho = r / lam
    Q = Rotation(gamma).matrix
    e1, e2 = prof.frame(rho, th)
    w = prof.value(rho, th)
    return rho, r, th, Q, Q @ e1, Q @ e2, Q @ w


def _w_derivs(rho, th):
    prof = BubbleProfile(1)
    e1, e2 = prof.frame(rho, th)
    w_rho = prof.angle_derivative(rho)
    sinw, _ = prof.sin_cos_angle(rho)
    return w_rho * e1, sinw * e2  # dB/drho, dB/dtheta


def tilde_LU_wedge(lam, gamma, x, dphi_x1, dphi_x2):
    """Direct evaluation of -2 U_x1 ^ Phi_x2 - 2 Phi_x1 ^ U_x2.

    dphi_x1/dphi_x2 are the Cartesian derivatives of the field at x (R^3
    vectors, complex entries allowed componentwise-real pairs not needed
    here: pass real arrays).
    """
    rho, r, th, Q, _, _, _ = _frame_at(lam, gamma, x)
    dB_rho, dB_th = _w_derivs(rho, th)
    c, s = np.cos(th), np.sin(th)
    # chain rule through y = x/lam, polar in y
    U_x1 = Q @ (c * dB_rho - s / rho * dB_th) / lam
    U_x2 = Q @ (s * dB_rho + c / rho * dB_th) / lam
    return -2.0 * np.cross(U_x1, dphi_x2) - 2.0 * np.cross(dphi_x1, U_x2)


def tilde_LU_frame(lam, gamma, x, dphi_r, dphi_th):
    """Frame form: projections of the polar derivatives of the field onto the
    rotated frame weighted by w_rho."""
    rho, r, th, Q, qe1, qe2, qw = _frame_at(lam, gamma, x)
    w_rho = BubbleProfile(1).angle_derivative(rho)
    t1 = -(2.0 / lam) * w_rho * np.dot(dphi_r, qw) * qe1
    t2 = (2.0 / (lam * r)) * w_rho * np.dot(dphi_th, qw) * qe2
    t3 = (2.0 / (lam * r)) * w_rho * (
        r * np.dot(dphi_r, qe1) - np.dot(dphi_th, qe2)
    ) * qw
    return t1 + t2 + t3


def _dz(fn, x, h=None):
    # div f + i curl f = (d_x1 - i d_x2)(f1 + i f2), centered differences
    if h is None:
        h = 1e-6 * max(1.0, np.hypot(*x))
    fx1 = (fn([x[0] + h, x[1]]) - fn([x[0] - h, x[1]])) / (2 * h)
    fx2 = (fn([x[0], x[1] + h]) - fn([x[0], x[1] - h])) / (2 * h)
    return fx1, fx2


def tilde_LU_modes(lam, gamma, x, div_curl, grad3):
    """Mode-split form (parts 0, 1, 2) from div/curl data.

    div_curl = (div(e^{-i gamma} phi) + i curl(e^{-i gamma} phi),
                div(e^{+i gamma} conj phi) + i curl(e^{+i gamma} conj phi))
    evaluated at x for the complex first two components phi = Phi1 + i Phi2;
    grad3 = (d_x1 Phi3, d_x2 Phi3).
    """
    rho, r, th, Q, qe1, qe2, qw = _frame_at(lam, gamma, x)
    prof = BubbleProfile(1)
    w_rho = prof.angle_derivative(rho)
    sinw, cosw = prof.sin_cos_angle(rho)
    dc_minus, dc_plus = div_curl
    d3x1, d3x2 = grad3
    c, s = np.cos(th), np.sin(th)

    part0 = (1.0 / lam) * rho * w_rho**2 * (
        dc_minus.real * qe1 + dc_minus.imag * qe2
    ) + (1.0 / lam) * w_rho**2 * dc_minus.real * qw

    a = d3x1 * c + d3x2 * s
    b = d3x1 * s - d3x2 * c
    part1 = (
        -(2.0 / lam) * w_rho * cosw * (a * qe1 + b * qe2)
        - (2.0 / lam) * w_rho * sinw * a * qw
    )

    c2, s2 = np.cos(2 * th), np.sin(2 * th)
    part2 = (1.0 / lam) * rho * w_rho**2 * (
        (dc_plus.real * c2 - dc_plus.imag * s2) * qe1
        + (dc_plus.real * s2 + dc_plus.imag * c2) * qe2
    ) + (2.0 / lam) * w_rho * (
        -(rho**2 * w_rho / 2.0) * dc_plus.real * c2
        + (rho**2 * w_rho / 2.0) * dc_plus.imag * s2
    ) * qw
    return part0 + part1 + part2


def tilde_LU_complex_shape(lam, gamma, x, phi, dphi_dr):
    """Closed form for the shape Phi = (Re(phi(r) e^{i theta}), Im(...), 0)."""
    rho, r, th, Q, qe1, qe2, qw = _frame_at(lam, gamma, x)
    prof = BubbleProfile(1)
    w_rho = prof.angle_derivative(rho)
    _, cosw = prof.sin_cos_angle(rho)
    eg = np.exp(-1j * gamma)
    t = (2.0 / lam) * rho * w_rho**2 * (
        (eg * dphi_dr).real * qe1 + (eg * phi).imag / r * qe2
    )
    t = t + (2.0 / lam) * w_rho * (
        (eg * dphi_dr).real * cosw - (eg * phi).real / r
    ) * qw
    return t


def tilde_LU_w_shape(lam, gamma, x, dpsi_dr):
    """Closed form for the shape Psi = (0, 0, psi(r)) with radial psi."""
    rho, r, th, Q, qe1, qe2, qw = _frame_at(lam, gamma, x)
    prof = BubbleProfile(1)
    w_rho = prof.angle_derivative(rho)
    _, cosw = prof.sin_cos_angle(rho)
    return (
        -(2.0 / lam) * w_rho * cosw * dpsi_dr * qe1
        + (2.0 / lam) * rho * w_rho**2 * dpsi_dr * qw
    )
