"""Corotational reduction of the H-system heat flow.

For maps u = psi(r,t) (e^{i theta} sin phi(r,t), cos phi(r,t)) the flow
reduces to two coupled 1D equations,

    phi_t = phi_rr + phi_r/r + (-sin phi + 2 r phi_r) psi_r/(r psi)
            - sin(2 phi)/(2 r^2),
    psi_t = psi_rr + psi_r/r - 2 psi^2 phi_r sin(phi)/r
            + (-1 + cos(2 phi) - 2 r^2 phi_r^2) psi/(2 r^2),

with (pi - 2 arctan r, 1) stationary.  The solver works in v = phi - pi
(v -> 0 at the origin), treats the full linear part v_rr + v_r/r - v/r^2
implicitly -- the zeroth-order piece is as stiff as the diffusion near r = 0
-- and steps the cubic remainders explicitly with dt tied to the extracted
bubble scale squared.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_banded
from scipy.optimize import least_squares


@dataclass
class CorotationalState:
    r: np.ndarray
    phi: np.ndarray
    psi: np.ndarray
    t: float = 0.0

    def v(self):
        return self.phi - np.pi


@dataclass
class BlowupFit:
    T_hat: float
    kappa_hat: float
    residual: float
    linear_residual: float = np.nan
    linear_T_hat: float = np.nan
    sqrt_residual: float = np.nan  # diagnostic: self-similar sqrt(T-t) model

    @property
    def prefers_type2(self):
        return self.residual <= self.linear_residual


def init_near_bubble(lambda0, perturbation=None, r_min_factor=1e-4,
                     r_max=4.0, n=480):
    """phi = pi - 2 arctan(r/lambda0) (+ optional perturbation pair), psi = 1.

    The perturbation is a pair of callables (dphi, dpsi) of r; anything that
    violates phi(0+) -> pi, psi > 0 or the pinned outer values is rejected.
    """
    if not 0 < lambda0 < 0.5 * r_max:
        raise ValueError("need 0 < lambda0 << r_max")
    r = np.geomspace(r_min_factor * lambda0, r_max, n)
    phi = np.pi - 2.0 * np.arctan(r / lambda0)
    psi = np.ones_like(r)
    if perturbation is not None:
        dphi, dpsi = perturbation
        phi = phi + dphi(r)
        psi = psi + dpsi(r)
        if abs(phi[0] - np.pi) > 0.05 or abs(psi[-1] - 1.0) > 1e-12 \
                or np.any(psi <= 0):
            raise ValueError("perturbation violates the boundary invariants")
    return CorotationalState(r, phi, psi, 0.0)


class FlowRun:
    """Owns a corotational trajectory; independent runs may go in parallel."""

    def __init__(self, state: CorotationalState, dt_max=2e-4, dt_factor=0.25):
        self.state = state
        self.dt_max = dt_max
        self.dt_factor = dt_factor
        r = state.r
        self.s_h = np.log(r[1] / r[0])
        if not np.allclose(np.diff(np.log(r)), self.s_h, rtol=1e-8):
            raise ValueError("flow grid must be log-uniform")
        # the scale pins the core boundary value; without a crossing the
        # core value is simply held (covers the phi == pi fixed point)
        self.lambda_hat = extract_scale(state, missing_ok=True)
        self.phi_core = state.phi[0]
        self.phi_outer = state.phi[-1]
        self.history = []

    # -- banded implicit operators -------------------------------------------

    def _banded(self, dt, mode):
        r = self.state.r
        n = len(r)
        inv = dt / (self.s_h**2 * r**2)
        diag = 1.0 + 2.0 * inv
        lower = np.zeros(n)
        upper = np.zeros(n)
        lower[:-1] = -inv[1:]
        upper[1:] = -inv[:-1]
        if mode == "v":
            diag = diag + dt / r**2  # the -v/r^2 stiff zeroth-order term
            # Dirichlet rows top and bottom
            diag[0] = 1.0
            upper[1] = 0.0
            diag[-1] = 1.0
            lower[-2] = 0.0
        else:
            # zero flux at the origin, Dirichlet at the top
            upper[1] = -2.0 * inv[0]
            diag[-1] = 1.0
            lower[-2] = 0.0
        ab = np.zeros((3, n))
        ab[0], ab[1], ab[2] = upper, diag, lower
        return ab

    def _explicit(self, v, psi):
        r = self.state.r
        h = self.s_h
        dv = _d_ds(v, h) / r
        dpsi = _d_ds(psi, h) / r
        sinv = np.sin(v)
        # cubic remainder of -sin(2v)/(2 r^2) after extracting -v/r^2
        rem = -(np.sin(2.0 * v) - 2.0 * v) / (2.0 * r**2)
        fv = (sinv + 2.0 * r * dv) * dpsi / (r * psi) + rem
        fpsi = 2.0 * psi**2 * dv * sinv / r \
            + (-1.0 + np.cos(2.0 * v) - 2.0 * r**2 * dv**2) * psi / (2.0 * r**2)
        return fv, fpsi

    def step(self, dt=None):
        """One semi-implicit step; returns the updated state.

        NaN/oscillation breakdown raises BlowupReached with the last valid
        state attached.
        """
        st = self.state
        if dt is None:
            lam = self.lambda_hat if self.lambda_hat is not None else 1.0
            dt = min(self.dt_max, self.dt_factor * lam**2)
        v = st.phi - np.pi
        fv, fpsi = self._explicit(v, st.psi)
        rhs_v = v + dt * fv
        rhs_p = st.psi + dt * fpsi
        # pinned core value follows the extracted scale
        if self.lambda_hat is not None:
            rhs_v[0] = -2.0 * np.arctan(st.r[0] / self.lambda_hat)
        else:
            rhs_v[0] = self.phi_core - np.pi
        rhs_v[-1] = self.phi_outer - np.pi
        rhs_p[-1] = st.psi[-1]
        v_new = solve_banded((1, 1), self._banded(dt, "v"), rhs_v)
        p_new = solve_banded((1, 1), self._banded(dt, "psi"), rhs_p)
        if not (np.all(np.isfinite(v_new)) and np.all(np.isfinite(p_new))):
            raise BlowupReached(self.state)
        self.state = CorotationalState(st.r, v_new + np.pi, p_new, st.t + dt)
        lam = extract_scale(self.state, missing_ok=True)
        if lam is not None:
            self.lambda_hat = lam
        return self.state

    def run(self, t_max=np.inf, lambda_floor_factor=100.0, max_steps=2_000_000,
            record_every=10, energy_every=50):
        """March until the scale drops below lambda_floor_factor * r_min (the
        log grid resolves all scales above the core cutoff), the horizon, or
        breakdown.  Records (t, lambda_hat) and a sparser energy trace;
        returns the history array."""
        if self.lambda_hat is None:
            raise ValueError("run() needs a bubble to track")
        floor = lambda_floor_factor * self.state.r[0]
        recorded = []
        energies_tr = []
        for i in range(max_steps):
            if self.state.t >= t_max or self.lambda_hat < floor:
                break
            try:
                self.step()
            except BlowupReached:
                break
            if i % record_every == 0:
                recorded.append((self.state.t, self.lambda_hat))
            if i % energy_every == 0:
                energies_tr.append((self.state.t,) + energies(self.state)
                                   + (max_gradient(self.state),))
        self.history = np.array(recorded)
        self.energy_trace = np.array(energies_tr)
        return self.history

    def dump_csv(self, path):
        """Per-record rows t, lambda_hat, energy_D, energy_V, max_grad
        (energies interpolated from the sparser energy trace)."""
        E = self.energy_trace
        with open(path, "w") as fh:
            fh.write("t,lambda_hat,energy_D,energy_V,max_grad\n")
            for t, lam in self.history:
                ed = np.interp(t, E[:, 0], E[:, 1])
                ev = np.interp(t, E[:, 0], E[:, 2])
                mg = np.interp(t, E[:, 0], E[:, 4])
                fh.write(f"{t:.17g},{lam:.17g},{ed:.17g},{ev:.17g},{mg:.17g}\n")


class BlowupReached(RuntimeError):
    def __init__(self, state):
        super().__init__("solver breakdown: blow-up reached")
        self.state = state


def _d_ds(f, h):
    out = np.empty_like(f)
    out[1:-1] = (f[2:] - f[:-2]) / (2 * h)
    out[0] = (-3 * f[0] + 4 * f[1] - f[2]) / (2 * h)
    out[-1] = (3 * f[-1] - 4 * f[-2] + f[-3]) / (2 * h)
    return out


def step(state: CorotationalState, dt, **kw):
    """One-shot stepping helper around FlowRun."""
    run = FlowRun(state, **kw)
    return run.step(dt)


def extract_scale(state: CorotationalState, missing_ok=False):
    """Radius r* with phi(r*) = pi/2 (the bubble scale), by interpolation.

    phi decreases through pi/2 exactly once for bubble-like profiles; no
    crossing means no bubble.
    """
    phi = state.phi
    below = phi <= 0.5 * np.pi
    if not np.any(below) or below[0]:
        if missing_ok:
            return None
        raise ValueError("profile has no pi/2 crossing (no bubble)")
    i = int(np.argmax(below))
    f0, f1 = phi[i - 1], phi[i]
    w = (0.5 * np.pi - f0) / (f1 - f0)
    return float(state.r[i - 1] * (state.r[i] / state.r[i - 1]) ** w)


def energies(state: CorotationalState):
    """(dirichlet, volume, total) of the reconstructed map:

    E_D = pi int (psi_r^2 + psi^2 phi_r^2 + psi^2 sin^2 phi / r^2) r dr,
    E_V = (4 pi/3) int psi^3 phi_r sin(phi) dr.
    """
    r = state.r
    h = np.log(r[1] / r[0])
    dphi = _d_ds(state.phi, h) / r
    dpsi = _d_ds(state.psi, h) / r
    sinphi = np.sin(state.phi)
    g2 = dpsi**2 + state.psi**2 * dphi**2 + state.psi**2 * sinphi**2 / r**2
    dirichlet = np.pi * np.trapezoid(g2 * r, r)
    volume = (4.0 * np.pi / 3.0) * np.trapezoid(state.psi**3 * dphi * sinphi, r)
    return float(dirichlet), float(volume), float(dirichlet + volume)


def max_gradient(state: CorotationalState):
    r = state.r
    h = np.log(r[1] / r[0])
    return float(np.max(np.abs(_d_ds(state.phi, h) / r)))


def linearized_rhs(r, lam, phi1, phi2, d1, dd1, d2, dd2):
    """The displayed linearization around (pi - 2 arctan(r/lam), 1): returns
    the right sides for perturbations (phi1, phi2) given their first and
    second radial derivatives."""
    a1 = dd1 + d1 / r - (r**4 - 6 * r**2 * lam**2 + lam**4) \
        / (r**2 * (r**2 + lam**2) ** 2) * phi1 - 6.0 * lam / (r**2 + lam**2) * d2
    a2 = dd2 + d2 / r + 8.0 * lam**2 / (r**2 + lam**2) ** 2 * phi2
    return a1, a2


def fit_type2(ts, lams):
    """Fit lambda(t) = kappa (T - t)/|log(T - t)|^2 and the pure-linear
    alternative lambda = c (T - t), both by least squares in log lambda.

    Needs >= 20 samples spanning at least one decade of decay; non-monotone
    series are rejected.
    """
    ts = np.asarray(ts, dtype=float)
    lams = np.asarray(lams, dtype=float)
    if len(ts) < 20:
        raise ValueError("need at least 20 samples")
    if lams[0] / lams[-1] < 10.0:
        raise ValueError("need at least one decade of lambda decay")
    sm = _smooth(lams)
    if np.any(np.diff(sm) > 1e-4 * sm[:-1]):  # ppm drift on plateaus is noise
        raise ValueError("series is not monotone decreasing")

    t_end = ts[-1]
    span = ts[-1] - ts[0]

    def resid_type2(p):
        T, kap = t_end + np.exp(p[0]) * span, np.exp(p[1])
        model = kap * (T - ts) / np.log(T - ts) ** 2
        return np.log(model) - np.log(lams)

    def resid_linear(p):
        T, c = t_end + np.exp(p[0]) * span, np.exp(p[1])
        return np.log(c * (T - ts)) - np.log(lams)

    def resid_sqrt(p):
        T, c = t_end + np.exp(p[0]) * span, np.exp(p[1])
        return np.log(c * np.sqrt(T - ts)) - np.log(lams)

    def best(resid, amp_guess):
        winner = None
        for g in (-1.0, -3.0, -6.0, -9.0):
            sol = least_squares(resid, [g, amp_guess], method="lm",
                                max_nfev=4000)
            rms = float(np.sqrt(np.mean(sol.fun**2)))
            if winner is None or rms < winner[0]:
                winner = (rms, sol.x)
        return winner

    r2, x2 = best(resid_type2, 0.0)
    rl, xl = best(resid_linear, 0.0)
    rs, _ = best(resid_sqrt, 0.0)

    fit = BlowupFit(
        T_hat=float(t_end + np.exp(x2[0]) * span),
        kappa_hat=float(np.exp(x2[1])),
        residual=r2,
        linear_residual=rl,
        linear_T_hat=float(t_end + np.exp(xl[0]) * span),
        sqrt_residual=rs,
    )
    if fit.T_hat <= t_end or fit.kappa_hat <= 0:
        raise ValueError("fit produced an inadmissible blow-up time")
    return fit


def _smooth(x, w=5):
    k = np.ones(w) / w
    pad = np.concatenate([x[:1].repeat(w // 2), x, x[-1:].repeat(w // 2)])
    return np.convolve(pad, k, mode="valid")
