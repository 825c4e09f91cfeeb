"""Shared discretization helpers: log-radial grids and stencils, polar grids,
Fourier mode splitting in the angular variable, and graded time grids."""

import numpy as np


def log_radial_grid(rho_min=1e-6, rho_max=200.0, n=320):
    """Geometric (log-uniform) radial grid.

    Returns (rho, s, h) with rho = exp(s), s uniform of spacing h.  All
    radial weights in this problem are powers of <rho>, so a log grid
    resolves the bubble core and the slow tails simultaneously.
    """
    if n < 5:
        raise ValueError("need at least 5 radial nodes")
    s = np.linspace(np.log(rho_min), np.log(rho_max), n)
    return np.exp(s), s, s[1] - s[0]


def theta_grid(n_theta=32):
    """Uniform angular nodes on [0, 2pi)."""
    return np.arange(n_theta) * (2.0 * np.pi / n_theta)


def d_ds(values, h, axis=0):
    """Centered first derivative in the log coordinate, one-sided at the ends."""
    v = np.moveaxis(np.asarray(values), axis, 0)
    out = np.empty_like(v)
    out[1:-1] = (v[2:] - v[:-2]) / (2.0 * h)
    out[0] = (-3.0 * v[0] + 4.0 * v[1] - v[2]) / (2.0 * h)
    out[-1] = (3.0 * v[-1] - 4.0 * v[-2] + v[-3]) / (2.0 * h)
    return np.moveaxis(out, 0, axis)


def d2_ds(values, h, axis=0):
    """Centered second derivative in the log coordinate (boundary rows copied
    from the adjacent interior stencil; callers restrict to interior nodes)."""
    v = np.moveaxis(np.asarray(values), axis, 0)
    out = np.empty_like(v)
    out[1:-1] = (v[2:] - 2.0 * v[1:-1] + v[:-2]) / (h * h)
    out[0] = (2.0 * v[0] - 5.0 * v[1] + 4.0 * v[2] - v[3]) / (h * h)
    out[-1] = (2.0 * v[-1] - 5.0 * v[-2] + 4.0 * v[-3] - v[-4]) / (h * h)
    return np.moveaxis(out, 0, axis)


def radial_laplacian_s(values, rho, h, axis=0):
    """(d_rr + d_r/r) f on a log grid: equals f_ss / rho^2 exactly."""
    return d2_ds(values, h, axis=axis) / rho_under(values, rho, axis)


def rho_under(values, rho, axis=0):
    shape = [1] * np.asarray(values).ndim
    shape[axis] = len(rho)
    return (rho**2).reshape(shape)


def fourier_modes(values, k_max=8, axis=-1):
    """Split periodic samples into complex Fourier-mode coefficients.

    Returns dict {k: coefficient array} for |k| <= k_max with the convention
    f(theta) = sum_k c_k exp(i k theta).  The angular grid must be uniform.
    """
    v = np.asarray(values)
    n = v.shape[axis]
    coef = np.fft.fft(v, axis=axis) / n
    out = {}
    for k in range(-k_max, k_max + 1):
        out[k] = np.take(coef, k % n, axis=axis)
    return out


def synthesize_modes(modes, theta, axis=-1):
    """Inverse of fourier_modes on an arbitrary angular node set."""
    first = next(iter(modes.values()))
    out = np.zeros(first.shape + (len(theta),), dtype=complex)
    for k, c in modes.items():
        out += c[..., None] * np.exp(1j * k * theta)
    return np.moveaxis(out, -1, axis)


def graded_time_grid(T, t_start=None, t_end_gap_factor=1e-6, nodes_per_decade=400):
    """Nodes on [t_start, T - gap] geometrically refined toward T.

    Spacing is proportional to (T - t); gap = t_end_gap_factor * T.  Default
    start is -T (the natural left endpoint of the nonlocal systems here).
    """
    if t_start is None:
        t_start = -T
    gap = t_end_gap_factor * T
    u_lo, u_hi = np.log(gap), np.log(T - t_start)
    n = max(int(np.ceil((u_hi - u_lo) / np.log(10.0) * nodes_per_decade)), 16)
    u = np.linspace(u_hi, u_lo, n + 1)
    t = T - np.exp(u)
    t[0] = t_start
    return t


def trapezoid_nonuniform(y, x, axis=0):
    return np.trapezoid(y, x=x, axis=axis)
