"""Feasibility of the gluing exponents.

The inner/outer weighted topologies close only when the eleven exponents
satisfy a system of strict inequalities; `check_all` evaluates every row
literally and `feasible_sample` draws reproducible points from the displayed
feasible box (beta = 3/8, Theta = 11/30, alpha = 99/100, alpha0 = 49/100,
delta = 999/1000 slice, with nu, a, sigma*, alpha1 in nu-dependent windows).
"""

import fractions
from dataclasses import dataclass, field, asdict

import numpy as np


@dataclass(frozen=True)
class Constants:
    nu: float
    a: float
    beta: float
    Theta: float
    sigma_star: float
    alpha: float
    alpha0: float
    alpha1: float
    delta: float
    delta1: float
    sigma0: float

    def as_dict(self):
        return asdict(self)


@dataclass
class ConstraintRow:
    name: str
    lhs: float
    rhs: float
    strict: bool = True

    @property
    def passed(self):
        return self.lhs > self.rhs if self.strict else self.lhs >= self.rhs

    @property
    def slack(self):
        return self.lhs - self.rhs


@dataclass
class ConstraintReport:
    rows: list = field(default_factory=list)

    @property
    def passed(self):
        return all(r.passed for r in self.rows)

    def failing(self):
        return [r.name for r in self.rows if not r.passed]

    def table(self):
        lines = [f"{'constraint':<34} {'lhs':>12} {'rhs':>12} {'slack':>12} ok"]
        for r in self.rows:
            lines.append(f"{r.name:<34} {r.lhs:>12.6f} {r.rhs:>12.6f} "
                         f"{r.slack:>12.6f} {'+' if r.passed else 'FAIL'}")
        return "\n".join(lines)


def check_all(c: Constants) -> ConstraintReport:
    """Evaluate the consolidated inequality system row by row.

    All inequalities are strict and checked with zero slack; margins are
    reported.  A couple of basic range rows for the correction exponents
    (delta, delta1) and the outer weight exponent sigma0 are included.
    """
    v = c
    g5a = 5.0 - v.a
    rows = [
        ConstraintRow("nu > 0", v.nu, 0.0),
        ConstraintRow("nu < 1", 1.0, v.nu),
        ConstraintRow("a > 2", v.a, 2.0),
        ConstraintRow("a < 3", 3.0, v.a),
        ConstraintRow("Theta > 1/3", v.Theta, 1.0 / 3.0),
        ConstraintRow("beta > Theta", v.beta, v.Theta),
        ConstraintRow("beta < 1/2", 0.5, v.beta),
        ConstraintRow("1 - nu - beta (a-2) > 0",
                      1.0 - v.nu - v.beta * (v.a - 2.0), 0.0),
        ConstraintRow("sigma* > 0", v.sigma_star, 0.0),
        ConstraintRow("sigma* < 1", 1.0, v.sigma_star),
        ConstraintRow("Theta - beta sigma* (5-a) > 0",
                      v.Theta - v.beta * v.sigma_star * g5a, 0.0),
        ConstraintRow("nu - 2 beta sigma* (5-a) > 0",
                      v.nu - 2.0 * v.beta * v.sigma_star * g5a, 0.0),
        ConstraintRow("3 Theta - 2 beta > nu - sigma* beta (5-a)",
                      3.0 * v.Theta - 2.0 * v.beta,
                      v.nu - v.sigma_star * v.beta * g5a),
        ConstraintRow("nu - 2 + a beta > Theta - 1 + beta",
                      v.nu - 2.0 + v.a * v.beta, v.Theta - 1.0 + v.beta),
        ConstraintRow("alpha > 0", v.alpha, 0.0),
        ConstraintRow("alpha < 1", 1.0, v.alpha),
        ConstraintRow("alpha0 > 0", v.alpha0, 0.0),
        ConstraintRow("alpha0 < 1/2", 0.5, v.alpha0),
        ConstraintRow("2 beta - 1 + alpha0 > 0",
                      2.0 * v.beta - 1.0 + v.alpha0, 0.0),
        ConstraintRow("alpha1 > 0", v.alpha1, 0.0),
        ConstraintRow("alpha1 < 1/3", 1.0 / 3.0, v.alpha1),
        ConstraintRow("alpha1 > alpha (alpha0/2 - 1/2 + beta)",
                      v.alpha1, v.alpha * (v.alpha0 / 2.0 - 0.5 + v.beta)),
        ConstraintRow("1 + Theta - alpha (1-beta) + (1+alpha0) alpha/2 - 2 beta"
                      " > nu - sigma* beta (5-a)",
                      1.0 + v.Theta - v.alpha * (1.0 - v.beta)
                      + (1.0 + v.alpha0) * v.alpha / 2.0 - 2.0 * v.beta,
                      v.nu - v.sigma_star * v.beta * g5a),
        ConstraintRow("delta > 0", v.delta, 0.0),
        ConstraintRow("delta < 1", 1.0, v.delta),
        ConstraintRow("2 Theta - 1 + delta beta > 0",
                      2.0 * v.Theta - 1.0 + v.delta * v.beta, 0.0),
        ConstraintRow("delta1 > 1", v.delta1, 1.0),
        ConstraintRow("delta1 < 2", 2.0, v.delta1),
        ConstraintRow("sigma0 > 0", v.sigma0, 0.0),
    ]
    return ConstraintReport(rows)


# the displayed feasible slice: fixed exponents plus nu-dependent windows
FIXED = {
    "beta": 3.0 / 8.0,
    "Theta": 11.0 / 30.0,
    "alpha": 99.0 / 100.0,
    "alpha0": 49.0 / 100.0,
    "delta": 999.0 / 1000.0,
    "delta1": 1.9,
    "sigma0": 0.01,
}

NU_WINDOW = (37.0 / 60.0, 5.0 / 8.0)
ALPHA1_WINDOW = (297.0 / 2500.0, 1.0 / 3.0)


def a_window(nu):
    return ((209.0 - 120.0 * nu) / 45.0, 3.0)


def sigma_star_window(nu, a):
    return ((8.0 * nu - 14.0 / 5.0) / (15.0 - 3.0 * a),
            4.0 * nu / (15.0 - 3.0 * a))


def final_choice(nu=0.62, a=None, sigma_star=None, alpha1=0.2):
    """A concrete point of the displayed feasible box (midpoints by default)."""
    if a is None:
        lo, hi = a_window(nu)
        a = 0.5 * (lo + hi)
    if sigma_star is None:
        lo, hi = sigma_star_window(nu, a)
        sigma_star = 0.5 * (lo + hi)
    return Constants(nu=nu, a=a, sigma_star=sigma_star, alpha1=alpha1, **FIXED)


def feasible_sample(seed=0, margin=1e-4) -> Constants:
    """Rejection sampling inside the displayed windows, reproducible per seed.

    The windows already encode the narrowing of the inequality system to the
    fixed slice, so rejections must not occur; a million of them would mean
    the certified box is empty and raises.
    """
    rng = np.random.default_rng(seed)
    for _ in range(1_000_000):
        nu = _draw(rng, *NU_WINDOW, margin)
        a = _draw(rng, *a_window(nu), margin)
        ss = _draw(rng, *sigma_star_window(nu, a), margin)
        a1 = _draw(rng, *ALPHA1_WINDOW, margin)
        cand = Constants(nu=nu, a=a, sigma_star=ss, alpha1=a1, **FIXED)
        if check_all(cand).passed:
            return cand
    raise RuntimeError("displayed feasible box appears empty")


def _draw(rng, lo, hi, margin):
    pad = margin * (hi - lo)
    return float(rng.uniform(lo + pad, hi - pad))


def box_corners(eps=1e-6):
    """Corners of the displayed (nu, a, sigma*, alpha1) box, pulled into the
    interior by eps relative; all must pass check_all."""
    out = []
    for wn in (0, 1):
        nu = _lerp(*NU_WINDOW, eps if wn == 0 else 1 - eps)
        for wa in (0, 1):
            a = _lerp(*a_window(nu), eps if wa == 0 else 1 - eps)
            for ws in (0, 1):
                ss = _lerp(*sigma_star_window(nu, a), eps if ws == 0 else 1 - eps)
                for w1 in (0, 1):
                    a1 = _lerp(*ALPHA1_WINDOW, eps if w1 == 0 else 1 - eps)
                    out.append(Constants(nu=nu, a=a, sigma_star=ss, alpha1=a1,
                                         **FIXED))
    return out


def _lerp(lo, hi, w):
    return lo + (hi - lo) * w
