"""Estimation of the sharp constants and existence thresholds.

Quotient optimizers deliver one-sided estimates only and are tagged as
such: an infimum minimized over a trial family is an upper bound, a
supremum maximized from a seed is a lower bound.  Nothing here claims a
two-sided enclosure.

The trial family for every infimum is a sum of two isotropic, origin-
centered Gaussians per component with free widths and relative amplitude,
plus the mass split between the components.  All functionals of such
radial trials reduce to 1D quadratures, which keeps the coordinate-descent
searches fast and grid-free.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import cumulative_trapezoid

from .errors import ConvergenceError, HypothesisError
from .functionals import ModelParams, energy_I
from .grid import (
    ComplexField3,
    GridSpec,
    PairState,
    _fftn,
    _ifftn,
    coulomb_potential,
    gaussian_field,
    mass,
)


@dataclass
class ThresholdEstimate:
    value: float
    kind: str  # 'upper_bound' | 'lower_bound' | 'two_sided'
    trial_count: int
    best_trial: dict | None = None
    lower_bound: float | None = None  # analytic companion bound, when one exists

    def to_record(self) -> dict:
        rec = {"value": self.value, "kind": self.kind, "trial_count": self.trial_count}
        if self.lower_bound is not None:
            rec["lower_bound"] = self.lower_bound
        if self.best_trial is not None:
            rec["best_trial"] = dict(self.best_trial)
        return rec


# ---------------------------------------------------------------------------
# radial quadrature engine for two-Gaussian trials


class _RadialTrial:
    """Radial pair built from two Gaussians per component, total mass 1."""

    def __init__(self, theta: dict, n_r: int = 6144):
        self.theta = dict(theta)
        widths = [theta[k] for k in ("w1u", "w2u", "w1v", "w2v")]
        rmax = 12.0 * max(widths) + 2.0
        self.r = np.linspace(0.0, rmax, n_r)
        self.w4pi = 4.0 * np.pi * self.r**2
        fu = self._profile(theta["w1u"], theta["w2u"], theta["a2u"])
        fv = self._profile(theta["w1v"], theta["w2v"], theta["a2v"])
        dfu = self._dprofile(theta["w1u"], theta["w2u"], theta["a2u"])
        dfv = self._dprofile(theta["w1v"], theta["w2v"], theta["a2v"])
        mu = theta["mu"]
        mu_raw = self._int(fu**2)
        mv_raw = self._int(fv**2)
        if mu_raw <= 0 or mv_raw <= 0:
            raise ValueError("degenerate trial profile")
        au = np.sqrt(mu / mu_raw)
        av = np.sqrt((1.0 - mu) / mv_raw)
        self.u, self.du = au * fu, au * dfu
        self.v, self.dv = av * fv, av * dfv
        self.scale_u, self.scale_v = au, av

    def _profile(self, w1, w2, a2):
        return np.exp(-self.r**2 / (2 * w1**2)) + a2 * np.exp(-self.r**2 / (2 * w2**2))

    def _dprofile(self, w1, w2, a2):
        return -self.r / w1**2 * np.exp(-self.r**2 / (2 * w1**2)) - a2 * self.r / w2**2 * np.exp(
            -self.r**2 / (2 * w2**2)
        )

    def _int(self, f) -> float:
        return float(np.trapz(f * self.w4pi, self.r))

    def functionals(self, p: float, beta: float) -> dict:
        u, v = self.u, self.v
        rho = u**2 + v**2
        A = self._int(self.du**2 + self.dv**2)
        # phi(r) = 4 pi [ (1/r) int_0^r rho s^2 ds + int_r^R rho s ds ]
        s2 = cumulative_trapezoid(rho * self.r**2, self.r, initial=0.0)
        s1_full = cumulative_trapezoid(rho * self.r, self.r, initial=0.0)
        outer = s1_full[-1] - s1_full
        with np.errstate(divide="ignore", invalid="ignore"):
            inner = np.where(self.r > 0, s2 / np.where(self.r > 0, self.r, 1.0), 0.0)
        phi = 4.0 * np.pi * (inner + outer)
        B = self._int(phi * rho)
        au, av = np.abs(u), np.abs(v)
        pu = self._int(au**p)
        pv = self._int(av**p)
        cross = self._int(au ** (p / 2) * av ** (p / 2))
        return {
            "A": A,
            "B": B,
            "mass": 1.0,
            "power_sum": pu + pv,
            "cross": cross,
            "C": pu + pv + 2.0 * beta * cross,
        }


_THETA_KEYS = ("w1u", "w2u", "a2u", "w1v", "w2v", "a2v", "mu")
_BOUNDS = {
    "w1u": (0.08, 12.0),
    "w2u": (0.08, 12.0),
    "w1v": (0.08, 12.0),
    "w2v": (0.08, 12.0),
    "a2u": (-0.85, 4.0),
    "a2v": (-0.85, 4.0),
    "mu": (0.02, 0.98),
}
_LOG_COORDS = {"w1u", "w2u", "w1v", "w2v"}


def _coordinate_descent(objective, theta0: dict, active: tuple, sweeps: int = 40):
    """Minimize objective(theta) coordinate-wise: coarse scan + golden refine."""
    theta = dict(theta0)
    evals = 0

    def value(th):
        nonlocal evals
        evals += 1
        try:
            return objective(th)
        except (ValueError, FloatingPointError):
            return np.inf

    best = value(theta)
    invphi = (np.sqrt(5.0) - 1.0) / 2.0
    for _ in range(sweeps):
        improved = 0.0
        for key in active:
            lo, hi = _BOUNDS[key]
            logscale = key in _LOG_COORDS
            if logscale:
                lo, hi = np.log(lo), np.log(hi)
            grid = np.linspace(lo, hi, 21)
            vals = []
            for x in grid:
                th = dict(theta)
                th[key] = float(np.exp(x)) if logscale else float(x)
                vals.append(value(th))
            i = int(np.argmin(vals))
            a = grid[max(i - 1, 0)]
            b = grid[min(i + 1, len(grid) - 1)]
            x1 = b - invphi * (b - a)
            x2 = a + invphi * (b - a)

            def f(x):
                th = dict(theta)
                th[key] = float(np.exp(x)) if logscale else float(x)
                return value(th)

            f1, f2 = f(x1), f(x2)
            for _ in range(60):
                if b - a < 1e-10:
                    break
                if f1 > f2:
                    a, x1, f1 = x1, x2, f2
                    x2 = a + invphi * (b - a)
                    f2 = f(x2)
                else:
                    b, x2, f2 = x2, x1, f1
                    x1 = b - invphi * (b - a)
                    f1 = f(x1)
            xbest = 0.5 * (a + b)
            cand = f(xbest)
            if cand < best - 1e-14 * max(1.0, abs(best)):
                improved = max(improved, best - cand)
                best = cand
                theta[key] = float(np.exp(xbest)) if logscale else float(xbest)
        if improved <= 1e-11 * max(1.0, abs(best)):
            break
    return theta, best, evals


def _default_theta() -> dict:
    return {"w1u": 1.0, "w2u": 2.0, "a2u": 0.0, "w1v": 1.2, "w2v": 2.5, "a2v": 0.0, "mu": 0.5}


def _active_coords(family: str) -> tuple:
    if family == "single_gaussian":
        return ("w1u", "w1v", "mu")
    if family == "two_gaussian":
        return _THETA_KEYS
    raise ValueError(f"unknown trial family '{family}'")


def materialize_trial(theta: dict, grid: GridSpec, total_mass: float = 1.0) -> PairState:
    """Build the radial two-Gaussian trial as a PairState of given mass."""
    trial = _RadialTrial(theta)
    u = trial.scale_u * (
        gaussian_field(grid, width=theta["w1u"]).data
        + theta["a2u"] * gaussian_field(grid, width=theta["w2u"]).data
    )
    v = trial.scale_v * (
        gaussian_field(grid, width=theta["w1v"]).data
        + theta["a2v"] * gaussian_field(grid, width=theta["w2v"]).data
    )
    state = PairState(ComplexField3(grid, u), ComplexField3(grid, v))
    return state.scaled(np.sqrt(total_mass / mass(state)))


# ---------------------------------------------------------------------------
# sharp interpolation constants (maximized quotients -> lower bounds)


def power_quotient(u: np.ndarray, grid: GridSpec, p: float) -> float:
    """int |u|^p / (|grad u|_2^(3(p-2)/2) |u|_2^((6-p)/2))."""
    h3 = grid.h3
    uh = _fftn(u)
    A1 = float(h3 * (grid.k2() * (uh.real**2 + uh.imag**2)).sum())
    M1 = float(h3 * (u.real**2 + u.imag**2).sum())
    Np = float(h3 * (np.abs(u) ** p).sum())
    return Np / (A1 ** (0.75 * (p - 2.0)) * M1 ** (0.25 * (6.0 - p)))


def hartree_quotient(u: np.ndarray, grid: GridSpec) -> float:
    """int (1/|x| * |u|^2) |u|^2 / (|grad u|_2 |u|_2^3)."""
    h3 = grid.h3
    uh = _fftn(u)
    A1 = float(h3 * (grid.k2() * (uh.real**2 + uh.imag**2)).sum())
    M1 = float(h3 * (u.real**2 + u.imag**2).sum())
    rho = u.real**2 + u.imag**2
    phi = coulomb_potential(rho, grid)
    B1 = float(h3 * (phi * rho).sum())
    return B1 / (np.sqrt(A1) * M1**1.5)


def _quotient_ascent(grid, grad_fn, value_fn, seed, max_iter, tol):
    u = seed / np.sqrt(grid.h3 * (seed**2).sum())
    val = value_fn(u)
    step = 0.1
    stall = 0
    for it in range(max_iter):
        d = grad_fn(u)
        d -= u * (grid.h3 * (d * u).sum())  # keep |u|_2 fixed to first order
        nd = np.sqrt(grid.h3 * (d**2).sum())
        if nd == 0.0:
            return u, val, it
        cand = u + step * d / nd
        cand /= np.sqrt(grid.h3 * (cand**2).sum())
        cval = value_fn(cand)
        if cval > val:
            gain = (cval - val) / max(abs(val), 1e-300)
            u, val = cand, cval
            step = min(step * 1.25, 1.0)
            stall = stall + 1 if gain < tol else 0
            if stall >= 25:
                return u, val, it
        else:
            step *= 0.5
            if step < 1e-12:
                return u, val, it
    raise ConvergenceError("quotient ascent hit the iteration cap without stalling")


def estimate_gn_power(
    p: float,
    grid: GridSpec | None = None,
    max_iter: int = 4000,
    tol: float = 1e-12,
) -> ThresholdEstimate:
    """Lower bound on the sharp power-interpolation constant at exponent p."""
    if not 2.0 < p < 6.0:
        raise HypothesisError(f"need 2 < p < 6, got p={p}")
    grid = grid or GridSpec(48, 16.0)
    h3 = grid.h3
    k2 = grid.k2()

    def value(u):
        return power_quotient(u, grid, p)

    def gradient(u):
        uh = _fftn(u)
        A1 = float(h3 * (k2 * (uh.real**2 + uh.imag**2)).sum())
        M1 = float(h3 * (u**2).sum())
        Np = float(h3 * (np.abs(u) ** p).sum())
        lap = _ifftn(k2 * uh).real  #(-Lap u)
        return (
            p * np.abs(u) ** (p - 2.0) * u / Np
            - 1.5 * (p - 2.0) * lap / A1
            - 0.5 * (6.0 - p) * u / M1
        )

    seed = gaussian_field(grid, width=1.0).data.real
    u, val, iters = _quotient_ascent(grid, gradient, value, seed, max_iter, tol)
    return ThresholdEstimate(value=val, kind="lower_bound", trial_count=iters + 1)


def estimate_gn_hartree(
    grid: GridSpec | None = None, max_iter: int = 4000, tol: float = 1e-12
) -> ThresholdEstimate:
    """Lower bound on the sharp Hartree-interpolation constant."""
    grid = grid or GridSpec(48, 16.0)
    h3 = grid.h3
    k2 = grid.k2()

    def value(u):
        return hartree_quotient(u, grid)

    def gradient(u):
        uh = _fftn(u)
        A1 = float(h3 * (k2 * (uh.real**2 + uh.imag**2)).sum())
        M1 = float(h3 * (u**2).sum())
        rho = u**2
        phi = coulomb_potential(rho, grid)
        B1 = float(h3 * (phi * rho).sum())
        lap = _ifftn(k2 * uh).real
        return 4.0 * phi * u / B1 - lap / A1 - 3.0 * u / M1

    seed = gaussian_field(grid, width=1.0).data.real
    u, val, iters = _quotient_ascent(grid, gradient, value, seed, max_iter, tol)
    return ThresholdEstimate(value=val, kind="lower_bound", trial_count=iters + 1)


# ---------------------------------------------------------------------------
# coupling threshold


def beta_star_quotient(fn: dict, params: ModelParams) -> float:
    """The coupling-threshold quotient on precomputed radial functionals."""
    p, gamma, c = params.p, params.gamma, params.c
    if not 3.0 <= p < 10.0 / 3.0:
        raise HypothesisError(f"coupling threshold needs 3 <= p < 10/3, got p={p}")
    pref = (
        (p / (3 * p - 8))
        * (gamma * (3 * p - 8) / (2 * (10 - 3 * p))) ** ((10 - 3 * p) / 2)
        * c ** (-2 * (p - 3))
    )
    num = (
        pref * fn["A"] ** ((3 * p - 8) / 2) * fn["B"] ** ((10 - 3 * p) / 2) * fn["mass"] ** (2 * (p - 3))
        - fn["power_sum"]
    )
    den = 2.0 * fn["cross"]
    if den <= 0:
        return np.inf
    return num / den


def estimate_beta_star(
    params: ModelParams, family: str = "two_gaussian", sweeps: int = 40
) -> ThresholdEstimate:
    """Upper bound on the coupling threshold by trial-family minimization.

    For p = 3 the estimate additionally carries the analytic lower bound
    3 sqrt(gamma)/2 - 1, which is independent of the mass.
    """
    if not 3.0 <= params.p < 10.0 / 3.0:
        raise HypothesisError(f"coupling threshold needs 3 <= p < 10/3, got p={params.p}")
    if params.gamma <= 0:
        raise HypothesisError("coupling threshold needs gamma > 0")

    def objective(theta):
        fn = _RadialTrial(theta).functionals(params.p, params.beta)
        return beta_star_quotient(fn, params)

    theta, best, evals = _coordinate_descent(objective, _default_theta(), _active_coords(family), sweeps)
    lower = 1.5 * np.sqrt(params.gamma) - 1.0 if params.p == 3.0 else None
    return ThresholdEstimate(
        value=best, kind="upper_bound", trial_count=evals, best_trial=theta, lower_bound=lower
    )


# ---------------------------------------------------------------------------
# mass thresholds


def r_p_from_abc(A: float, B: float, C: float, params: ModelParams) -> float:
    """[A^(3p-8) (gamma B)^(10-3p) / C^2]^(1/(4(p-3))) for 10/3 <= p < 6."""
    p = params.p
    if not 10.0 / 3.0 <= p < 6.0:
        raise HypothesisError(f"mass-threshold quotient needs 10/3 <= p < 6, got p={p}")
    return (A ** (3 * p - 8) * (params.gamma * B) ** (10 - 3 * p) / C**2) ** (1.0 / (4 * (p - 3)))


def r_p(s: PairState, params: ModelParams) -> float:
    """The quotient on a unit-mass pair state."""
    m = mass(s)
    if abs(m - 1.0) > 1e-6:
        raise ValueError(f"r_p expects a unit-mass state, got mass {m}")
    bd = energy_I(s, params)
    return r_p_from_abc(bd.A, bd.B, bd.C, params)


def c_star_prefactor() -> float:
    return (5.0 / 3.0) ** 1.5


def c_upper_prefactor(p: float) -> float:
    return (2 * (6 - p) / (5 * p - 12)) ** ((3 * p - 10) / (4 * (p - 3))) * (
        3 * p / (5 * p - 12)
    ) ** (1.0 / (2 * (p - 3)))


def estimate_c_thresholds(
    params: ModelParams, family: str = "two_gaussian", sweeps: int = 40
) -> tuple[ThresholdEstimate, ThresholdEstimate]:
    """Upper bounds (c_star, c_upper) on the two mass thresholds.

    Both scale one optimized infimum of the dilation-invariant quotient; at
    p = 10/3 they therefore share the exact ratio of their prefactors.
    """
    p = params.p
    if not 10.0 / 3.0 <= p < 6.0:
        raise HypothesisError(f"mass thresholds need 10/3 <= p < 6, got p={p}")

    def objective(theta):
        fn = _RadialTrial(theta).functionals(params.p, params.beta)
        return r_p_from_abc(fn["A"], fn["B"], fn["C"], params)

    theta, best, evals = _coordinate_descent(objective, _default_theta(), _active_coords(family), sweeps)

    if p == 10.0 / 3.0:
        inf_r_crit = best
        evals_crit = 0
        theta_crit = theta
    else:
        params_crit = params.replace(p=10.0 / 3.0)

        def objective_crit(th):
            fn = _RadialTrial(th).functionals(params_crit.p, params_crit.beta)
            return r_p_from_abc(fn["A"], fn["B"], fn["C"], params_crit)

        theta_crit, inf_r_crit, evals_crit = _coordinate_descent(
            objective_crit, _default_theta(), _active_coords(family), sweeps
        )

    c_star = ThresholdEstimate(
        value=c_star_prefactor() * inf_r_crit,
        kind="upper_bound",
        trial_count=evals_crit or evals,
        best_trial=theta_crit,
    )
    c_upper = ThresholdEstimate(
        value=c_upper_prefactor(p) * best,
        kind="upper_bound",
        trial_count=evals,
        best_trial=theta,
    )
    return c_star, c_upper


# ---------------------------------------------------------------------------
# closed-form solution of the coupled scaling system


def rt_closed_form(a, b, d, e, l, g, A, B, G, p) -> tuple[float, float]:
    """Unique positive solution (r, t) of

        a A t + b B r + d G r^((p-2)/2) t^((3p-8)/2) = 0
        e A t + l B r + g G r^((p-2)/2) t^((3p-8)/2) = 0.

    Cross-multiplying the linear system gives At : Br : G r^((p-2)/2)
    t^((3p-8)/2) = (bg-dl) : (de-ag) : (al-be); eliminating the common scale
    yields, for p != 3,

        r = ((be-al)/(dl-bg))^(1/(2(p-3)))
            * ((ag-de)/(dl-bg))^((3p-10)/(4(p-3)))
            * A^((3p-8)/(4(p-3))) / ( B^((3p-10)/(4(p-3))) G^(1/(2(p-3))) )

    and t = r (B/A) (dl-bg)/(ag-de).
    """
    if p == 3.0 or not (2.0 < p < 6.0):
        raise HypothesisError("closed form requires p in (2,6) with p != 3")
    if b == 0:
        raise HypothesisError("closed form requires b != 0")
    dl_bg = d * l - b * g
    if dl_bg == 0:
        raise HypothesisError("closed form requires dl - bg != 0")
    ratio1 = (b * e - a * l) / dl_bg
    ratio2 = (a * g - d * e) / dl_bg
    if ratio1 <= 0 or (a * g - d * e) * dl_bg <= 0:
        raise HypothesisError("sign conditions (be-al)/(dl-bg) > 0 and (ag-de)(dl-bg) > 0 violated")
    if not (A > 0 and B > 0 and G > 0):
        raise HypothesisError("closed form requires A, B, G > 0")
    q43 = 1.0 / (4.0 * (p - 3.0))
    r = (
        ratio1 ** (2.0 * q43)
        * ratio2 ** ((3.0 * p - 10.0) * q43)
        * A ** ((3.0 * p - 8.0) * q43)
        * B ** ((10.0 - 3.0 * p) * q43)
        * G ** (-2.0 * q43)
    )
    t = r * (B / A) * dl_bg / (a * g - d * e)
    return float(r), float(t)


def rt_newton(
    a, b, d, e, l, g, A, B, G, p, r0: float, t0: float, max_iter: int = 200, tol: float = 1e-13
) -> tuple[float, float]:
    """Damped Newton solve of the same system, used as a cross-check."""
    r, t = float(r0), float(t0)
    for _ in range(max_iter):
        if r <= 0 or t <= 0:
            raise ConvergenceError("Newton iterate left the positive quadrant")
        w = G * r ** ((p - 2) / 2) * t ** ((3 * p - 8) / 2)
        f1 = a * A * t + b * B * r + d * w
        f2 = e * A * t + l * B * r + g * w
        scale = max(abs(a * A * t), abs(b * B * r), abs(d * w), 1e-300)
        if max(abs(f1), abs(f2)) <= tol * scale:
            return r, t
        dw_dr = w * (p - 2) / (2 * r)
        dw_dt = w * (3 * p - 8) / (2 * t)
        J = np.array(
            [
                [b * B + d * dw_dr, a * A + d * dw_dt],
                [l * B + g * dw_dr, e * A + g * dw_dt],
            ]
        )
        try:
            delta = np.linalg.solve(J, -np.array([f1, f2]))
        except np.linalg.LinAlgError as exc:
            raise ConvergenceError("singular Jacobian in Newton cross-check") from exc
        lam = 1.0
        base = max(abs(f1), abs(f2))
        for _ in range(40):
            rn, tn = r + lam * delta[0], t + lam * delta[1]
            if rn > 0 and tn > 0:
                wn = G * rn ** ((p - 2) / 2) * tn ** ((3 * p - 8) / 2)
                g1 = a * A * tn + b * B * rn + d * wn
                g2 = e * A * tn + l * B * rn + g * wn
                if max(abs(g1), abs(g2)) < base:
                    r, t = rn, tn
                    break
            lam *= 0.5
        else:
            raise ConvergenceError("Newton cross-check stalled")
    raise ConvergenceError("Newton cross-check hit the iteration cap")


def rt_for_threshold_system(A: float, B: float, G: float, params: ModelParams) -> tuple[float, float]:
    """(r, t) for the concrete coefficient set that defines c_upper."""
    p, gamma = params.p, params.gamma
    return rt_closed_form(
        1.0, gamma / 4.0, -1.5 * (p - 2.0) / p, 1.0, gamma, -1.0, A, B, G, p
    )
