"""Dilation families, the fibering map along mass-preserving dilation,
manifold classification, and the coupled-power gain function.

Two dilation families recur:

* mass preserving:  (u, v)_t = (t^(3/2) u(t x), t^(3/2) v(t x)),
  under which A -> t^2 A, B -> t B, C -> t^(3(p-2)/2) C;
* mass scaling:     (u^s, v^s) = (s^2 u(s x), s^2 v(s x)),
  under which mass -> s mass, A -> s^3 A, B -> s^3 B, C -> s^(2p-3) C.

The fibering map of a unit-mass state at target mass c is

    Phi(t) = t^2/2 c A + gamma t/4 c^2 B - t^(3(p-2)/2)/p c^(p/2) C,

whose derivative satisfies t Phi'(t) = P evaluated on the dilated state.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import isfinite

import numpy as np
from scipy import fft as _fft
from scipy import ndimage

from .errors import BoundaryMassError, HypothesisError, NoCriticalPointError
from .functionals import (
    FunctionalBreakdown,
    ModelParams,
    breakdown_from_abc,
    energy_I,
    pohozaev_coefficient,
)
from .grid import ComplexField3, GridSpec, PairState, check_boundary_mass, mass

_UPSAMPLE = 2  # spectral zero-padding factor used before spline resampling


def _resample(data: np.ndarray, factor: float, order: int, upsample: int) -> np.ndarray:
    """Sample the periodic Fourier interpolant of `data` at x -> factor*x.

    Spectral zero-padding by `upsample` followed by a high-order periodic
    spline keeps the resampling error far below the dilation tolerances for
    well-resolved fields.
    """
    n = data.shape[0]
    if upsample > 1:
        m = upsample * n
        spec = _fft.fftn(data, workers=-1)
        spec = _fft.fftshift(spec)
        padded = np.zeros((m, m, m), dtype=np.complex128)
        lo = (m - n) // 2
        padded[lo : lo + n, lo : lo + n, lo : lo + n] = spec
        fine = _fft.ifftn(_fft.ifftshift(padded), workers=-1) * (upsample**3)
    else:
        m = n
        fine = data
    # target point x_i = -L/2 + i*h maps to fine-grid index ((factor*x_i)+L/2)/h_f
    i = np.arange(n)
    x_over_h = i - n / 2.0  # x_i / h
    pos = factor * x_over_h  # evaluation point in units of h
    # evaluation points outside the box see free space, not a periodic image
    valid1 = np.abs(pos) <= n / 2.0
    idx1 = (pos * upsample + m / 2.0) % m
    IX, IY, IZ = np.meshgrid(idx1, idx1, idx1, indexing="ij")
    coords = np.stack([IX.ravel(), IY.ravel(), IZ.ravel()])
    out_re = ndimage.map_coordinates(fine.real, coords, order=order, mode="grid-wrap")
    out = out_re.astype(np.complex128)
    if np.iscomplexobj(data) and np.abs(data.imag).max() > 0:
        out_im = ndimage.map_coordinates(fine.imag, coords, order=order, mode="grid-wrap")
        out += 1j * out_im
    out = out.reshape(n, n, n)
    if not valid1.all():
        VX, VY, VZ = np.meshgrid(valid1, valid1, valid1, indexing="ij", sparse=True)
        out *= VX & VY & VZ
    return out


def _dilate(s: PairState, factor: float, amp: float, quality: str, boundary_tol: float) -> PairState:
    order, upsample = (5, _UPSAMPLE) if quality == "high" else (3, 1)
    u = amp * _resample(s.u.data, factor, order, upsample)
    v = amp * _resample(s.v.data, factor, order, upsample)
    out = PairState(ComplexField3(s.grid, u), ComplexField3(s.grid, v))
    check_boundary_mass(s.grid, out.density(), boundary_tol)
    return out


def dilate_mass_preserving(
    s: PairState, t: float, quality: str = "high", boundary_tol: float = 1e-6
) -> PairState:
    """(u, v)_t = (t^(3/2) u(t x), t^(3/2) v(t x)), resampled on the same grid."""
    if t <= 0:
        raise ValueError("dilation parameter must be positive")
    if t == 1.0:
        return s.copy()
    return _dilate(s, t, t**1.5, quality, boundary_tol)


def dilate_mass_scaling(
    s: PairState, sfac: float, quality: str = "high", boundary_tol: float = 1e-6
) -> PairState:
    """(u^s, v^s) = (s^2 u(s x), s^2 v(s x)); scales the mass by s."""
    if sfac <= 0:
        raise ValueError("dilation parameter must be positive")
    if sfac == 1.0:
        return s.copy()
    return _dilate(s, sfac, sfac**2, quality, boundary_tol)


# ---------------------------------------------------------------------------
# fibering map


@dataclass
class FiberingProfile:
    t_samples: np.ndarray
    phi_values: np.ndarray
    phi_prime: np.ndarray
    t_minus: float | None  # local maximum of Phi
    t_plus: float | None  # local minimum of Phi

    def to_rows(self):
        for t, ph, dp in zip(self.t_samples, self.phi_values, self.phi_prime):
            yield {"t": t, "phi": ph, "phi_prime": dp}


class _PhiCoeffs:
    """Phi(t) = a2/2 t^2 + a1/4 t - ap/p t^q with q = 3(p-2)/2."""

    def __init__(self, A: float, B: float, C: float, c: float, params: ModelParams):
        self.p = params.p
        self.q = 1.5 * (params.p - 2.0)
        self.a2 = c * A
        self.a1 = params.gamma * c**2 * B
        self.ap = c ** (params.p / 2.0) * C

    def phi(self, t):
        return 0.5 * self.a2 * t**2 + 0.25 * self.a1 * t - self.ap / self.p * t**self.q

    def dphi(self, t):
        return self.a2 * t + 0.25 * self.a1 - pohozaev_coefficient(self.p) * self.ap * t ** (self.q - 1.0)

    def d2phi(self, t):
        coef = pohozaev_coefficient(self.p) * (self.q - 1.0)
        return self.a2 - coef * self.ap * t ** (self.q - 2.0)

    def dilated_breakdown(self, t: float, params: ModelParams) -> FunctionalBreakdown:
        A = self.a2 * t**2
        gB = self.a1 * t
        C = self.ap * t**self.q
        # report the raw functionals of the dilated state at mass c
        B = gB / params.gamma if params.gamma > 0 else 0.0
        return breakdown_from_abc(A, B, C, params.c, params)


def _critical_points(coeffs: _PhiCoeffs, t_lo: float, t_hi: float, n_bracket: int = 128):
    """Sign-change bracketing of Phi' on a geometric grid, bisection refine."""
    ts = np.geomspace(t_lo, t_hi, n_bracket)
    dp = coeffs.dphi(ts)
    roots = []
    for i in range(len(ts) - 1):
        a, b = ts[i], ts[i + 1]
        fa, fb = dp[i], dp[i + 1]
        if not (isfinite(fa) and isfinite(fb)):
            continue
        if fa == 0.0:
            roots.append((a, np.sign(fb)))
            continue
        if fa * fb < 0.0:
            lo, hi = a, b
            flo = fa
            while (hi - lo) > 1e-10 * max(1.0, lo):
                mid = 0.5 * (lo + hi)
                fm = coeffs.dphi(mid)
                if fm == 0.0:
                    lo = hi = mid
                    break
                if flo * fm < 0.0:
                    hi = mid
                else:
                    lo, flo = mid, fm
            roots.append((0.5 * (lo + hi), np.sign(fb)))
    t_minus = None
    t_plus = None
    for root, sign_after in roots:
        if sign_after < 0:  # Phi' goes + -> -: local maximum
            t_minus = root
        elif sign_after > 0:  # - -> +: local minimum
            t_plus = root
    return t_minus, t_plus


def fibering_scan(
    s: PairState,
    params: ModelParams,
    t_range: tuple[float, float] = (1e-3, 1e3),
    samples: int = 256,
) -> FiberingProfile:
    """Scan the fibering map of a unit-mass state at target mass params.c.

    Phi and Phi' are evaluated analytically from the state's (A, B, C); no
    grid dilation is performed.  Raises NoCriticalPointError when Phi' > 0
    on the whole range (monotone fibering, no dilation can stop the rise).
    """
    m = mass(s)
    if abs(m - 1.0) > 1e-6:
        raise ValueError(f"fibering_scan expects a unit-mass state, got mass {m}")
    bd = energy_I(s, params)
    return fibering_scan_breakdown(bd.A, bd.B, bd.C, params, t_range=t_range, samples=samples)


def fibering_scan_breakdown(
    A: float,
    B: float,
    C: float,
    params: ModelParams,
    c: float | None = None,
    t_range: tuple[float, float] = (1e-3, 1e3),
    samples: int = 256,
) -> FiberingProfile:
    """fibering_scan on raw unit-mass functionals (c defaults to params.c)."""
    coeffs = _PhiCoeffs(A, B, C, params.c if c is None else c, params)
    t_lo, t_hi = t_range
    if t_lo <= 0 or t_hi <= t_lo:
        raise ValueError("t_range must be positive and increasing")
    ts = np.geomspace(t_lo, t_hi, samples)
    t_minus, t_plus = _critical_points(coeffs, t_lo, t_hi)
    if t_minus is None and t_plus is None and np.all(coeffs.dphi(ts) > 0):
        raise NoCriticalPointError(
            "fibering map is strictly increasing on the scanned range; "
            "no critical point exists"
        )
    return FiberingProfile(
        t_samples=ts,
        phi_values=coeffs.phi(ts),
        phi_prime=coeffs.dphi(ts),
        t_minus=t_minus,
        t_plus=t_plus,
    )


def fibering_t_minus(bd: FunctionalBreakdown, params: ModelParams) -> float | None:
    """Location of the fibering maximum of a mass-c state (its own A, B, C)."""
    coeffs = _PhiCoeffs(bd.A, bd.B, bd.C, 1.0, params)
    t_minus, _ = _critical_points(coeffs, 1e-3, 1e3)
    return t_minus


def classify_manifold(
    s: PairState,
    params: ModelParams,
    pohozaev_tol: float = 1e-6,
    zero_tol: float = 1e-8,
    bd: FunctionalBreakdown | None = None,
) -> str:
    """One of 'M_plus', 'M_minus', 'M_zero', 'off_manifold'.

    Off the manifold when |P| > pohozaev_tol * max(A, 1); otherwise the sign
    of Phi''(1), computed algebraically from A and C, decides the branch.
    """
    if bd is None:
        bd = energy_I(s, params)
    if abs(bd.P) > pohozaev_tol * max(bd.A, 1.0):
        return "off_manifold"
    coeffs = _PhiCoeffs(bd.A, bd.B, bd.C, 1.0, params)
    curv = coeffs.d2phi(1.0)
    if abs(curv) <= zero_tol * max(bd.A, 1.0):
        return "M_zero"
    return "M_minus" if curv < 0 else "M_plus"


# ---------------------------------------------------------------------------
# coupled-power gain under mass splitting


def g_beta(s01, params: ModelParams):
    """g(s) = s^(p/2) + (1-s)^(p/2) + 2 beta s^(p/4) (1-s)^(p/4) on [0, 1]."""
    s01 = np.asarray(s01, dtype=np.float64)
    if np.any(s01 < 0) or np.any(s01 > 1):
        raise ValueError("split fraction must lie in [0, 1]")
    p, beta = params.p, params.beta
    val = s01 ** (p / 2) + (1 - s01) ** (p / 2) + 2 * beta * s01 ** (p / 4) * (1 - s01) ** (p / 4)
    return float(val) if val.ndim == 0 else val


def _require_gain_regime(params: ModelParams):
    p, beta = params.p, params.beta
    if 2.0 < p < 4.0 and beta > 0.0:
        return
    if 4.0 <= p < 6.0 and beta > 2.0 ** ((p - 2.0) / 2.0):
        return
    raise HypothesisError(
        f"(p, beta) = ({p}, {beta}) is outside the gain regimes "
        "2<p<4, beta>0  or  4<=p<6, beta>2^((p-2)/2)"
    )


def g_beta_argmax(params: ModelParams) -> tuple[float, float]:
    """Interior maximizer of g and its value; requires a gain regime.

    A dense scan locates the basin (g need not be unimodal for small beta),
    then golden-section refines the maximizer to ~1e-10.
    """
    _require_gain_regime(params)
    grid = np.linspace(0.0, 1.0, 20001)
    vals = g_beta(grid, params)
    i = int(np.argmax(vals))
    lo = grid[max(i - 2, 0)]
    hi = grid[min(i + 2, len(grid) - 1)]
    invphi = (np.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    x1 = b - invphi * (b - a)
    x2 = a + invphi * (b - a)
    f1, f2 = g_beta(x1, params), g_beta(x2, params)
    for _ in range(200):
        if b - a < 1e-12:
            break
        if f1 < f2:
            a, x1, f1 = x1, x2, f2
            x2 = a + invphi * (b - a)
            f2 = g_beta(x2, params)
        else:
            b, x2, f2 = x2, x1, f1
            x1 = b - invphi * (b - a)
            f1 = g_beta(x1, params)
    s_beta = 0.5 * (a + b)
    return s_beta, g_beta(s_beta, params)


def semitrivial_split(omega: ComplexField3, params: ModelParams):
    """Best splitting (sqrt(s) w, sqrt(1-s) w) of a one-component state.

    Splitting leaves A and B unchanged and multiplies the power term by
    g(s), so in a gain regime the optimal split strictly lowers the energy
    of (w, 0).  Returns (s_omega, I_split, I_semitrivial).
    """
    _require_gain_regime(params)
    data = omega.data
    if not np.any(data):
        raise ValueError("omega must be nonzero")
    grid = omega.grid
    zero = ComplexField3(grid, np.zeros_like(data))
    semi = PairState(omega.copy(), zero)
    bd = energy_I(semi, params)
    # for the semitrivial state C = int |w|^p (the cross term vanishes)
    power = bd.C
    s_omega, g_max = g_beta_argmax(params)
    I_semi = bd.I
    I_split = 0.5 * bd.A + 0.25 * params.gamma * bd.B - g_max * power / params.p
    return s_omega, I_split, I_semi
