"""Energy pieces of the coupled Hartree-type system and their residuals.

For a pair state (u, v) with coupling exponent p, Coulomb strength gamma
and cross coupling beta:

    A = int |grad u|^2 + |grad v|^2
    B = int phi (|u|^2 + |v|^2),   phi = 1/|x| * (|u|^2 + |v|^2)
    C = int |u|^p + |v|^p + 2 beta |u|^(p/2) |v|^(p/2)
    I = A/2 + gamma B/4 - C/p
    P = A + gamma B/4 - 3(p-2)/(2p) C

Critical points of I at fixed mass solve

    -Lap u + lam u + gamma phi u = |u|^(p-2) u + beta |v|^(p/2) |u|^(p/2-2) u

(and symmetrically for v), with lam the multiplier of the mass constraint.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ZeroMassError
from .grid import PairState, _fftn, _ifftn, coulomb_potential, kinetic, mass


@dataclass(frozen=True)
class ModelParams:
    """Model quadruple (p, gamma, beta, c)."""

    p: float
    gamma: float
    beta: float
    c: float

    def __post_init__(self):
        if not 2.0 < self.p < 6.0:
            raise ValueError(f"power exponent must satisfy 2 < p < 6, got p={self.p}")
        # gamma = 0 is admitted so the decoupled system remains expressible;
        # solver regime guards handle the gamma > 0 requirements.
        if self.gamma < 0:
            raise ValueError(f"gamma must be nonnegative, got {self.gamma}")
        if self.c <= 0:
            raise ValueError(f"target mass must be positive, got c={self.c}")

    def replace(self, **kw) -> "ModelParams":
        data = {"p": self.p, "gamma": self.gamma, "beta": self.beta, "c": self.c}
        data.update(kw)
        return ModelParams(**data)


@dataclass(frozen=True)
class FunctionalBreakdown:
    A: float
    B: float
    C: float
    I: float
    P: float
    mass: float

    def to_record(self) -> dict:
        return {"A": self.A, "B": self.B, "C": self.C, "I": self.I, "P": self.P, "mass": self.mass}


def pohozaev_coefficient(p: float) -> float:
    """Coefficient of C in P: 3(p-2)/(2p)."""
    return 1.5 * (p - 2.0) / p


def breakdown_from_abc(A: float, B: float, C: float, m: float, params: ModelParams) -> FunctionalBreakdown:
    """Assemble I and P from shared A, B, C so the identities hold bit-level."""
    I = 0.5 * A + 0.25 * params.gamma * B - C / params.p
    P = A + 0.25 * params.gamma * B - pohozaev_coefficient(params.p) * C
    return FunctionalBreakdown(A=A, B=B, C=C, I=I, P=P, mass=m)


def _abs_pow(a: np.ndarray, expo: float) -> np.ndarray:
    """|a|^expo with the continuous extension value 0 at a = 0 for expo<0."""
    mag = np.abs(a)
    if expo >= 0:
        return mag**expo
    out = np.zeros_like(mag)
    nz = mag > 0
    out[nz] = mag[nz] ** expo
    return out


def hartree_B(s: PairState, phi: np.ndarray | None = None) -> float:
    """B = int phi (|u|^2+|v|^2); one Coulomb solve plus an inner product."""
    rho = s.density()
    if phi is None:
        phi = coulomb_potential(rho, s.grid)
    return float(s.grid.h3 * (phi * rho).sum())


def coupled_power_C(s: PairState, params: ModelParams) -> float:
    p = params.p
    au = np.abs(s.u.data)
    av = np.abs(s.v.data)
    val = (au**p + av**p + 2.0 * params.beta * au ** (p / 2) * av ** (p / 2)).sum()
    return float(s.grid.h3 * val)


def energy_I(s: PairState, params: ModelParams, phi: np.ndarray | None = None) -> FunctionalBreakdown:
    """Full functional breakdown of the state; I and P derive from A, B, C."""
    A = kinetic(s)
    B = hartree_B(s, phi=phi)
    C = coupled_power_C(s, params)
    return breakdown_from_abc(A, B, C, mass(s), params)


def pohozaev_P(s: PairState, params: ModelParams) -> float:
    return energy_I(s, params).P


def action_E(s: PairState, params: ModelParams, lam: float) -> float:
    """Fixed-frequency action E = I + lam * mass / 2."""
    bd = energy_I(s, params)
    return bd.I + 0.5 * lam * bd.mass


def nonlinear_force(
    s: PairState, params: ModelParams, phi: np.ndarray | None = None
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """The non-Laplacian part of the constrained gradient, per component.

    Returns (F_u, F_v, phi) with
        F_u = gamma phi u - |u|^(p-2) u - beta |v|^(p/2) |u|^(p/2-2) u,
    the cross factor taken with its continuous extension (0 where u = 0).
    """
    p, beta, gamma = params.p, params.beta, params.gamma
    u, v = s.u.data, s.v.data
    if phi is None:
        phi = coulomb_potential(s.density(), s.grid)
    au = np.abs(u)
    av = np.abs(v)
    fu = gamma * phi * u - au ** (p - 2.0) * u - beta * (av ** (p / 2)) * (_abs_pow(u, p / 2 - 2.0) * u)
    fv = gamma * phi * v - av ** (p - 2.0) * v - beta * (au ** (p / 2)) * (_abs_pow(v, p / 2 - 2.0) * v)
    return fu, fv, phi


def el_gradient(
    s: PairState, params: ModelParams, lam: float, phi: np.ndarray | None = None
) -> tuple[np.ndarray, np.ndarray]:
    """Residual fields of the stationary system at multiplier lam."""
    k2 = s.grid.k2()
    fu, fv, _ = nonlinear_force(s, params, phi=phi)
    ru = _ifftn(k2 * _fftn(s.u.data)) + lam * s.u.data + fu
    rv = _ifftn(k2 * _fftn(s.v.data)) + lam * s.v.data + fv
    return ru, rv


def el_residual(s: PairState, params: ModelParams, lam: float, phi: np.ndarray | None = None) -> float:
    """L2 norm of the stationary-system residual pair."""
    ru, rv = el_gradient(s, params, lam, phi=phi)
    acc = (ru.real**2 + ru.imag**2).sum() + (rv.real**2 + rv.imag**2).sum()
    return float(np.sqrt(s.grid.h3 * acc))


def lagrange_multiplier(s: PairState, params: ModelParams, bd: FunctionalBreakdown | None = None) -> float:
    """Multiplier recovered from testing the stationary system against (u, v):

        lam = (C - A - gamma B) / mass.

    On states with P = 0 at p = 10/3 this reduces to (3A - (7/5)C)/mass.
    """
    if bd is None:
        bd = energy_I(s, params)
    if bd.mass <= 0.0:
        raise ZeroMassError("cannot recover a multiplier from a zero state")
    return (bd.C - bd.A - params.gamma * bd.B) / bd.mass


def lagrange_multiplier_critical(bd: FunctionalBreakdown) -> float:
    """The p = 10/3 formula (3A - (7/5)C)/mass, valid when P = 0."""
    if bd.mass <= 0.0:
        raise ZeroMassError("cannot recover a multiplier from a zero state")
    return (3.0 * bd.A - 1.4 * bd.C) / bd.mass
