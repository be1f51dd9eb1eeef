"""Closed-form signal models for the fitted curve families.

Each model here has a density-matrix counterpart in :mod:`spincluster.engine`
and :mod:`spincluster.sequence`; the tests hold the two routes against each
other.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.linalg import expm

from .physics import CONST, GyroConvention


@dataclass(frozen=True)
class SpinEntry:
    delta: float
    p: float

    def __post_init__(self):
        if not -1.0 <= self.p <= 1.0:
            raise ValueError(f"polarization must lie in [-1, 1], got {self.p}")


@dataclass(frozen=True)
class HHParams:
    a: float
    nu: float
    t_osc: float
    t_lock: float
    c: float

    def __post_init__(self):
        if not (0 <= self.a <= 1 and 0 <= self.c <= 1):
            raise ValueError("a and c must lie in [0, 1]")
        if not (self.t_osc > 0 and self.t_lock > 0):
            raise ValueError("t_osc and t_lock must be positive")


def wrap_phase(x):
    """Map angles to (-pi, pi]."""
    x = np.asarray(x, dtype=float)
    w = np.mod(x + np.pi, 2 * np.pi) - np.pi
    return np.where(w == -np.pi, np.pi, w)


def dse_signal(tau, phi, t_dse):
    if not t_dse > 0:
        raise ValueError("t_dse must be positive")
    tau = np.asarray(tau, dtype=float)
    return 0.5 * np.exp(-(tau / t_dse) ** 2) * (1.0 + np.sin(phi))


def static_phase(b_pol, tau, convention=GyroConvention.TWO_MU_B):
    """D-U phase difference accumulated over free precession ``tau`` in a static field.

    With ``GyroConvention.MU_B`` this is ``2 mu_B b_pol tau / hbar``.
    """
    gamma = CONST.gamma(convention)
    return 2.0 * 2.0 * math.pi * gamma * np.asarray(b_pol, dtype=float) * np.asarray(tau, dtype=float)


def spin_phase_angle(delta, tau):
    """NV phase picked up per fully polarized spin over total free time ``tau``."""
    return 2.0 * np.pi * np.asarray(delta, dtype=float) * np.asarray(tau, dtype=float)


def idse_visibility(tau, deltas, ps):
    """Complex NV fringe visibility for the D sequence (product over spins)."""
    tau = np.asarray(tau, dtype=float)
    v = np.ones_like(tau, dtype=complex)
    for d, p in zip(deltas, ps):
        th = spin_phase_angle(d, tau)
        v = v * (np.cos(th) + 1j * p * np.sin(th))
    return v


def idse_phase(tau, deltas, ps):
    """Fringe-phase difference between the D and U sequences, wrapped to (-pi, pi].

    Each spin contributes ``2 atan2(p sin(th), cos(th))`` with
    ``th = 2 pi delta tau``; ``tau`` is the total free-precession time.
    """
    if len(deltas) != len(ps) or len(deltas) == 0:
        raise ValueError("need one polarization per coupling and at least one spin")
    tau = np.asarray(tau, dtype=float)
    total = np.zeros_like(tau)
    for d, p in zip(deltas, ps):
        th = spin_phase_angle(d, tau)
        total = total + 2.0 * np.arctan2(p * np.sin(th), np.cos(th))
    return wrap_phase(total)


def idse_phase_spins(tau, spins):
    return idse_phase(tau, [s.delta for s in spins], [s.p for s in spins])


def idse_phase_grad(tau, delta, p):
    """Derivatives of one spin's contribution w.r.t. (delta, p)."""
    tau = np.asarray(tau, dtype=float)
    th = spin_phase_angle(delta, tau)
    c, s = np.cos(th), np.sin(th)
    den = c * c + p * p * s * s
    den = np.where(den == 0, np.finfo(float).tiny, den)
    d_delta = 2.0 * p / den * 2.0 * np.pi * tau
    d_p = 2.0 * s * c / den
    return d_delta, d_p


def hh_model(tau_lock, a, nu, t_osc, t_lock, c):
    t = np.asarray(tau_lock, dtype=float)
    return (a * np.cos(2 * np.pi * nu * t) * np.exp(-t / t_osc)
            + (1.0 - a - c) * np.exp(-t / t_lock) + c)


def hh_model_params(tau_lock, params: HHParams):
    return hh_model(tau_lock, params.a, params.nu, params.t_osc, params.t_lock, params.c)


# ---- polarization build-up ------------------------------------------------

def transfer_rate(omega, gamma_opt):
    """Rate at which the exchange pair |0,up> -> |-1,down> is emptied by NV reset.

    Slowest decay rate of a level coupled (matrix element ``omega`` in Hz) to
    one that decays at ``gamma_opt``; tends to ``4 (2 pi omega)^2 / gamma_opt``
    for weak coupling and saturates at ``gamma_opt / 2``.
    """
    g = 2 * np.pi * np.abs(np.asarray(omega, dtype=float))
    disc = (gamma_opt / 4.0) ** 2 - g**2
    root = np.sqrt(np.clip(disc, 0.0, None))
    return 2.0 * (gamma_opt / 4.0 - root)


def pumping_curve(t_init, omega, gamma_opt, t1_n, p_max=1.0):
    """Rate-equation polarization of one N spin after optical pumping for ``t_init``."""
    if not (gamma_opt > 0 and t1_n > 0):
        raise ValueError("rates must be positive")
    t = np.asarray(t_init, dtype=float)
    R = transfer_rate(omega, gamma_opt)
    k = R + 1.0 / t1_n
    p_ss = R * t1_n / (1.0 + R * t1_n) * p_max
    return p_ss * (1.0 - np.exp(-k * t))


@lru_cache(maxsize=4096)
def _pump_liouvillian(omega: float, gamma_opt: float, t1_n: float):
    from .config import cluster_from_couplings
    from .physics import NSpinParams
    from . import engine

    cfg = cluster_from_couplings([0.0], [omega], [0.0], gamma_opt=gamma_opt,
                                 nspin=NSpinParams(t1_n=t1_n))
    L = engine.liouvillian(engine.build_dipolar_hamiltonian(cfg), engine.pump_dissipators(cfg))
    rho0 = engine.initial_state([0.0]).reshape(-1)
    # p = P(down) - P(up) summed over both NV states; basis index = 2 * nv + n
    obs = np.diag([-1.0, 1.0, -1.0, 1.0]).reshape(-1)
    return L, rho0, obs


def pumping_oracle(t_init, omega, gamma_opt, t1_n):
    """Exact single-spin polarization from the optical-pumping master equation."""
    L, rho0, obs = _pump_liouvillian(float(abs(omega)), float(gamma_opt), float(t1_n))
    t = np.atleast_1d(np.asarray(t_init, dtype=float))
    vals = np.array([(obs @ (expm(L * ti) @ rho0)).real for ti in t])
    return vals if np.ndim(t_init) else float(vals[0])


VALIDATION_TIMES = np.array([0.5, 1.0, 2.0, 5.0, 10.0, 20.0]) * 1e-6
CORRECTION_THRESHOLD = 0.05


def pumping_relative_error(omega, gamma_opt, t1_n, times=VALIDATION_TIMES):
    """Largest |rate - oracle| over ``times`` relative to the oracle's maximum."""
    exact = np.atleast_1d(pumping_oracle(times, omega, gamma_opt, t1_n))
    approx = pumping_curve(times, omega, gamma_opt, t1_n)
    scale = max(float(np.max(np.abs(exact))), 1e-12)
    return float(np.max(np.abs(approx - exact)) / scale)


def validate_pumping(omegas, gammas, t1_n):
    """Relative-error table of the rate model against the oracle."""
    return np.array([[pumping_relative_error(o, g, t1_n) for g in gammas] for o in omegas])


VALIDATION_OMEGAS = np.geomspace(5e4, 2e6, 6)
VALIDATION_GAMMAS = np.geomspace(1e6, 1e7, 4)


@lru_cache(maxsize=64)
def rate_model_error(t1_n: float) -> float:
    """Worst rate-model error over the validation grid of (omega, gamma_opt)."""
    return float(validate_pumping(VALIDATION_OMEGAS, VALIDATION_GAMMAS, t1_n).max())


def corrected_pumping_curve(t_init, omega, gamma_opt, t1_n):
    """Polarization build-up, switched to the exact oracle when the rate model
    misses it by more than 5 % anywhere on the validation grid."""
    if rate_model_error(float(t1_n)) > CORRECTION_THRESHOLD:
        if omega == 0:
            return np.zeros_like(np.asarray(t_init, dtype=float)) if np.ndim(t_init) else 0.0
        return pumping_oracle(t_init, omega, gamma_opt, t1_n)
    return pumping_curve(t_init, omega, gamma_opt, t1_n)
