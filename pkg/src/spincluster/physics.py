"""Constants, dipolar couplings and field-dependent transition lines.

All frequencies are in Hz, fields in tesla, lengths in metres and angles in
radians.  The NV and the dark N spins are both assigned the moment of one
Bohr magneton, so an electron line moves by ``2 * mu_B / h`` per tesla.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy import constants as _sc


class DomainError(ValueError):
    """Raised when a physical input lies outside its valid domain."""


class GyroConvention(str, Enum):
    """Gyromagnetic factor used when turning a field into a phase.

    ``TWO_MU_B`` is ``2 mu_B / h`` (the factor used for the resonance
    condition); ``MU_B`` is ``mu_B / h`` (the single-moment form used by the
    printed phase formula).
    """

    TWO_MU_B = "2muB"
    MU_B = "muB"


@dataclass(frozen=True)
class Constants:
    mu_B: float = _sc.physical_constants["Bohr magneton"][0]
    mu0_over_4pi: float = _sc.mu_0 / (4.0 * math.pi)
    h: float = _sc.h
    hbar: float = _sc.hbar

    @property
    def gamma_e_Hz_per_T(self) -> float:
        return 2.0 * self.mu_B / self.h

    @property
    def dipolar_prefactor(self) -> float:
        """mu0 mu_B^2 / (4 pi h) in Hz m^3."""
        return self.mu0_over_4pi * self.mu_B**2 / self.h

    def gamma(self, convention: GyroConvention | str = GyroConvention.TWO_MU_B) -> float:
        convention = GyroConvention(convention)
        if convention is GyroConvention.TWO_MU_B:
            return self.gamma_e_Hz_per_T
        return self.mu_B / self.h

    def as_dict(self) -> dict:
        return {
            "mu_B": self.mu_B,
            "mu0_over_4pi": self.mu0_over_4pi,
            "h": self.h,
            "hbar": self.hbar,
            "gamma_e_Hz_per_T": self.gamma_e_Hz_per_T,
            "dipolar_prefactor_Hz_m3": self.dipolar_prefactor,
        }


CONST = Constants()


@dataclass(frozen=True)
class DipoleGeometry:
    r: float
    theta: float

    def __post_init__(self):
        if not math.isfinite(self.r) or self.r <= 0:
            raise DomainError(f"separation must be finite and positive, got r={self.r!r}")
        if not math.isfinite(self.theta) or not 0.0 <= self.theta <= math.pi:
            raise DomainError(f"theta must lie in [0, pi], got {self.theta!r}")

    @classmethod
    def from_vector(cls, xyz) -> "DipoleGeometry":
        v = np.asarray(xyz, dtype=float)
        r = float(np.linalg.norm(v))
        if r <= 0 or not math.isfinite(r):
            raise DomainError("separation vector must be non-zero and finite")
        cos_t = min(1.0, max(-1.0, float(v[2]) / r))
        return cls(r, math.acos(cos_t))


@dataclass(frozen=True)
class CouplingPair:
    omega: float
    delta: float


@dataclass(frozen=True)
class NVParams:
    d_es: float = 1.42e9
    d_gs: float = 2.87e9
    a_hf_es: float = 4.0e7
    hyperfine_weights: tuple[float, float, float] = (1 / 3, 1 / 3, 1 / 3)

    def __post_init__(self):
        if not (self.d_es > 0 and self.d_gs > 0):
            raise DomainError("zero-field splittings must be positive")
        w = tuple(float(x) for x in self.hyperfine_weights)
        if len(w) != 3 or any(x < 0 for x in w) or abs(sum(w) - 1.0) > 1e-12:
            raise DomainError(f"hyperfine_weights must be 3 probabilities summing to 1, got {w}")
        object.__setattr__(self, "hyperfine_weights", w)


@dataclass(frozen=True)
class NSpinParams:
    a_hf_n: float = 1.14e8
    t1_n: float = 1e-5

    def __post_init__(self):
        if not self.t1_n > 0:
            raise DomainError("t1_n must be positive")


@dataclass(frozen=True)
class Line:
    m_I: int
    frequency: float


def dipolar_coupling(geom: DipoleGeometry, const: Constants = CONST) -> CouplingPair:
    k = const.dipolar_prefactor / geom.r**3
    s2 = math.sin(geom.theta) ** 2
    c2 = math.cos(geom.theta) ** 2
    return CouplingPair(omega=3.0 * s2 * k, delta=(1.0 - 3.0 * c2) * k)


def dipolar_coupling_array(r, theta, const: Constants = CONST):
    """Vectorised ``dipolar_coupling``; returns ``(omega, delta)`` arrays."""
    r = np.asarray(r, dtype=float)
    theta = np.asarray(theta, dtype=float)
    if np.any(~np.isfinite(r)) or np.any(r <= 0):
        raise DomainError("all separations must be finite and positive")
    k = const.dipolar_prefactor / r**3
    c = np.cos(theta)
    return 3.0 * (1.0 - c**2) * k, (1.0 - 3.0 * c**2) * k


def coupling_to_field(delta: float, n_state: str, const: Constants = CONST) -> float:
    """Field at the NV produced by an N spin with Ising coupling ``delta``.

    ``n_state`` is ``"down"`` or ``"up"``; down gives ``-h delta / mu_B``.
    """
    if n_state == "down":
        sign = -1.0
    elif n_state == "up":
        sign = 1.0
    else:
        raise ValueError(f"n_state must be 'up' or 'down', got {n_state!r}")
    return sign * const.h * delta / const.mu_B


def resonance_field(nv: NVParams, const: Constants = CONST) -> float:
    # d_es - gamma B = gamma B
    return nv.d_es / (2.0 * const.gamma_e_Hz_per_T)


def nv_es_transitions(B: float, nv: NVParams, const: Constants = CONST) -> dict[int, float]:
    """NV excited-state |0> <-> |-1> lines keyed by host m_I."""
    if B < 0:
        raise DomainError("field must be non-negative")
    centre = nv.d_es - const.gamma_e_Hz_per_T * B
    return {m: centre + m * nv.a_hf_es for m in (-1, 0, 1)}


def n_transitions(B: float, n: NSpinParams, const: Constants = CONST) -> list[Line]:
    """N-spin electron lines: central (m_I = 0) and the two satellites."""
    if B < 0:
        raise DomainError("field must be non-negative")
    centre = const.gamma_e_Hz_per_T * B
    return [Line(m, centre + m * n.a_hf_n) for m in (-1, 0, 1)]


def n_central_transition(B: float, const: Constants = CONST) -> float:
    return const.gamma_e_Hz_per_T * B


def overlap_window(nv: NVParams, half_width: float | None = None,
                   const: Constants = CONST) -> tuple[float, float]:
    """Field interval where the N central line sits inside the NV ES manifold.

    The manifold spans the three hyperfine lines widened by ``half_width``
    (default: half the hyperfine spacing).
    """
    if half_width is None:
        half_width = 0.5 * nv.a_hf_es
    reach = nv.a_hf_es + half_width
    g2 = 2.0 * const.gamma_e_Hz_per_T
    return max(0.0, (nv.d_es - reach) / g2), (nv.d_es + reach) / g2


@dataclass(frozen=True)
class PhaseReport:
    b_pol: float
    tau: float
    degrees: dict


def static_phase_report(b_pol: float = 5e-6, tau: float = 400e-9) -> PhaseReport:
    """D-U phase difference for a static field under both conventions."""
    from .models import static_phase

    degrees = {c.value: math.degrees(static_phase(b_pol, tau, c)) for c in GyroConvention}
    return PhaseReport(b_pol, tau, degrees)
