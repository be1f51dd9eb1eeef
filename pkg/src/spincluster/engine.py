"""Density-matrix dynamics of the NV qubit coupled to a small N-spin cluster.

Basis convention
----------------
The NV is a qubit on {|0>, |-1>} and is the most significant tensor factor;
N spins follow in configuration order.  For every qubit index 0 is the
"upper" state: |0> for the NV, |up> for an N spin.  Operators use spin-1/2
matrices ``S = sigma / 2`` with ``S+ = |0><1|``.

Hamiltonians are given in Hz and propagate as ``exp(-2 pi i H t)``.
Dissipator rates are plain rates in 1/s.

The Ising term is normalised so that an N spin shifts the NV transition by
``+delta`` (down) or ``-delta`` (up), i.e. ``2 delta Sz_N Sz_NV``; the
flip-flop term ``omega (S+S+ + S-S-)`` couples |0,up> <-> |-1,down> with
matrix element ``omega``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import reduce

import numpy as np

from .config import ClusterConfig

MAX_DIM = 64

SX = np.array([[0, 1], [1, 0]], dtype=complex) / 2
SY = np.array([[0, -1j], [1j, 0]], dtype=complex) / 2
SZ = np.array([[1, 0], [0, -1]], dtype=complex) / 2
SP = np.array([[0, 1], [0, 0]], dtype=complex)
SM = SP.T.copy()
I2 = np.eye(2, dtype=complex)
P_UPPER = np.array([[1, 0], [0, 0]], dtype=complex)
P_LOWER = np.array([[0, 0], [0, 1]], dtype=complex)


class EngineError(RuntimeError):
    pass


class ClusterSizeError(EngineError):
    pass


class IntegrationError(EngineError):
    pass


@dataclass(frozen=True)
class Dissipator:
    jump: np.ndarray
    rate: float

    def __post_init__(self):
        if not self.rate >= 0:
            raise ValueError(f"dissipator rate must be >= 0, got {self.rate}")


def n_qubits(dim: int) -> int:
    nq = int(round(math.log2(dim)))
    if 2**nq != dim:
        raise EngineError(f"dimension {dim} is not a power of two")
    return nq


def embed(op: np.ndarray, site: int, nq: int) -> np.ndarray:
    """Place a single-qubit operator on ``site`` (0 = NV) of an ``nq``-qubit space."""
    factors = [I2] * nq
    factors[site] = op
    return reduce(np.kron, factors)


def product_op(ops) -> np.ndarray:
    return reduce(np.kron, ops)


# ---- states ---------------------------------------------------------------

def spin_state(p: float) -> np.ndarray:
    """Diagonal N-spin state with polarization p = P(down) - P(up)."""
    return np.diag([(1.0 - p) / 2, (1.0 + p) / 2]).astype(complex)


def initial_state(polarizations, nv_upper: bool = True) -> np.ndarray:
    nv = P_UPPER if nv_upper else P_LOWER
    return product_op([nv] + [spin_state(p) for p in polarizations])


def basis_state(bits) -> np.ndarray:
    """Pure-state projector for a bit string (NV first)."""
    return product_op([P_UPPER if b == 0 else P_LOWER for b in bits])


def validate_density_matrix(rho: np.ndarray, herm_tol=1e-10, trace_tol=1e-10,
                            psd_tol=1e-9) -> None:
    if rho.ndim != 2 or rho.shape[0] != rho.shape[1]:
        raise EngineError(f"density matrix must be square, got shape {rho.shape}")
    if np.max(np.abs(rho - rho.conj().T)) > herm_tol:
        raise EngineError("density matrix is not Hermitian")
    if abs(np.trace(rho) - 1.0) > trace_tol:
        raise EngineError(f"density matrix trace {np.trace(rho).real} != 1")
    if np.linalg.eigvalsh((rho + rho.conj().T) / 2).min() < -psd_tol:
        raise EngineError("density matrix has negative eigenvalues")


def reduced_spin(rho: np.ndarray, site: int) -> np.ndarray:
    """Single-qubit reduced state of ``site``."""
    nq = n_qubits(rho.shape[0])
    t = rho.reshape([2] * (2 * nq))
    keep = site
    others = [i for i in range(nq) if i != keep]
    # trace out every other factor
    for k, q in enumerate(sorted(others, reverse=True)):
        cur = nq - k
        t = np.trace(t, axis1=q, axis2=q + cur)
    return t.reshape(2, 2)


def polarization(rho: np.ndarray, spin: int) -> float:
    """p = P(down) - P(up) for N spin number ``spin`` (0-based)."""
    r = reduced_spin(rho, spin + 1)
    return float((r[1, 1] - r[0, 0]).real)


def trace_out_nv(rho: np.ndarray) -> np.ndarray:
    d = rho.shape[0] // 2
    t = rho.reshape(2, d, 2, d)
    return np.einsum("iaib->ab", t)


def reset_nv(rho: np.ndarray) -> np.ndarray:
    """Replace the NV by |0><0| keeping the cluster state."""
    return np.kron(P_UPPER, trace_out_nv(rho))


# ---- Hamiltonians ---------------------------------------------------------

def build_dipolar_hamiltonian(cfg: ClusterConfig, flipflop: bool = True,
                              ising: bool = True) -> np.ndarray:
    """NV-cluster dipolar Hamiltonian (Hz) in the full tensor space."""
    n = cfg.n
    if n == 0:
        raise ClusterSizeError("empty cluster")
    dim = 2 ** (n + 1)
    if dim > MAX_DIM:
        raise ClusterSizeError(f"Hilbert space dimension {dim} exceeds {MAX_DIM}")
    nq = n + 1
    H = np.zeros((dim, dim), dtype=complex)
    couplings = cfg.couplings()
    nv_p, nv_m, nv_z = (embed(o, 0, nq) for o in (SP, SM, SZ))
    for i, c in enumerate(couplings):
        site = i + 1
        if flipflop and c.omega:
            H += c.omega * (embed(SP, site, nq) @ nv_p + embed(SM, site, nq) @ nv_m)
        if ising and c.delta:
            H += 2.0 * c.delta * embed(SZ, site, nq) @ nv_z
    if cfg.include_nn:
        H += _nn_hamiltonian(cfg, nq)
    return H


def _nn_hamiltonian(cfg: ClusterConfig, nq: int) -> np.ndarray:
    from .physics import DipoleGeometry, dipolar_coupling

    dim = 2**nq
    H = np.zeros((dim, dim), dtype=complex)
    spins = cfg.spins
    for i in range(len(spins)):
        for j in range(i + 1, len(spins)):
            if spins[i].position is None or spins[j].position is None:
                continue
            d = np.subtract(spins[j].position, spins[i].position)
            c = dipolar_coupling(DipoleGeometry.from_vector(d))
            a, b = i + 1, j + 1
            zz = embed(SZ, a, nq) @ embed(SZ, b, nq)
            ff = embed(SP, a, nq) @ embed(SM, b, nq)
            H += 2.0 * c.delta * (zz - 0.25 * (ff + ff.conj().T))
    return H


def lock_hamiltonian(nq: int, rabi: float, nv_sign: int | None, n_sign: int | None) -> np.ndarray:
    """Resonant spin-lock drives about +/-y (rotating frame, Hz)."""
    dim = 2**nq
    H = np.zeros((dim, dim), dtype=complex)
    if nv_sign:
        H += nv_sign * rabi * embed(SY, 0, nq)
    if n_sign:
        for site in range(1, nq):
            H += n_sign * rabi * embed(SY, site, nq)
    return H


# ---- evolution ------------------------------------------------------------

def propagator(H: np.ndarray, t: float) -> np.ndarray:
    w, V = np.linalg.eigh(H)
    return (V * np.exp(-2j * np.pi * w * t)) @ V.conj().T


def evolve_unitary(rho: np.ndarray, H: np.ndarray, t: float) -> np.ndarray:
    if rho.shape != H.shape:
        raise EngineError(f"dimension mismatch: rho {rho.shape} vs H {H.shape}")
    if t == 0:
        return rho.copy()
    U = propagator(H, t)
    return U @ rho @ U.conj().T


def rotation(angle: float, phase: float, detuning_ratio: float = 0.0) -> np.ndarray:
    """Single-qubit rotation by ``angle`` about (cos phase, sin phase, 0).

    With ``detuning_ratio`` = detuning / Rabi frequency the rotation is that of
    a rectangular pulse whose resonant rotation angle would be ``angle``.
    """
    if not math.isfinite(angle):
        raise ValueError("pulse angle must be finite")
    if detuning_ratio == 0.0:
        n = np.array([math.cos(phase), math.sin(phase), 0.0])
        a = angle
    else:
        eff = math.hypot(1.0, detuning_ratio)
        n = np.array([math.cos(phase), math.sin(phase), detuning_ratio]) / eff
        a = angle * eff
    gen = n[0] * 2 * SX + n[1] * 2 * SY + n[2] * 2 * SZ
    return math.cos(a / 2) * I2 - 1j * math.sin(a / 2) * gen


def pulse_operator(nq: int, species: str, phase: float, angle: float,
                   detuning_ratios=None) -> np.ndarray:
    ops = [I2] * nq
    if species == "NV":
        ops[0] = rotation(angle, phase)
    elif species == "N":
        if nq < 2:
            raise EngineError("no N spins present")
        for site in range(1, nq):
            dr = 0.0 if detuning_ratios is None else detuning_ratios[site - 1]
            ops[site] = rotation(angle, phase, dr)
    else:
        raise ValueError(f"unknown species {species!r}")
    return product_op(ops)


def apply_pulse(rho: np.ndarray, species: str, phase: float, angle: float,
                detuning_ratios=None) -> np.ndarray:
    """Instantaneous rotation of the NV or of every N spin (global drive)."""
    U = pulse_operator(n_qubits(rho.shape[0]), species, phase, angle, detuning_ratios)
    return U @ rho @ U.conj().T


def _lindblad_rhs_factory(H, dissipators):
    Ls = [(math.sqrt(d.rate) * d.jump) for d in dissipators if d.rate > 0]
    LdL = sum((L.conj().T @ L for L in Ls), np.zeros_like(H))
    Heff = -2j * np.pi * H - 0.5 * LdL

    def rhs(rho):
        out = Heff @ rho
        out = out + out.conj().T
        for L in Ls:
            out += L @ rho @ L.conj().T
        return out

    return rhs


def liouvillian(H: np.ndarray, dissipators) -> np.ndarray:
    """Superoperator acting on row-major vec(rho)."""
    d = H.shape[0]
    eye = np.eye(d)
    Lsup = -2j * np.pi * (np.kron(H, eye) - np.kron(eye, H.T))
    for dis in dissipators:
        if dis.rate <= 0:
            continue
        L = dis.jump
        LdL = L.conj().T @ L
        Lsup += dis.rate * (np.kron(L, L.conj()) - 0.5 * np.kron(LdL, eye)
                            - 0.5 * np.kron(eye, LdL.T))
    return Lsup


def lindblad_step_size(H, dissipators, dt_max: float) -> float:
    hnorm = float(np.max(np.abs(np.linalg.eigvalsh(H)))) if H.size else 0.0
    fastest = max([2 * np.pi * hnorm] + [d.rate for d in dissipators])
    dt = dt_max
    if fastest > 0:
        dt = min(dt, 1.0 / (50.0 * fastest))
    return dt


def evolve_lindblad(rho: np.ndarray, H: np.ndarray, dissipators, t: float,
                    dt_max: float = 1e-9) -> np.ndarray:
    """Fixed-step RK4 integration of the Lindblad master equation."""
    if not dt_max > 0:
        raise ValueError("dt_max must be positive")
    if t < 0:
        raise ValueError("evolution time must be non-negative")
    if t == 0:
        return rho.copy()
    for d in dissipators:
        if d.rate < 0:
            raise ValueError("negative dissipator rate")
    h = lindblad_step_size(H, dissipators, dt_max)
    n_steps = max(1, math.ceil(t / h - 1e-9))
    h = t / n_steps
    d = rho.shape[0]
    tr0 = np.trace(rho)
    if d <= 16:
        L = liouvillian(H, dissipators) * h
        L2 = L @ L
        M = np.eye(d * d) + L + L2 / 2 + L2 @ L / 6 + L2 @ L2 / 24
        out = (np.linalg.matrix_power(M, n_steps) @ rho.reshape(-1)).reshape(d, d)
    else:
        rhs = _lindblad_rhs_factory(H, dissipators)
        out = rho.copy()
        for _ in range(n_steps):
            k1 = rhs(out)
            k2 = rhs(out + 0.5 * h * k1)
            k3 = rhs(out + 0.5 * h * k2)
            k4 = rhs(out + h * k3)
            out = out + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
    drift = abs(np.trace(out) - tr0)
    if drift > 1e-6:
        raise IntegrationError(f"trace drift {drift:.3e} after {n_steps} steps")
    return out


def pump_dissipators(cfg: ClusterConfig) -> list[Dissipator]:
    nq = cfg.n + 1
    dis = [Dissipator(embed(SP, 0, nq), cfg.gamma_opt)]
    if cfg.n_relaxation:
        g = 0.5 / cfg.t1_n
        for site in range(1, nq):
            dis.append(Dissipator(embed(SP, site, nq), g))
            dis.append(Dissipator(embed(SM, site, nq), g))
    return dis


def optical_pump(rho: np.ndarray, cfg: ClusterConfig, duration: float,
                 dt_max: float = 1e-9) -> np.ndarray:
    """Continuous optical excitation: ES flip-flop exchange plus NV reset."""
    if duration < 0:
        raise ValueError("pump duration must be non-negative")
    if duration == 0:
        return rho.copy()
    H = build_dipolar_hamiltonian(cfg)
    return evolve_lindblad(rho, H, pump_dissipators(cfg), duration, dt_max)


def measure_p0(rho: np.ndarray) -> float:
    d = rho.shape[0] // 2
    p = float(np.trace(rho[:d, :d]).real)
    return min(1.0, max(0.0, p))


def apply_dephasing_envelope(signal, tau, t_dse):
    """Shrink the coherent part of a contrast about the 1/2 baseline."""
    if not t_dse > 0:
        raise ValueError("t_dse must be positive")
    env = np.exp(-(np.asarray(tau, dtype=float) / t_dse) ** 2)
    return 0.5 + (np.asarray(signal, dtype=float) - 0.5) * env
