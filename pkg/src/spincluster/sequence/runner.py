"""Execute pulse sequences on the density-matrix engine."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, replace

import numpy as np

from .. import engine
from ..config import ClusterConfig
from ..physics import n_transitions
from .builtins import builtin
from .dsl import PulseSequence, PulseStep, Sym
from .trace import Trace

SI_UNIT = {"time": "s", "freq": "Hz", "angle": "rad"}


class SweepError(engine.EngineError):
    def __init__(self, index: int, cause: Exception):
        self.index = index
        self.cause = cause
        super().__init__(f"sweep point {index}: {cause}")


@dataclass(frozen=True)
class RunOptions:
    shots: int | None = None      # binomial shot noise when set
    seed: int = 0
    dephasing: bool = True        # Gaussian envelope on echo-class sequences
    cycles: int = 1               # repetitions with the cluster state carried over
    normalize: bool = False       # divide by the same sequence without N steps
    dt_max: float = 1e-9

    def __post_init__(self):
        if self.shots is not None and self.shots < 1:
            raise ValueError("shots must be positive")
        if self.cycles < 1:
            raise ValueError("cycles must be >= 1")


def _bind(v, x):
    if isinstance(v, Sym):
        return x / v.divisor
    return v


def is_echo_class(seq: PulseSequence) -> bool:
    kinds = {s.kind for s in seq.steps}
    return "delay" in kinds and "lock" not in kinds


class _Machine:
    """Runs single shots of one sequence on one cluster, caching propagators."""

    def __init__(self, seq: PulseSequence, cfg: ClusterConfig, opts: RunOptions):
        self.seq = seq
        self.cfg = cfg
        self.opts = opts
        self.nq = cfg.n + 1
        self.h_free = engine.build_dipolar_hamiltonian(cfg, flipflop=False)
        self._eig: dict = {}
        self.blocks = seq.blocks()

    def _eigh(self, key, H):
        if key not in self._eig:
            self._eig[key] = np.linalg.eigh(H)
        return self._eig[key]

    def _evolve(self, rho, key, H, t):
        if t == 0:
            return rho
        w, V = self._eigh(key, H)
        U = (V * np.exp(-2j * np.pi * w * t)) @ V.conj().T
        return U @ rho @ U.conj().T

    def shot(self, rho, x, odd: bool, detunings=None):
        for block in self.blocks:
            head = block[0]
            if head.kind == "pulse":
                for s in block:
                    rho = self._pulse(rho, s, x, odd, detunings)
            elif head.kind == "delay":
                rho = self._evolve(rho, "free", self.h_free, _bind(head.duration, x))
            elif head.kind == "lock":
                rho = self._lock(rho, block, x, odd)
            elif head.kind == "pump":
                rho = engine.optical_pump(rho, self.cfg, _bind(head.duration, x), self.opts.dt_max)
            elif head.kind == "readout":
                break
        return rho

    def _pulse(self, rho, s: PulseStep, x, odd, detunings):
        phase = s.phase_deg
        phase = math.radians(x if isinstance(phase, Sym) else phase)
        if s.alt and odd:
            phase += math.pi
        ratios = None
        if s.channel == "N" and s.freq is not None:
            f = _bind(s.freq, x)
            ratios = [(f - line) / self.cfg.rw_rabi for line in detunings]
        return engine.apply_pulse(rho, s.channel, phase, s.angle, ratios)

    def _lock(self, rho, block, x, odd):
        nv_sign = n_sign = None
        for s in block:
            sign = -s.sign if (s.alt and odd) else s.sign
            if s.channel == "NV":
                nv_sign = sign
            else:
                n_sign = sign
        key = ("lock", nv_sign, n_sign)
        if key not in self._eig:
            H = self.h_free + engine.lock_hamiltonian(self.nq, self.cfg.lock_rabi, nv_sign, n_sign)
            self._eigh(key, H)
        return self._evolve(rho, key, None, _bind(block[0].duration, x))

    def point(self, x) -> float:
        """P0 for one sweep value, averaged over N hyperfine lines if drives are selective."""
        combos = [None]
        if any(s.freq is not None for s in self.seq.steps):
            lines = [ln.frequency for ln in n_transitions(self.cfg.b_app, self.cfg.nspin)]
            combos = list(itertools.product(lines, repeat=self.cfg.n))
        total = 0.0
        for det in combos:
            total += self._shots(x, det)
        return total / len(combos)

    def _shots(self, x, det) -> float:
        rho0 = engine.initial_state(self.cfg.polarizations)
        alt = self.seq.has_alternation
        if self.opts.cycles == 1:
            if not alt:
                return engine.measure_p0(self.shot(rho0, x, False, det))
            return 0.5 * (engine.measure_p0(self.shot(rho0, x, False, det))
                          + engine.measure_p0(self.shot(rho0, x, True, det)))
        n_shots = self.opts.cycles * (2 if alt else 1)
        rho = rho0
        vals = []
        for k in range(n_shots):
            rho = self.shot(rho, x, bool(k % 2), det)
            vals.append(engine.measure_p0(rho))
            rho = engine.reset_nv(rho)
        last = vals[-2:] if alt else vals[-1:]
        return float(np.mean(last))


def _free_time(seq: PulseSequence, x) -> float:
    return sum(_bind(s.duration, x) for s in seq.steps if s.kind == "delay")


def run_points(seq: PulseSequence, cfg: ClusterConfig, xs, opts: RunOptions) -> np.ndarray:
    """Noise-free P0 at each sweep value (sweep values in SI units / degrees)."""
    m = _Machine(seq, cfg, opts)
    echo = opts.dephasing and is_echo_class(seq)
    out = np.empty(len(xs))
    for i, x in enumerate(xs):
        try:
            p = m.point(x)
        except (engine.EngineError, ValueError, np.linalg.LinAlgError) as exc:
            raise SweepError(i, exc) from exc
        if echo:
            p = float(engine.apply_dephasing_envelope(p, _free_time(seq, x), cfg.t_dse))
        out[i] = p
    return out


def _sweep_axis(seq: PulseSequence):
    if seq.sweep is None:
        return np.array([0.0]), np.array([0.0]), "none"
    grid = seq.sweep.grid()
    kind = seq.sweep.kind
    x_si = np.radians(grid) if kind == "angle" else grid
    return grid, x_si, SI_UNIT[kind]


def add_shot_noise(p, shots: int, rng: np.random.Generator):
    p = np.clip(np.asarray(p, dtype=float), 0.0, 1.0)
    est = rng.binomial(shots, p) / shots
    sigma = np.sqrt(est * (1.0 - est) / shots)
    return est, sigma


def run_sweep(seq: PulseSequence, cfg: ClusterConfig, opts: RunOptions | None = None) -> Trace:
    opts = opts or RunOptions()
    grid, x_si, unit = _sweep_axis(seq)
    p = run_points(seq, cfg, grid, opts)
    if opts.normalize:
        ref = run_points(seq.without_channel("N"), cfg, grid, opts)
        if np.any(ref <= 0):
            raise engine.EngineError("reference trace vanishes; cannot normalize")
        p = np.clip(p / ref, 0.0, 1.0)
    sigma = None
    seed = opts.seed
    if opts.shots:
        p, sigma = add_shot_noise(p, opts.shots, np.random.default_rng(opts.seed))
        sigma = tuple(sigma)
    return Trace(x=tuple(x_si), p0=tuple(p), unit=unit, seq=seq.name, cfg_hash=cfg.fingerprint(),
                 seed=seed, sigma=sigma)


# ---- interferometric readout ----------------------------------------------

def fringe_fit(alpha, p0, sigma_p: float | None = None):
    """Fit P0(alpha) = c0 + A cos(alpha - phi) by linear least squares.

    Returns ``(phi, sigma_phi, amplitude)``.  ``sigma_phi`` propagates the
    known point scatter ``sigma_p`` when given, otherwise the residual
    scatter; it is infinite when the fringe has no contrast.
    """
    alpha = np.asarray(alpha, dtype=float)
    y = np.asarray(p0, dtype=float)
    A = np.column_stack([np.ones_like(alpha), np.cos(alpha), np.sin(alpha)])
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    phi = math.atan2(coef[2], coef[1])
    amp = math.hypot(coef[1], coef[2])
    dof = len(y) - 3
    if dof <= 0:
        return phi, 0.0, amp
    s2 = sigma_p**2 if sigma_p else float(np.sum((A @ coef - y) ** 2)) / dof
    cov = np.linalg.pinv(A.T @ A) * s2
    # gradient of atan2(c2, c1)
    g = np.array([0.0, -coef[2], coef[1]]) / max(amp**2, 1e-300)
    sig = math.sqrt(max(float(g @ cov @ g), 0.0)) if amp > 1e-12 else math.inf
    return phi, sig, amp


def fringe_phase(alpha, p0) -> float:
    return fringe_fit(alpha, p0)[0]


def _wrap(x: float) -> float:
    w = math.remainder(x, 2 * math.pi)
    return math.pi if w == -math.pi else w


def idse_fringes(cfg: ClusterConfig, tau: float, opts: RunOptions | None = None,
                 count: int = 25, t_init: float | None = None):
    """Noise-free D and U fringes at free-precession time ``tau``: (alpha_rad, P_D, P_U)."""
    opts = opts or RunOptions()
    out = []
    for name in ("IDSE_D", "IDSE_U"):
        seq = builtin(name, tau=tau, count=count, t_init=t_init)
        grid, x_si, _ = _sweep_axis(seq)
        out.append(run_points(seq, cfg, grid, opts))
    return x_si, out[0], out[1]


def idse_delta_pol(cfg: ClusterConfig, tau: float, opts: RunOptions | None = None,
                   count: int = 25, t_init: float | None = None) -> float:
    """D minus U fringe-phase difference at free-precession time ``tau``."""
    alpha, pd, pu = idse_fringes(cfg, tau, opts, count, t_init)
    # the fringe maximum sits at alpha equal to the accumulated NV phase
    return _wrap(fringe_phase(alpha, pd) - fringe_phase(alpha, pu))


def delta_pol_trace(cfg: ClusterConfig, taus, opts: RunOptions | None = None,
                    count: int = 25, t_init: float | None = None, noise: float = 0.0,
                    seed: int = 0, fringes=None) -> Trace:
    """IDSE phase difference against free-precession time.

    With ``noise`` > 0 (a P0 standard deviation) or ``opts.shots`` set, every
    fringe point is perturbed before the phases are extracted, and each
    delta_pol value carries the propagated fringe-fit uncertainty.
    ``fringes`` may hold precomputed ``idse_fringes`` results, one per tau.
    """
    opts = opts or RunOptions()
    taus = np.asarray(taus, dtype=float)
    if fringes is None:
        clean = replace(opts, shots=None)
        fringes = [idse_fringes(cfg, t, clean, count, t_init) for t in taus]
    noisy = noise > 0 or bool(opts.shots)
    rng = np.random.default_rng(seed if noise > 0 else opts.seed)
    vals, sig = [], []
    for alpha, pd, pu in fringes:
        phis = []
        for p in (pd, pu):
            sp = None
            if opts.shots:
                p, _ = add_shot_noise(p, opts.shots, rng)
            elif noise > 0:
                p = p + rng.normal(0.0, noise, len(p))
                sp = noise
            phis.append(fringe_fit(alpha, p, sp))
        vals.append(_wrap(phis[0][0] - phis[1][0]))
        sig.append(math.hypot(phis[0][1], phis[1][1]))
    sigma = None
    out_seed = seed if noise > 0 else opts.seed
    if noisy:
        cap = 2 * math.pi
        sigma = tuple(min(s, cap) if math.isfinite(s) else cap for s in sig)
    return Trace(x=tuple(taus), p0=tuple(vals), unit="s", seq="DPOL", cfg_hash=cfg.fingerprint(),
                 seed=out_seed, sigma=sigma, quantity="delta_pol")
