"""Least-squares fitting, information-criterion model selection and coupling estimates."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import optimize, stats

from . import models
from .sequence.trace import Trace

DEFAULT_STARTS = 32
DELTA_RANGE = (1e5, 5e6)      # |delta| bounds for cluster fits, Hz
OMEGA_RANGE = (1e4, 1e7)      # search interval for flip-flop couplings, Hz


class FitError(ValueError):
    pass


class InconsistentDataError(FitError):
    def __init__(self, message: str, residuals):
        self.residuals = list(residuals)
        res = ", ".join(f"{r:+.3g}" for r in self.residuals)
        super().__init__(f"{message}; normalised residuals at best fit: [{res}]")


@dataclass(frozen=True)
class CurveModel:
    """A parametric curve family.

    ``func(x, theta)`` evaluates the model; ``jac(x, theta)`` (optional)
    returns d func / d theta with shape (len(x), k).  Periodic models have
    their residuals wrapped to (-pi, pi].
    """

    name: str
    param_names: tuple[str, ...]
    func: Callable
    jac: Callable | None = None
    periodic: bool = False

    @property
    def k(self) -> int:
        return len(self.param_names)


@dataclass(frozen=True)
class FitResult:
    model: str
    param_names: tuple[str, ...]
    params: tuple[float, ...]
    sigma: tuple[float, ...]
    rss: float
    n_points: int
    converged: bool
    unreliable: bool
    seed: int
    n_starts: int
    start_index: int
    fixed: dict = field(default_factory=dict)

    @property
    def k(self) -> int:
        return len(self.params)

    @property
    def aic(self) -> float:
        return aic(self)

    def value(self, name: str) -> float:
        if name in self.fixed:
            return self.fixed[name]
        return self.params[self.param_names.index(name)]

    def error(self, name: str) -> float:
        if name in self.fixed:
            return 0.0
        return self.sigma[self.param_names.index(name)]

    def as_dict(self) -> dict:
        return {
            "model": self.model,
            "k": self.k,
            "params": dict(zip(self.param_names, self.params)),
            "sigma": dict(zip(self.param_names, self.sigma)),
            "fixed": dict(self.fixed),
            "rss": self.rss,
            "n_points": self.n_points,
            "aic": self.aic,
            "converged": self.converged,
            "unreliable": self.unreliable,
            "seed": self.seed,
            "n_starts": self.n_starts,
            "start_index": self.start_index,
        }


@dataclass(frozen=True)
class ModelChoice:
    fits: tuple[FitResult, ...]
    weights: tuple[float, ...]
    selected: int
    criterion: str = "aic"

    @property
    def best(self) -> FitResult:
        return self.fits[self.selected]

    @property
    def flagged(self) -> tuple[int, ...]:
        return tuple(i for i, f in enumerate(self.fits) if not f.converged)

    def as_dict(self) -> dict:
        return {
            "criterion": self.criterion,
            "weights": list(self.weights),
            "selected": self.selected,
            "flagged": list(self.flagged),
            "fits": [f.as_dict() for f in self.fits],
        }


def to_json(obj) -> str:
    return json.dumps(obj.as_dict(), sort_keys=True, allow_nan=False, indent=2) + "\n"


# ---- information criteria -------------------------------------------------

def aic(fit: FitResult) -> float:
    """Gaussian-residual AIC: n ln(rss / n) + 2k."""
    n = fit.n_points
    rss = max(fit.rss, np.finfo(float).tiny)
    return n * math.log(rss / n) + 2 * fit.k


def aicc(fit: FitResult) -> float:
    n, k = fit.n_points, fit.k
    if n <= k + 1:
        raise FitError(f"AICc needs n > k + 1 (n={n}, k={k})")
    return aic(fit) + 2 * k * (k + 1) / (n - k - 1)


def akaike_weights(scores) -> np.ndarray:
    s = np.asarray(scores, dtype=float)
    w = np.exp(-(s - s.min()) / 2.0)
    return w / w.sum()


def model_select(fits, corrected: bool = False) -> ModelChoice:
    fits = tuple(fits)
    if not fits:
        raise FitError("need at least one candidate fit")
    score = aicc if corrected else aic
    w = akaike_weights([score(f) for f in fits])
    top = w.max()
    # parsimony on ties
    tied = [i for i in range(len(fits)) if abs(w[i] - top) <= 1e-12]
    sel = min(tied, key=lambda i: (fits[i].k, i))
    return ModelChoice(fits, tuple(float(x) for x in w), sel, "aicc" if corrected else "aic")


# ---- generic least squares ------------------------------------------------

def numeric_jacobian(model: CurveModel, x, theta, rel_step: float = 1e-6) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    cols = []
    for j in range(len(theta)):
        h = rel_step * max(abs(theta[j]), 1e-3)
        up, dn = theta.copy(), theta.copy()
        up[j] += h
        dn[j] -= h
        diff = np.asarray(model.func(x, up)) - np.asarray(model.func(x, dn))
        if model.periodic:
            diff = models.wrap_phase(diff)
        cols.append(diff / (2 * h))
    return np.column_stack(cols)


def jacobian_mismatch(model: CurveModel, x, theta) -> float:
    """Largest relative difference between analytic and central-difference Jacobians."""
    if model.jac is None:
        raise FitError(f"model {model.name} has no analytic Jacobian")
    a = np.asarray(model.jac(x, theta))
    n = numeric_jacobian(model, x, theta)
    scale = np.maximum(np.abs(a).max(axis=0), 1e-300)
    return float(np.max(np.abs(a - n) / scale))


def _unpack(data):
    if isinstance(data, Trace):
        sig = None if data.sigma is None else np.asarray(data.sigma)
        return data.xs, data.values, sig
    if len(data) == 2:
        x, y = data
        return np.asarray(x), np.asarray(y, dtype=float), None
    x, y, s = data
    return np.asarray(x), np.asarray(y, dtype=float), (None if s is None else np.asarray(s, dtype=float))


@dataclass
class _Solution:
    x: np.ndarray
    jac: np.ndarray
    status: int


def _to_box(u, lo, hi):
    """Map unconstrained u to [lo, hi] (sine map where both bounds are finite)."""
    th = np.array(u, dtype=float)
    d = np.ones_like(th)
    both = np.isfinite(lo) & np.isfinite(hi)
    low = np.isfinite(lo) & ~np.isfinite(hi)
    high = ~np.isfinite(lo) & np.isfinite(hi)
    th[both] = lo[both] + (hi[both] - lo[both]) * (1 + np.sin(u[both])) / 2
    d[both] = (hi[both] - lo[both]) * np.cos(u[both]) / 2
    th[low] = lo[low] - 1 + np.sqrt(u[low] ** 2 + 1)
    d[low] = u[low] / np.sqrt(u[low] ** 2 + 1)
    th[high] = hi[high] + 1 - np.sqrt(u[high] ** 2 + 1)
    d[high] = -u[high] / np.sqrt(u[high] ** 2 + 1)
    return th, d


def _from_box(th, lo, hi):
    u = np.array(th, dtype=float)
    both = np.isfinite(lo) & np.isfinite(hi)
    low = np.isfinite(lo) & ~np.isfinite(hi)
    high = ~np.isfinite(lo) & np.isfinite(hi)
    span = np.where(both, hi - lo, 1.0)
    u[both] = np.arcsin(np.clip(2 * (th[both] - lo[both]) / span[both] - 1, -1, 1))
    u[low] = np.sqrt(np.maximum(th[low] - lo[low] + 1, 1) ** 2 - 1)
    u[high] = np.sqrt(np.maximum(hi[high] - th[high] + 1, 1) ** 2 - 1)
    return u


def _bounded_lm(resid, jac, t0, lo, hi, nfev):
    """Levenberg-Marquardt (MINPACK) on box-transformed parameters."""
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    u0 = _from_box(np.clip(np.asarray(t0, dtype=float), lo, hi), lo, hi)
    if np.all(np.isfinite(lo) & np.isfinite(hi)):
        mid, half = (hi + lo) / 2, (hi - lo) / 2

        def box(u):
            return mid + half * np.sin(u), half * np.cos(u)
    else:
        def box(u):
            return _to_box(u, lo, hi)

    def f(u):
        return resid(box(u)[0])

    jf = "2-point"
    if jac is not None:
        def jf(u):
            th, d = box(u)
            return jac(th) * d[None, :]

    try:
        sol = optimize.least_squares(f, u0, jac=jf, method="lm", max_nfev=nfev,
                                     xtol=1e-12, ftol=1e-12, gtol=1e-12)
    except (ValueError, np.linalg.LinAlgError):
        return None
    th = np.clip(box(sol.x)[0], lo, hi)
    if not np.all(np.isfinite(th)):
        return None
    J = jac(th) if jac is not None else optimize.approx_fprime(th, resid)
    return _Solution(th, np.atleast_2d(J), sol.status)


def fit_curve(model: CurveModel, data, start=None, bounds=None, *, n_starts: int = DEFAULT_STARTS,
              seed: int = 0, sampler: Callable | None = None, max_nfev: int = 2000,
              use_sigma: bool = False, extra_starts=(), screen_nfev: int | None = None,
              polish_top: int = 4) -> FitResult:
    """Bounded damped least squares with seeded multi-start; best RSS wins.

    ``sampler(rng, i)`` may return ``(theta0, lo, hi)`` to vary both the start
    and the box per restart (used for sign-split coupling ranges).
    ``extra_starts`` are further ``(theta0, lo, hi)`` triples tried after the
    random ones.  With ``screen_nfev`` every start first gets that many
    evaluations and only the ``polish_top`` best are run to convergence.
    When ``use_sigma`` is set residuals are weighted by the data's sigma.
    """
    x, y, sig = _unpack(data)
    n = len(y)
    k = model.k
    if n <= k:
        raise FitError(f"need more points than parameters (n={n}, k={k})")
    w = 1.0 / sig if (use_sigma and sig is not None) else np.ones(n)
    if np.any(~np.isfinite(w)):
        raise FitError("sigma must be positive")
    if bounds is None:
        bounds = (np.full(k, -np.inf), np.full(k, np.inf))
    lo0, hi0 = (np.asarray(b, dtype=float) for b in bounds)
    rng = np.random.default_rng(seed)

    # periodic residuals use the chord 2 sin(r/2): smooth, and equal to r near zero
    def raw(theta):
        return np.asarray(model.func(x, theta)) - y

    def resid(theta):
        r = raw(theta)
        if model.periodic:
            r = 2.0 * np.sin(r / 2.0)
        return r * w

    jac = None
    if model.jac is not None:
        def jac(theta):
            J = np.asarray(model.jac(x, theta))
            if model.periodic:
                J = J * np.cos(raw(theta) / 2.0)[:, None]
            return J * w[:, None]

    def rss_of(theta):
        r = raw(theta)
        if model.periodic:
            r = models.wrap_phase(r)
        return float(np.sum((r * w) ** 2))

    starts = []
    if start is not None:
        s0 = np.asarray(start, dtype=float)
        if not (np.all(np.isfinite(s0)) and np.all(s0 >= lo0) and np.all(s0 <= hi0)):
            raise FitError("start must be finite and inside the bounds")
        starts.append((s0, lo0, hi0))
    for i in range(len(starts), max(n_starts, 1)):
        if sampler is not None:
            starts.append(sampler(rng, i))
        else:
            lo_f = np.where(np.isfinite(lo0), lo0, -1.0)
            hi_f = np.where(np.isfinite(hi0), hi0, 1.0)
            starts.append((rng.uniform(lo_f, hi_f), lo0, hi0))

    def run(t0, lo, hi, nfev):
        return _bounded_lm(resid, jac, t0, lo, hi, nfev)

    n_random = len(starts)
    starts += [tuple(np.asarray(v, dtype=float) for v in st) for st in extra_starts]
    order = list(range(len(starts)))
    screened: dict = {}
    if screen_nfev is not None and n_random > polish_top:
        scored = []
        for i in range(n_random):
            sol = run(*starts[i], screen_nfev)
            if sol is not None:
                scored.append((rss_of(sol.x), i, sol.x))
        scored.sort(key=lambda t: (t[0], t[1]))
        screened = {i: x0 for _, i, x0 in scored[:polish_top]}
        order = sorted(screened) + list(range(n_random, len(starts)))
    best = None
    for i in order:
        t0, lo, hi = starts[i]
        sol = run(screened[i] if i in screened else t0, lo, hi, max_nfev)
        if sol is None:
            continue
        rss = rss_of(sol.x)
        if best is None or rss < best[0] - 1e-15 * max(best[0], 1e-300):
            best = (rss, i, sol)
    if best is None:
        raise FitError("no start produced a finite fit")
    rss, idx, sol = best
    J = sol.jac
    JtJ = J.T @ J
    unreliable = False
    try:
        cond = np.linalg.cond(JtJ)
    except np.linalg.LinAlgError:
        cond = np.inf
    if not np.isfinite(cond) or cond > 1e14:
        unreliable = True
        cov = np.linalg.pinv(JtJ)
    else:
        cov = np.linalg.inv(JtJ)
    scale = rss / (n - k)
    err = np.sqrt(np.clip(np.diag(cov) * scale, 0.0, None))
    if not np.all(np.isfinite(err)):
        err = np.where(np.isfinite(err), err, 0.0)
        unreliable = True
    return FitResult(model=model.name, param_names=model.param_names,
                     params=tuple(float(v) for v in sol.x), sigma=tuple(float(e) for e in err),
                     rss=rss, n_points=n, converged=bool(sol.status > 0), unreliable=unreliable,
                     seed=seed, n_starts=len(starts), start_index=idx)


# ---- model families -------------------------------------------------------

def _dse_func(x, th):
    return models.dse_signal(x, th[0], th[1])


def _dse_jac(x, th):
    phi, t = th
    env = np.exp(-(x / t) ** 2)
    d_phi = 0.5 * env * np.cos(phi)
    d_t = 0.5 * env * (1 + np.sin(phi)) * 2 * x**2 / t**3
    return np.column_stack([d_phi, d_t])


DSE_MODEL = CurveModel("dse", ("phi", "t_dse"), _dse_func, _dse_jac)


def fit_dse(data, *, n_starts: int = 8, seed: int = 0) -> FitResult:
    """Static phase and dephasing time from a directional-echo trace.

    Only sin(phi) is observable, so phi is bounded to [-pi/2, pi/2].
    """
    x, y, sig = _unpack(data)
    span = float(np.max(np.abs(x))) or 1e-6
    lo = np.array([-math.pi / 2, 1e-9])
    hi = np.array([math.pi / 2, 1e-3])
    start = np.clip([0.0, 0.7 * span], lo, hi)
    return fit_curve(DSE_MODEL, (x, y, sig), start, (lo, hi), n_starts=n_starts, seed=seed,
                     use_sigma=sig is not None and bool(np.all(sig > 0)))

HH_NAMES = ("a", "nu", "t_osc", "t_lock", "c")


def _hh_func(x, th):
    return models.hh_model(x, *th)


def _hh_jac(x, th):
    a, nu, to, tl, c = th
    cs = np.cos(2 * np.pi * nu * x)
    sn = np.sin(2 * np.pi * nu * x)
    eo = np.exp(-x / to)
    el = np.exp(-x / tl)
    return np.column_stack([
        cs * eo - el,
        -a * sn * eo * 2 * np.pi * x,
        a * cs * eo * x / to**2,
        (1 - a - c) * el * x / tl**2,
        1 - el,
    ])


HH_MODEL = CurveModel("hh", HH_NAMES, _hh_func, _hh_jac)


def idse_model(n_spins: int, n_sets: int = 1) -> CurveModel:
    """Joint IDSE phase model: shared couplings, one polarization per spin and data set.

    ``x`` is an (N, 2) array of (tau, set index).  Parameters are
    ``delta_1..n`` followed by ``p_1..n`` for set 0, then set 1, ...
    """
    names = tuple(f"delta_{i + 1}" for i in range(n_spins))
    for s in range(n_sets):
        suffix = "'" * s
        names += tuple(f"p_{i + 1}{suffix}" for i in range(n_spins))

    def parts(x, th):
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            tau, grp = x, np.zeros(len(x), dtype=int)
        else:
            tau, grp = x[:, 0], x[:, 1].astype(int)
        th = np.asarray(th, dtype=float)
        d = th[:n_spins]
        pmat = th[n_spins:].reshape(n_sets, n_spins)[grp].T       # (n, N)
        ang = 2 * np.pi * d[:, None] * tau[None, :]
        return tau, grp, pmat, np.sin(ang), np.cos(ang)

    def func(x, th):
        _, _, pmat, sn, cs = parts(x, th)
        return models.wrap_phase(np.sum(2 * np.arctan2(pmat * sn, cs), axis=0))

    def jac(x, th):
        tau, grp, pmat, sn, cs = parts(x, th)
        den = cs * cs + pmat * pmat * sn * sn
        den = np.where(den == 0, np.finfo(float).tiny, den)
        J = np.zeros((len(tau), n_spins * (1 + n_sets)))
        J[:, :n_spins] = (2 * pmat / den * 2 * np.pi * tau[None, :]).T
        dp = (2 * sn * cs / den).T                                   # (N, n)
        rows = np.arange(len(tau))
        for i in range(n_spins):
            J[rows, n_spins * (1 + grp) + i] = dp[:, i]
        return J

    kind = "idse" if n_sets == 1 else f"idse{n_sets}"
    return CurveModel(f"{kind}_n{n_spins}", names, func, jac, periodic=True)


def _idse_sampler(n_spins: int, n_sets: int):
    lo_d, hi_d = DELTA_RANGE

    def sample(rng, i):
        signs = rng.choice([-1.0, 1.0], size=n_spins)
        mags = np.exp(rng.uniform(math.log(lo_d), math.log(hi_d), n_spins))
        ps = rng.uniform(0.0, 1.0, n_spins * n_sets)
        lo = np.concatenate([np.where(signs > 0, lo_d, -hi_d), np.zeros(n_spins * n_sets)])
        hi = np.concatenate([np.where(signs > 0, hi_d, -lo_d), np.ones(n_spins * n_sets)])
        return np.concatenate([signs * mags, ps]), lo, hi

    return sample


def _spin_box(deltas, n_sets):
    lo_d, hi_d = DELTA_RANGE
    d = np.asarray(deltas)
    n = len(d)
    lo = np.concatenate([np.where(d > 0, lo_d, -hi_d), np.zeros(n * n_sets)])
    hi = np.concatenate([np.where(d > 0, hi_d, -lo_d), np.ones(n * n_sets)])
    return lo, hi


def _pack(spins, n_sets):
    """(delta, [p per set]) list -> parameter vector."""
    d = [sp[0] for sp in spins]
    ps = [sp[1][s] for s in range(n_sets) for sp in spins]
    return np.array(d + ps, dtype=float)


def _unpack_spins(theta, n, n_sets):
    return [(theta[i], [theta[n * (1 + s) + i] for s in range(n_sets)]) for i in range(n)]


class _GreedySeeder:
    """Builds cluster fits one spin at a time: grid search for each new spin
    against the residual of the others, then a joint polish."""

    DELTA_GRID = 1000     # per sign
    P_GRID = 25

    def __init__(self, tau, grp, y, n_sets, w):
        self.tau, self.grp, self.y, self.n_sets, self.w = tau, grp, y, n_sets, w
        lo_d, hi_d = DELTA_RANGE
        mags = np.linspace(lo_d, hi_d, self.DELTA_GRID)
        self.deltas = np.concatenate([-mags[::-1], mags])
        # denser near zero, where weak spins hide
        self.ps = np.r_[0.0, np.geomspace(0.004, 1.0, self.P_GRID - 1)]
        th = 2 * np.pi * self.deltas[:, None] * tau[None, :]
        s, c = np.sin(th), np.cos(th)
        # per (delta, p, point) single-spin phase, kept as cos/sin for fast shifting
        single = 2 * np.arctan2(self.ps[None, :, None] * s[:, None, :], c[:, None, :])
        self.cos1, self.sin1 = np.cos(single), np.sin(single)
        self.w2 = w**2

    def _base(self, spins):
        out = np.zeros(len(self.tau))
        for s in range(self.n_sets):
            m = self.grp == s
            if spins:
                out[m] = models.idse_phase(self.tau[m], [sp[0] for sp in spins],
                                           [sp[1][s] for sp in spins])
        return out

    def candidates(self, spins, top: int = 3):
        off = self._base(spins) - self.y
        # chord cost 4 sin^2(r/2) = 2 (1 - cos r) with r = single + off
        cos_r = self.cos1 * np.cos(off) - self.sin1 * np.sin(off)
        cost = 2 * (1 - cos_r) * self.w2
        total = np.zeros(len(self.deltas))
        best_p = np.zeros((len(self.deltas), self.n_sets))
        for s in range(self.n_sets):
            cs = cost[:, :, self.grp == s].sum(axis=2)
            j = np.argmin(cs, axis=1)
            total += cs[np.arange(len(self.deltas)), j]
            best_p[:, s] = self.ps[j]
        # best local minima of the profile
        interior = np.r_[False, (total[1:-1] <= total[:-2]) & (total[1:-1] <= total[2:]), False]
        idx = [i for i in np.argsort(total) if interior[i] or i in (0, len(total) - 1)][:top]
        return [(self.deltas[i], list(best_p[i])) for i in idx]

    def polish(self, spins):
        n = len(spins)
        model = idse_model(n, self.n_sets)
        theta0 = _pack(spins, self.n_sets)
        lo, hi = _spin_box(theta0[:n], self.n_sets)
        x = np.column_stack([self.tau, self.grp])

        def resid(th):
            return 2 * np.sin((model.func(x, th) - self.y) / 2) * self.w

        def jac(th):
            r = model.func(x, th) - self.y
            return model.jac(x, th) * (np.cos(r / 2) * self.w)[:, None]

        sol = _bounded_lm(resid, jac, theta0, lo, hi, 500)
        if sol is None:
            return spins, math.inf
        r = models.wrap_phase(model.func(x, sol.x) - self.y) * self.w
        return _unpack_spins(sol.x, n, self.n_sets), float(np.sum(r**2))

    def grow(self, spins, n_target, beam: int = 3):
        """Add spins until ``n_target``, keeping the ``beam`` best partial
        clusters at each size.  Returns (spins, rss) pairs, best first."""
        front = [(spins, None)]
        while len(front[0][0]) < n_target:
            trials = [self.polish(sp + [c]) for sp, _ in front for c in self.candidates(sp)]
            trials.sort(key=lambda t: t[1])
            front = []
            for t in trials:
                key = sorted(round(d) for d, _ in t[0])
                if all(sorted(round(d) for d, _ in f[0]) != key for f in front):
                    front.append(t)
                if len(front) == beam:
                    break
        return front

    def backfit(self, spins, rss, rounds: int = 2):
        for _ in range(rounds):
            improved = False
            for i in range(len(spins)):
                rest = spins[:i] + spins[i + 1:]
                for c in self.candidates(rest):
                    trial, trss = self.polish(rest + [c])
                    if trss < rss * (1 - 1e-9):
                        spins, rss, improved = trial, trss, True
            if not improved:
                break
        return spins, rss


def _stack(datasets):
    xs, ys, ss = [], [], []
    weighted = False
    for s, d in enumerate(datasets):
        tau, y, sig = _unpack(d)
        xs.append(np.column_stack([tau, np.full(len(tau), s)]))
        ys.append(y)
        weighted |= sig is not None
        ss.append(np.ones(len(y)) if sig is None else sig)
    if weighted and any(isinstance(d, Trace) and d.sigma is None for d in datasets):
        raise FitError("either all or none of the data sets must carry sigma")
    return np.vstack(xs), np.concatenate(ys), np.concatenate(ss), weighted


def fit_idse(datasets, n_spins: int, *, n_starts: int = DEFAULT_STARTS, seed: int = 0,
             init: FitResult | None = None) -> FitResult:
    """Fit one or more delta_pol(tau) curves that share their couplings.

    ``datasets`` is a list of Traces (or (tau, delta_pol) pairs).  Besides
    ``n_starts`` random restarts, a greedy spin-by-spin grid search (seeded
    from ``init``, a smaller-cluster fit, when given) supplies starts.  Spins
    in the result are ordered by decreasing |delta|.
    """
    x, y, sig, weighted = _stack(datasets)
    n_sets = len(datasets)
    model = idse_model(n_spins, n_sets)
    seeder = _GreedySeeder(x[:, 0], x[:, 1].astype(int), y, n_sets, 1.0 / sig)
    seeds = []
    bases = [[]]
    if init is not None:
        m = (len(init.params)) // (1 + n_sets)
        if m <= n_spins:
            bases.append(_unpack_spins(np.asarray(init.params), m, n_sets))
    for base in bases:
        front = seeder.grow(list(base), n_spins)
        spins, rss = front[0]
        if rss is None:
            spins, rss = seeder.polish(spins)
        front[0] = seeder.backfit(spins, rss)
        for spins, _ in front:
            theta = _pack(spins, n_sets)
            seeds.append((theta, *_spin_box(theta[:n_spins], n_sets)))
    res = fit_curve(model, (x, y, sig), n_starts=n_starts, seed=seed, use_sigma=weighted,
                    sampler=_idse_sampler(n_spins, n_sets), extra_starts=seeds,
                    screen_nfev=60, polish_top=8)
    return _sort_spins(res, n_spins, n_sets)


def _sort_spins(res: FitResult, n: int, n_sets: int) -> FitResult:
    order = np.argsort([-abs(d) for d in res.params[:n]], kind="stable")
    idx = list(order)
    for s in range(n_sets):
        idx += [n * (1 + s) + i for i in order]
    from dataclasses import replace

    return replace(res, params=tuple(res.params[i] for i in idx),
                   sigma=tuple(res.sigma[i] for i in idx))


def select_cluster_size(datasets, sizes=(1, 2, 3, 4), *, corrected: bool = True,
                        n_starts: int = DEFAULT_STARTS, seed: int = 0) -> ModelChoice:
    fits = []
    for n in sorted(sizes):
        prev = fits[-1] if fits else None
        fits.append(fit_idse(datasets, n, n_starts=n_starts, seed=seed, init=prev))
    return model_select(fits, corrected=corrected)


# ---- Hartmann-Hahn traces -------------------------------------------------

def _dominant_frequency(x, y) -> float:
    x = np.asarray(x)
    y = np.asarray(y) - np.mean(y)
    if len(x) < 4:
        return 1e6
    dt = (x[-1] - x[0]) / (len(x) - 1)
    pad = 8 * len(x)
    spec = np.abs(np.fft.rfft(y * np.hanning(len(y)), pad))
    freqs = np.fft.rfftfreq(pad, dt)
    spec[0] = 0
    return float(freqs[int(np.argmax(spec))]) or 1e6


HH_BOUNDS = (np.array([0.0, 1e4, 1e-8, 1e-8, 0.0]), np.array([1.0, 1e8, 1e-2, 1e3, 1.0]))


def fit_hh(data, fixed: dict | None = None, *, n_starts: int = 8, seed: int = 0) -> FitResult:
    """Fit the locked-frame exchange curve to a normalised contrast trace.

    ``fixed`` pins any of ``a, nu, t_osc, t_lock, c`` (e.g. ``t_lock`` and
    ``c`` for lossless simulations where the slow decay is absent).
    """
    fixed = dict(fixed or {})
    unknown = set(fixed) - set(HH_NAMES)
    if unknown:
        raise FitError(f"unknown HH parameters {sorted(unknown)}")
    x, y, sig = _unpack(data)
    free = [nm for nm in HH_NAMES if nm not in fixed]
    fi = [HH_NAMES.index(nm) for nm in free]

    def full(th):
        out = np.empty(5)
        for nm, v in fixed.items():
            out[HH_NAMES.index(nm)] = v
        out[fi] = th
        return out

    model = CurveModel("hh", tuple(free), lambda xx, th: _hh_func(xx, full(th)),
                       lambda xx, th: _hh_jac(xx, full(th))[:, fi])
    nu0 = _dominant_frequency(x, y)
    span = float(np.ptp(x)) or 1e-6
    guess = {"a": 0.5 * float(np.ptp(y)) or 0.1, "nu": nu0, "t_osc": span, "t_lock": 3 * span,
             "c": float(np.clip(np.mean(y[-max(1, len(y) // 5):]), 0, 1))}
    lo, hi = HH_BOUNDS[0][fi], HH_BOUNDS[1][fi]
    start = np.clip([guess[nm] for nm in free], lo, hi)

    def sampler(rng, i):
        t0 = start * np.exp(rng.normal(0.0, 0.3, len(start)))
        if "nu" in free:
            t0[free.index("nu")] = nu0 * (1 + 0.05 * rng.normal())
        return np.clip(t0, lo, hi), lo, hi

    res = fit_curve(model, (x, y, sig), start, (lo, hi), n_starts=n_starts, seed=seed,
                    sampler=sampler)
    from dataclasses import replace

    return replace(res, fixed=fixed)


@dataclass(frozen=True)
class Estimate:
    value: float
    sigma: float
    flag: str = ""

    def as_dict(self) -> dict:
        return {"value": self.value, "sigma": self.sigma, "flag": self.flag}


def hh_polarization(a_dplus, a_dminus, a_alt, sig_dplus=0.0, sig_dminus=0.0,
                    sig_alt=0.0) -> Estimate:
    """Locked-frame polarization from the three exchange amplitudes.

    A single shot with polarization p along the lock axis gives amplitudes
    ``a_alt (1 - p)`` and ``a_alt (1 + p)`` for the blocking and allowing
    directions, so ``p = 1 - min(a_dplus, a_dminus) / a_alt``.
    """
    if not a_alt > 0:
        raise FitError("alternating-lock amplitude must be positive")
    if a_dplus <= a_dminus:
        m, sm = a_dplus, sig_dplus
    else:
        m, sm = a_dminus, sig_dminus
    p = 1.0 - m / a_alt
    sigma = math.hypot(sm / a_alt, m * sig_alt / a_alt**2)
    return Estimate(p, sigma)


# ---- flip-flop coupling from polarization build-up --------------------------

@dataclass(frozen=True)
class OmegaEstimate(Estimate):
    chi2: float = 0.0
    residuals: tuple = ()

    def as_dict(self) -> dict:
        d = super().as_dict()
        d.update({"chi2": self.chi2, "residuals": list(self.residuals)})
        return d


def extract_omega(p_pairs, gamma_opt: float, t1_n: float, *, p_value: float = 1e-3) -> OmegaEstimate:
    """Invert the (oracle-corrected) build-up curve for the flip-flop coupling.

    ``p_pairs`` holds ``(t_init, p, sigma_p)`` triples.  Raises
    ``InconsistentDataError`` when no coupling in the search interval is
    compatible with the points at the ``p_value`` level.
    """
    pts = np.asarray(p_pairs, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 3 or len(pts) < 2:
        raise FitError("need at least two (t_init, p, sigma) points")
    t, p, s = pts.T
    if np.any(s <= 0):
        raise FitError("sigma must be positive")

    def curve(om):
        return np.atleast_1d(models.corrected_pumping_curve(t, om, gamma_opt, t1_n))

    def chi2(om):
        return float(np.sum(((curve(om) - p) / s) ** 2))

    limit = stats.chi2.ppf(1 - p_value, max(len(p) - 1, 1))
    chi0 = float(np.sum((p / s) ** 2))
    lo, hi = OMEGA_RANGE
    grid = np.geomspace(lo, hi, 241)
    vals = np.array([chi2(g) for g in grid])
    j = int(np.argmin(vals))
    if chi0 <= vals[j] and chi0 <= limit:
        return OmegaEstimate(0.0, 0.0, "boundary", chi0, tuple(-p / s))
    a = math.log(grid[max(j - 1, 0)])
    b = math.log(grid[min(j + 1, len(grid) - 1)])
    sol = optimize.minimize_scalar(lambda u: chi2(math.exp(u)), bounds=(a, b), method="bounded",
                                   options={"xatol": 1e-10})
    om = float(math.exp(sol.x))
    best = chi2(om)
    res = (curve(om) - p) / s
    if best > limit:
        raise InconsistentDataError(
            f"no coupling in [{lo:.0e}, {hi:.0e}] Hz matches the build-up points (chi2={best:.3g})",
            res)
    h = 1e-4 * om
    dp = (curve(om + h) - curve(om - h)) / (2 * h)
    info = float(np.sum((dp / s) ** 2))
    sigma = 1.0 / math.sqrt(info) if info > 0 else math.inf
    flag = "edge" if om <= lo * 1.0001 or om >= hi * 0.9999 else ""
    if not math.isfinite(sigma):
        sigma, flag = 0.0, "unconstrained"
    return OmegaEstimate(om, sigma, flag, best, tuple(float(r) for r in res))
